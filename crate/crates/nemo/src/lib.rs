//! Synthetic harness, file formats and command-line driver for neural mesh
//! pose estimation built on `nemo-core`.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod cli;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod landscape;
pub mod rng;
pub mod scene;
pub mod world;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] nemo_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl HarnessError {
    /// Process exit status: 1 for usage, configuration and file errors, 2
    /// for numeric failures at run time.
    pub fn exit_code(&self) -> i32 {
        use nemo_core::Error as E;
        match self {
            Self::Numeric(_) | Self::Generation(_) => 2,
            Self::Core(E::NonFinite(_) | E::BehindCamera { .. } | E::NotARotation { .. }) => 2,
            _ => 1,
        }
    }
}

pub type HarnessResult<T> = Result<T, HarnessError>;
