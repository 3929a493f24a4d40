//! One-dimensional loss sweeps around a ground-truth pose.

use std::fmt;
use std::str::FromStr;

use nemo_core::inference::{robust_log_likelihood, RobustConfig};
use nemo_core::{BackgroundModel, CameraIntrinsics, CameraPose, FeatureMap, NeuralMesh};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, HarnessResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseParameter {
    Azimuth,
    Elevation,
    Theta,
}

impl PoseParameter {
    pub fn index(self) -> usize {
        match self {
            Self::Azimuth => 0,
            Self::Elevation => 1,
            Self::Theta => 2,
        }
    }
}

impl fmt::Display for PoseParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Azimuth => "azimuth",
            Self::Elevation => "elevation",
            Self::Theta => "theta",
        })
    }
}

impl FromStr for PoseParameter {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "azimuth" | "az" => Ok(Self::Azimuth),
            "elevation" | "el" => Ok(Self::Elevation),
            "theta" => Ok(Self::Theta),
            _ => Err(HarnessError::Config(format!(
                "unknown pose parameter {s:?}"
            ))),
        }
    }
}

/// Sweep offsets `span * (2k / (steps - 1) - 1)`, `k = 0..steps`.
pub fn sweep_offsets(steps: usize, span: f64) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..steps)
            .map(|k| span * (2.0 * k as f64 / (steps - 1) as f64 - 1.0))
            .collect(),
    }
}

/// Negative robust log-likelihood along one pose parameter, others at the
/// ground truth. Returns `(parameter value, loss)` pairs; values are the raw
/// swept angles before canonicalization.
#[allow(clippy::too_many_arguments)]
pub fn loss_landscape_sweep(
    f: &FeatureMap,
    model: &NeuralMesh,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    gt: &CameraPose,
    parameter: PoseParameter,
    steps: usize,
    span: f64,
    cfg: &RobustConfig,
) -> HarnessResult<Vec<(f64, f64)>> {
    let p = parameter.index();
    sweep_offsets(steps, span)
        .into_iter()
        .map(|off| {
            let mut a = gt.angles();
            a[p] += off;
            let pose = gt.with_angles(a)?;
            let (ll, _) = robust_log_likelihood(f, model, &pose, bg, intr, cfg)?;
            Ok((a[p], -ll))
        })
        .collect()
}

/// Index of the smallest loss; the first wins ties.
pub fn argmin(curve: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &(_, l)) in curve.iter().enumerate() {
        if best.is_none_or(|b| l < curve[b].1) {
            best = Some(k);
        }
    }
    best
}
