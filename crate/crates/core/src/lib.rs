//! Neural mesh models for render-and-compare 3D pose estimation.
//!
//! A neural mesh is a triangle mesh whose vertices carry feature vectors
//! instead of colours. Rendering it under a camera pose produces a feature
//! map, and comparing that map against features extracted from an image
//! under a robust Gaussian likelihood yields a loss that can be minimized
//! over the pose.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the scene
//! harness and the command-line front-end live in the companion `nemo` crate.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod feature;
pub mod geometry;
pub mod inference;
pub mod mesh;
pub mod neural_mesh;
pub mod raster;
pub mod training;

mod linalg;

pub use error::{Error, Result};
pub use feature::FeatureMap;
pub use geometry::{
    geodesic_error, project_vertices, CameraIntrinsics, CameraPose, Projection, RotationMatrix,
};
pub use linalg::Vec3;
pub use mesh::TriangleMesh;
pub use neural_mesh::{BackgroundModel, NeuralMesh, Pairing, RenderResult};
pub use raster::{Fragment, FragmentBuffer};
