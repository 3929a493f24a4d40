use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg;

/// Dense `height x width x depth` grid of feature vectors, row-major with the
/// channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, depth: usize) -> Self {
        Self {
            height,
            width,
            depth,
            data: vec![0.0; height * width * depth],
        }
    }

    pub fn from_vec(height: usize, width: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * depth {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} values for a {height}x{width}x{depth} map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature map contains non-finite values".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Feature vector at row-major pixel index `i`.
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.depth..(i + 1) * self.depth]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.depth..(i + 1) * self.depth]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }

    /// Rescales every feature vector to unit length (zero vectors stay zero).
    pub fn normalize(&mut self) {
        for px in self.data.chunks_mut(self.depth.max(1)) {
            linalg::normalize_in_place(px);
        }
    }

    pub(crate) fn check_depth(&self, depth: usize) -> Result<()> {
        if self.depth != depth {
            return Err(Error::DimensionMismatch(alloc::format!(
                "feature depth {} does not match model depth {depth}",
                self.depth
            )));
        }
        Ok(())
    }

    pub(crate) fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{}x{} feature map against a {width}x{height} lattice",
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}
