//! The neural mesh model, the background (clutter) model, feature-map
//! rendering and the foreground/background Gaussian likelihood.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::geometry::{project_vertices, CameraIntrinsics, CameraPose};
use crate::linalg;
use crate::mesh::TriangleMesh;
use crate::raster::{
    rasterize_projected, visible_from_buffer, FragmentBuffer, VisibleVertex, VISIBILITY_TOLERANCE,
};

/// A triangle mesh with one feature vector (and variance) per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralMesh {
    mesh: TriangleMesh,
    features: Vec<f64>,
    dim: usize,
    class_label: String,
    normalized: bool,
    sigmas: Vec<f64>,
}

impl NeuralMesh {
    /// `features` holds `vertex_count * dim` values, one row per vertex. With
    /// `normalized` set every row is rescaled to unit length.
    pub fn new(
        mesh: TriangleMesh,
        mut features: Vec<f64>,
        dim: usize,
        class_label: impl Into<String>,
        normalized: bool,
    ) -> Result<Self> {
        if dim == 0 || features.len() != mesh.vertex_count() * dim {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} feature values for {} vertices of dimension {dim}",
                features.len(),
                mesh.vertex_count()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "vertex features must be finite".into(),
            ));
        }
        if normalized {
            for (r, row) in features.chunks_mut(dim).enumerate() {
                if linalg::norm(row) == 0.0 {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "vertex {r} has a zero feature vector"
                    )));
                }
                linalg::normalize_in_place(row);
            }
        }
        let sigmas = vec![1.0; mesh.vertex_count()];
        Ok(Self {
            mesh,
            features,
            dim,
            class_label: class_label.into(),
            normalized,
            sigmas,
        })
    }

    /// Per-vertex standard deviations (all 1 unless set here).
    pub fn with_sigmas(mut self, sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() != self.mesh.vertex_count() {
            return Err(Error::DimensionMismatch(
                "one sigma per vertex required".into(),
            ));
        }
        if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(
                "vertex sigmas must be positive".into(),
            ));
        }
        self.sigmas = sigmas;
        Ok(self)
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn theta(&self, r: usize) -> &[f64] {
        &self.features[r * self.dim..(r + 1) * self.dim]
    }

    pub fn sigma(&self, r: usize) -> f64 {
        self.sigmas[r]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Overwrites one vertex feature, re-normalizing when the model is normalized.
    pub fn set_theta(&mut self, r: usize, value: &[f64]) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::DimensionMismatch("vertex feature length".into()));
        }
        let row = &mut self.features[r * self.dim..(r + 1) * self.dim];
        row.copy_from_slice(value);
        if self.normalized {
            linalg::normalize_in_place(row);
        }
        Ok(())
    }

    /// Permutes vertices and feature rows together.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mesh = self.mesh.permuted(order)?;
        let mut features = Vec::with_capacity(self.features.len());
        for &o in order {
            features.extend_from_slice(self.theta(o));
        }
        let sigmas = order.iter().map(|&o| self.sigmas[o]).collect();
        Ok(Self {
            mesh,
            features,
            dim: self.dim,
            class_label: self.class_label.clone(),
            normalized: self.normalized,
            sigmas,
        })
    }
}

/// Single-Gaussian clutter model `N(beta, sigma^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    beta: Vec<f64>,
    sigma: f64,
    normalized: bool,
}

impl BackgroundModel {
    pub fn new(mut beta: Vec<f64>, sigma: f64, normalized: bool) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "background mean must be non-empty and finite".into(),
            ));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "background sigma must be positive, got {sigma}"
            )));
        }
        if normalized {
            if linalg::norm(&beta) == 0.0 {
                return Err(Error::InvalidArgument(
                    "cannot normalize a zero background mean".into(),
                ));
            }
            linalg::normalize_in_place(&mut beta);
        }
        Ok(Self {
            beta,
            sigma,
            normalized,
        })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn set_beta(&mut self, value: &[f64]) -> Result<()> {
        if value.len() != self.beta.len() {
            return Err(Error::DimensionMismatch("background mean length".into()));
        }
        self.beta.copy_from_slice(value);
        if self.normalized {
            linalg::normalize_in_place(&mut self.beta);
        }
        Ok(())
    }
}

/// Output of [`render_feature_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    /// Rendered features; zero where nothing is covered.
    pub rendered: FeatureMap,
    /// Foreground pixels, i.e. exactly the covered fragments.
    pub fg_mask: Vec<bool>,
    /// Barycentric blend of the vertex variances on foreground pixels, 1 elsewhere.
    pub variance: Vec<f64>,
    pub fragment: FragmentBuffer,
    pub vertex_pixels: Vec<VisibleVertex>,
}

impl RenderResult {
    pub fn foreground_count(&self) -> usize {
        self.fg_mask.iter().filter(|&&m| m).count()
    }
}

/// Renders the model's vertex features under `pose`: every covered pixel gets
/// the perspective-correct barycentric blend of its face's three vertex
/// features (re-normalized for normalized models).
pub fn render_feature_map(
    model: &NeuralMesh,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    out_h: usize,
    out_w: usize,
) -> Result<RenderResult> {
    if intr.height != out_h || intr.width != out_w {
        return Err(Error::DimensionMismatch(alloc::format!(
            "requested {out_w}x{out_h} render but intrinsics describe {}x{}",
            intr.width,
            intr.height
        )));
    }
    let mesh = model.mesh();
    let proj = project_vertices(mesh.vertices(), pose, intr)?;
    let fragment = rasterize_projected(mesh, &proj, out_w, out_h);
    let vertex_pixels = visible_from_buffer(
        mesh,
        &proj,
        &fragment,
        VISIBILITY_TOLERANCE * mesh.diameter(),
    );

    let d = model.dim();
    let mut rendered = FeatureMap::zeros(out_h, out_w, d);
    let mut fg_mask = vec![false; out_h * out_w];
    let mut variance = vec![1.0; out_h * out_w];
    for (i, frag) in fragment.fragments().iter().enumerate() {
        let Some(frag) = frag else { continue };
        let face = mesh.faces()[frag.face];
        let out = rendered.pixel_mut(i);
        let mut var = 0.0;
        for (k, &v) in face.iter().enumerate() {
            let w = frag.bary[k];
            for (o, t) in out.iter_mut().zip(model.theta(v)) {
                *o += w * t;
            }
            var += w * model.sigma(v) * model.sigma(v);
        }
        if model.is_normalized() {
            linalg::normalize_in_place(out);
        }
        fg_mask[i] = true;
        variance[i] = var;
    }
    Ok(RenderResult {
        rendered,
        fg_mask,
        variance,
        fragment,
        vertex_pixels,
    })
}

/// How foreground features are matched to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Every visible vertex pairs its feature with the feature at its pixel.
    Vertex,
    /// Every covered pixel pairs its feature with the rendered feature there.
    Pixel,
}

/// `log N(x; mean, sigma^2 I)`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let var = sigma * sigma;
    -0.5 * x.len() as f64 * libm::log(2.0 * PI * var) - linalg::sq_dist(x, mean) / (2.0 * var)
}

fn gaussian_log_density_var(x: &[f64], mean: &[f64], var: f64) -> f64 {
    -0.5 * x.len() as f64 * libm::log(2.0 * PI * var) - linalg::sq_dist(x, mean) / (2.0 * var)
}

fn check_inputs(
    f: &FeatureMap,
    model: &NeuralMesh,
    render: &RenderResult,
    bg: &BackgroundModel,
) -> Result<()> {
    f.check_depth(model.dim())?;
    f.check_depth(bg.dim())?;
    f.check_shape(render.rendered.height(), render.rendered.width())
}

/// Foreground/background log-likelihood of `f` given a finished render.
pub fn log_likelihood_rendered(
    f: &FeatureMap,
    model: &NeuralMesh,
    render: &RenderResult,
    bg: &BackgroundModel,
    pairing: Pairing,
) -> Result<f64> {
    check_inputs(f, model, render, bg)?;
    let mut total = 0.0;
    match pairing {
        Pairing::Vertex => {
            for vv in &render.vertex_pixels {
                total += gaussian_log_density(
                    f.pixel(vv.pixel),
                    model.theta(vv.vertex),
                    model.sigma(vv.vertex),
                );
            }
        }
        Pairing::Pixel => {
            for i in (0..f.pixel_count()).filter(|&i| render.fg_mask[i]) {
                total += gaussian_log_density_var(
                    f.pixel(i),
                    render.rendered.pixel(i),
                    render.variance[i],
                );
            }
        }
    }
    for i in (0..f.pixel_count()).filter(|&i| !render.fg_mask[i]) {
        total += gaussian_log_density(f.pixel(i), bg.beta(), bg.sigma());
    }
    Ok(total)
}

/// Renders `model` under `pose` and evaluates the foreground/background
/// Gaussian log-likelihood of `f`, normalizers included.
pub fn log_likelihood(
    f: &FeatureMap,
    model: &NeuralMesh,
    pose: &CameraPose,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    pairing: Pairing,
) -> Result<f64> {
    let render = render_feature_map(model, pose, intr, f.height(), f.width())?;
    log_likelihood_rendered(f, model, &render, bg, pairing)
}

/// Per-pixel log-density under the rendered foreground; `-inf` off the foreground.
pub fn foreground_score_map(
    f: &FeatureMap,
    render: &RenderResult,
    model: &NeuralMesh,
) -> Result<Vec<f64>> {
    f.check_depth(model.dim())?;
    f.check_shape(render.rendered.height(), render.rendered.width())?;
    Ok((0..f.pixel_count())
        .map(|i| {
            if render.fg_mask[i] {
                gaussian_log_density_var(f.pixel(i), render.rendered.pixel(i), render.variance[i])
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect())
}

/// Per-pixel log-density under the background model, everywhere.
pub fn background_score_map(f: &FeatureMap, bg: &BackgroundModel) -> Result<Vec<f64>> {
    f.check_depth(bg.dim())?;
    Ok((0..f.pixel_count())
        .map(|i| gaussian_log_density(f.pixel(i), bg.beta(), bg.sigma()))
        .collect())
}
