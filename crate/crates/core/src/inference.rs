//! Occlusion-aware pose estimation.
//!
//! Every foreground pixel may be explained either by the rendered object
//! (visible) or by the clutter model (occluded). The robust log-likelihood
//! takes, per pixel, the better of the two after adding the log prior of the
//! choice. Pose search evaluates this likelihood on a coarse grid of initial
//! poses and refines the best one by gradient descent on the three angles.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::geometry::{CameraIntrinsics, CameraPose, RotationMatrix};
use crate::linalg::{self, Vec3};
use crate::neural_mesh::{
    background_score_map, foreground_score_map, render_feature_map, BackgroundModel, NeuralMesh,
    RenderResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Central differences of the true loss, 6 renders per gradient.
    FiniteDifference,
    /// Differentiates the loss with each foreground pixel's face and
    /// occlusion state held fixed.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustConfig {
    /// Prior probability that a foreground pixel shows the object.
    pub prior_visible: f64,
    /// When off, every foreground pixel is forced to the object model and no
    /// prior terms are added.
    pub robust: bool,
    pub gradient: GradientMode,
    pub step: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    /// Maximum number of step halvings before an iteration gives up.
    pub max_halvings: usize,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            prior_visible: 0.5,
            robust: true,
            gradient: GradientMode::FiniteDifference,
            step: 0.05,
            max_iterations: 300,
            tolerance: 1e-6,
            fd_step: 1e-3,
            max_halvings: 8,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_visible > 0.0 && self.prior_visible < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "occlusion prior {} outside (0, 1)",
                self.prior_visible
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "step size must be positive, got {}",
                self.step
            )));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidArgument(
                "finite-difference step must be positive".into(),
            ));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(
                "tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclusionLabel {
    Background,
    Visible,
    Occluded,
}

impl OcclusionLabel {
    /// Grey level used when writing maps as images.
    pub fn gray(self) -> u8 {
        match self {
            OcclusionLabel::Background => 0,
            OcclusionLabel::Occluded => 128,
            OcclusionLabel::Visible => 255,
        }
    }
}

/// Per-pixel labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<OcclusionLabel>,
}

impl OcclusionMap {
    /// `z_i`: true exactly on visible foreground pixels.
    pub fn z(&self) -> Vec<bool> {
        self.labels
            .iter()
            .map(|&l| l == OcclusionLabel::Visible)
            .collect()
    }

    pub fn occluded_mask(&self) -> Vec<bool> {
        self.labels
            .iter()
            .map(|&l| l == OcclusionLabel::Occluded)
            .collect()
    }

    pub fn count(&self, label: OcclusionLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

fn labels_from_scores(
    render: &RenderResult,
    fg: &[f64],
    bg: &[f64],
    cfg: &RobustConfig,
) -> (f64, Vec<OcclusionLabel>) {
    let (lp1, lp0) = (
        libm::log(cfg.prior_visible),
        libm::log(1.0 - cfg.prior_visible),
    );
    let mut total = 0.0;
    let mut labels = Vec::with_capacity(fg.len());
    for i in 0..fg.len() {
        if !render.fg_mask[i] {
            total += bg[i];
            labels.push(OcclusionLabel::Background);
        } else if !cfg.robust {
            total += fg[i];
            labels.push(OcclusionLabel::Visible);
        } else {
            let (a, b) = (fg[i] + lp1, bg[i] + lp0);
            if a >= b {
                total += a;
                labels.push(OcclusionLabel::Visible);
            } else {
                total += b;
                labels.push(OcclusionLabel::Occluded);
            }
        }
    }
    (total, labels)
}

/// Robust log-likelihood of `f` against a finished render, with the
/// maximizing occlusion map. Ties go to the object.
pub fn robust_log_likelihood_rendered(
    f: &FeatureMap,
    model: &NeuralMesh,
    render: &RenderResult,
    bg: &BackgroundModel,
    cfg: &RobustConfig,
) -> Result<(f64, OcclusionMap)> {
    cfg.validate()?;
    let fg = foreground_score_map(f, render, model)?;
    let bgs = background_score_map(f, bg)?;
    let (total, labels) = labels_from_scores(render, &fg, &bgs, cfg);
    Ok((
        total,
        OcclusionMap {
            height: f.height(),
            width: f.width(),
            labels,
        },
    ))
}

/// Renders `model` under `pose` and evaluates the robust log-likelihood.
pub fn robust_log_likelihood(
    f: &FeatureMap,
    model: &NeuralMesh,
    pose: &CameraPose,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    cfg: &RobustConfig,
) -> Result<(f64, OcclusionMap)> {
    let render = render_feature_map(model, pose, intr, f.height(), f.width())?;
    robust_log_likelihood_rendered(f, model, &render, bg, cfg)
}

/// Occlusion map of the robust likelihood for a finished render.
pub fn infer_occlusion_map(
    f: &FeatureMap,
    render: &RenderResult,
    model: &NeuralMesh,
    bg: &BackgroundModel,
    cfg: &RobustConfig,
) -> Result<OcclusionMap> {
    Ok(robust_log_likelihood_rendered(f, model, render, bg, cfg)?.1)
}

/// Angular ranges of the initialization grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitBands {
    pub elevation: (f64, f64),
    pub theta: (f64, f64),
}

impl Default for InitBands {
    fn default() -> Self {
        Self {
            elevation: (-PI / 9.0, 2.0 * PI / 9.0),
            theta: (-PI / 6.0, PI / 6.0),
        }
    }
}

fn cell_centre((lo, hi): (f64, f64), n: usize, i: usize) -> f64 {
    lo + (hi - lo) * (i as f64 + 0.5) / n as f64
}

/// Cartesian grid of poses: azimuth at `k * 2pi / n_azim`, elevation and theta
/// at the cell centres of their bands. Order is azimuth-major, theta fastest.
pub fn sample_initial_poses_in(
    n_azim: usize,
    n_elev: usize,
    n_theta: usize,
    distance: f64,
    bands: &InitBands,
) -> Result<Vec<CameraPose>> {
    if n_azim == 0 || n_elev == 0 || n_theta == 0 {
        return Err(Error::InvalidArgument(
            "grid counts must be positive".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_azim * n_elev * n_theta);
    for a in 0..n_azim {
        let az = TAU * a as f64 / n_azim as f64;
        for e in 0..n_elev {
            let el = cell_centre(bands.elevation, n_elev, e);
            for t in 0..n_theta {
                out.push(CameraPose::new(
                    az,
                    el,
                    cell_centre(bands.theta, n_theta, t),
                    distance,
                )?);
            }
        }
    }
    Ok(out)
}

/// [`sample_initial_poses_in`] with the default bands.
pub fn sample_initial_poses(
    n_azim: usize,
    n_elev: usize,
    n_theta: usize,
    distance: f64,
) -> Result<Vec<CameraPose>> {
    sample_initial_poses_in(n_azim, n_elev, n_theta, distance, &InitBands::default())
}

/// Grid shape used for a given total number of initial poses.
pub fn init_grid_shape(count: usize) -> Option<(usize, usize, usize)> {
    match count {
        144 => Some((12, 4, 3)),
        72 => Some((12, 3, 2)),
        36 => Some((12, 3, 1)),
        12 => Some((12, 1, 1)),
        6 => Some((6, 1, 1)),
        1 => Some((1, 1, 1)),
        _ => None,
    }
}

/// Negative robust log-likelihood; a pose that puts the mesh behind the
/// camera costs `+inf`.
fn pose_loss(
    f: &FeatureMap,
    model: &NeuralMesh,
    pose: &CameraPose,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    cfg: &RobustConfig,
) -> Result<f64> {
    match robust_log_likelihood(f, model, pose, bg, intr, cfg) {
        Ok((ll, _)) => Ok(-ll),
        Err(Error::BehindCamera { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Index and loss of the initial pose with the lowest negative robust
/// log-likelihood; the first one wins ties.
pub fn select_best_init(
    f: &FeatureMap,
    model: &NeuralMesh,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    inits: &[CameraPose],
    cfg: &RobustConfig,
) -> Result<(usize, f64)> {
    if inits.is_empty() {
        return Err(Error::InvalidArgument("no initial poses".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (k, pose) in inits.iter().enumerate() {
        let loss = pose_loss(f, model, pose, bg, intr, cfg)?;
        if loss < best.1 {
            best = (k, loss);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: CameraPose,
    /// Negative robust log-likelihood at `pose`.
    pub loss: f64,
    pub iterations: usize,
    pub init_index: usize,
    pub subtype: usize,
    pub occlusion: OcclusionMap,
    /// Set when a non-finite loss stopped the descent early.
    pub aborted: bool,
}

/// World-space derivative of `R(az, el, theta) v` with respect to each angle.
fn rotation_jacobian(angles: [f64; 3], v: Vec3) -> [Vec3; 3] {
    let [az, el, th] = angles;
    let ry = RotationMatrix::rot_y(az);
    let rx = RotationMatrix::rot_x(el);
    let rz = RotationMatrix::rot_z(th);
    let (ex, ey, ez) = (
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    );
    let full = rz.compose(&rx).compose(&ry);
    let d_az = full.apply(ey.cross(v));
    let d_el = rz.apply(rx.apply(ex.cross(ry.apply(v))));
    let d_th = ez.cross(full.apply(v));
    [d_az, d_el, d_th]
}

/// A foreground pixel whose face and occlusion state are held fixed.
#[derive(Debug, Clone, Copy)]
struct FrozenPixel {
    pixel: usize,
    face: usize,
    variance: f64,
}

fn freeze(render: &RenderResult, occlusion: &OcclusionMap) -> Vec<FrozenPixel> {
    render
        .fragment
        .fragments()
        .iter()
        .enumerate()
        .filter_map(|(i, frag)| match frag {
            Some(fr) if occlusion.labels[i] == OcclusionLabel::Visible => Some(FrozenPixel {
                pixel: i,
                face: fr.face,
                variance: render.variance[i],
            }),
            _ => None,
        })
        .collect()
}

fn pixel_ray(intr: &CameraIntrinsics, width: usize, pixel: usize) -> Vec3 {
    let (x, y) = ((pixel % width) as f64 + 0.5, (pixel / width) as f64 + 0.5);
    Vec3::new((x - intr.cx) / intr.focal, (y - intr.cy) / intr.focal, 1.0)
}

/// Object part of the loss over frozen pixels, `sum |f - r|^2 / (2 var)`, and
/// optionally its gradient in the pose angles. The rendered feature `r` uses
/// the barycentrics of the pixel ray's intersection with the frozen face's
/// plane, which equal the perspective-correct fragment weights.
fn frozen_loss(
    f: &FeatureMap,
    model: &NeuralMesh,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    frozen: &[FrozenPixel],
    with_gradient: bool,
) -> (f64, [f64; 3]) {
    let angles = pose.angles();
    let rot = pose.rotation();
    let t = Vec3::new(0.0, 0.0, pose.distance());
    let verts = model.mesh().vertices();
    let d = model.dim();
    let mut loss = 0.0;
    let mut grad = [0.0; 3];
    let mut u = vec![0.0; d];
    let mut gu = vec![0.0; d];
    for fp in frozen {
        let face = model.mesh().faces()[fp.face];
        let x = face.map(|v| rot.apply(verts[v]) + t);
        let ray = pixel_ray(intr, f.width(), fp.pixel);
        let a = [
            ray.dot(x[1].cross(x[2])),
            ray.dot(x[2].cross(x[0])),
            ray.dot(x[0].cross(x[1])),
        ];
        let s = a[0] + a[1] + a[2];
        if s == 0.0 {
            continue;
        }
        let lam = a.map(|v| v / s);
        u.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..3 {
            u.iter_mut()
                .zip(model.theta(face[k]))
                .for_each(|(o, th)| *o += lam[k] * th);
        }
        let un = linalg::norm(&u);
        let r: Vec<f64> = if model.is_normalized() && un > 0.0 {
            u.iter().map(|v| v / un).collect()
        } else {
            u.clone()
        };
        let fi = f.pixel(fp.pixel);
        loss += linalg::sq_dist(fi, &r) / (2.0 * fp.variance);
        if !with_gradient {
            continue;
        }
        // dL/dr, then through the normalization to dL/du.
        let gr: Vec<f64> = r
            .iter()
            .zip(fi)
            .map(|(a, b)| (a - b) / fp.variance)
            .collect();
        if model.is_normalized() && un > 0.0 {
            let rg: f64 = r.iter().zip(&gr).map(|(a, b)| a * b).sum();
            for k in 0..d {
                gu[k] = (gr[k] - r[k] * rg) / un;
            }
        } else {
            gu.copy_from_slice(&gr);
        }
        let g_lam: [f64; 3] = core::array::from_fn(|k| {
            gu.iter()
                .zip(model.theta(face[k]))
                .map(|(a, b)| a * b)
                .sum()
        });
        let mean: f64 = (0..3).map(|k| g_lam[k] * lam[k]).sum();
        let g_a: [f64; 3] = core::array::from_fn(|k| (g_lam[k] - mean) / s);
        // a_k = ray . (x_{k+1} x x_{k+2}); gradient w.r.t. each corner.
        let mut g_x = [Vec3::ZERO; 3];
        for k in 0..3 {
            let (j1, j2) = ((k + 1) % 3, (k + 2) % 3);
            g_x[j1] += x[j2].cross(ray) * g_a[k];
            g_x[j2] += ray.cross(x[j1]) * g_a[k];
        }
        for k in 0..3 {
            let jac = rotation_jacobian(angles, verts[face[k]]);
            for p in 0..3 {
                grad[p] += g_x[k].dot(jac[p]);
            }
        }
    }
    (loss, grad)
}

fn gradient(
    f: &FeatureMap,
    model: &NeuralMesh,
    pose: &CameraPose,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    cfg: &RobustConfig,
    occlusion: &OcclusionMap,
) -> Result<[f64; 3]> {
    match cfg.gradient {
        GradientMode::FiniteDifference => {
            let a = pose.angles();
            let h = cfg.fd_step;
            let mut g = [0.0; 3];
            for p in 0..3 {
                let (mut plus, mut minus) = (a, a);
                plus[p] += h;
                minus[p] -= h;
                let lp = pose_loss(f, model, &pose.with_angles(plus)?, bg, intr, cfg)?;
                let lm = pose_loss(f, model, &pose.with_angles(minus)?, bg, intr, cfg)?;
                g[p] = (lp - lm) / (2.0 * h);
            }
            Ok(g)
        }
        GradientMode::Analytic => {
            let render = render_feature_map(model, pose, intr, f.height(), f.width())?;
            Ok(frozen_loss(f, model, pose, intr, &freeze(&render, occlusion), true).1)
        }
    }
}

/// Gradient descent on the pose angles from `init`.
///
/// Each iteration takes a step of length `cfg.step` (radians, Euclidean in
/// angle space) against the gradient, halving it while the loss does not
/// decrease. Descent stops when all halvings fail, when the loss changes by
/// less than `cfg.tolerance`, or after `cfg.max_iterations` iterations. The
/// returned loss never exceeds the initial one.
pub fn optimize_pose(
    f: &FeatureMap,
    model: &NeuralMesh,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    init: &CameraPose,
    cfg: &RobustConfig,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    let (ll, mut occlusion) = robust_log_likelihood(f, model, init, bg, intr, cfg)?;
    let mut pose = *init;
    let mut loss = -ll;
    let mut iterations = 0;
    let mut aborted = !loss.is_finite();
    while !aborted && iterations < cfg.max_iterations {
        iterations += 1;
        let g = gradient(f, model, &pose, bg, intr, cfg, &occlusion)?;
        if g.iter().any(|v| !v.is_finite()) {
            aborted = true;
            break;
        }
        let gn = libm::sqrt(g.iter().map(|v| v * v).sum());
        if gn == 0.0 {
            break;
        }
        let a = pose.angles();
        let mut step = cfg.step;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = pose.with_angles(core::array::from_fn(|p| a[p] - step * g[p] / gn))?;
            let (cand_ll, cand_occ) = match robust_log_likelihood(f, model, &cand, bg, intr, cfg) {
                Ok(r) => r,
                Err(Error::BehindCamera { .. }) => {
                    step *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !cand_ll.is_finite() {
                aborted = true;
                break;
            }
            if -cand_ll < loss {
                accepted = Some((cand, -cand_ll, cand_occ));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_loss, cand_occ)) = accepted else {
            break;
        };
        let delta = loss - cand_loss;
        pose = cand;
        loss = cand_loss;
        occlusion = cand_occ;
        if delta < cfg.tolerance {
            break;
        }
    }
    Ok(PoseEstimate {
        pose,
        loss,
        iterations,
        init_index: 0,
        subtype: 0,
        occlusion,
        aborted,
    })
}

/// Full search: for each subtype model, pick the best initial pose and refine
/// it; return the refined estimate with the lowest loss (first subtype wins
/// ties).
pub fn estimate_pose(
    f: &FeatureMap,
    models: &[NeuralMesh],
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    inits: &[CameraPose],
    cfg: &RobustConfig,
) -> Result<PoseEstimate> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models".into()));
    }
    let mut best: Option<PoseEstimate> = None;
    for (subtype, model) in models.iter().enumerate() {
        let (init_index, _) = select_best_init(f, model, bg, intr, inits, cfg)?;
        let mut est = optimize_pose(f, model, bg, intr, &inits[init_index], cfg)?;
        est.init_index = init_index;
        est.subtype = subtype;
        if best.as_ref().is_none_or(|b| est.loss < b.loss) {
            best = Some(est);
        }
    }
    Ok(best.expect("at least one model"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_error;
    use crate::mesh::generate_cuboid_mesh;
    use crate::mesh::{box_corners, TriangleMesh};
    use crate::neural_mesh::{log_likelihood, Pairing};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(50.0, 32, 32).unwrap()
    }

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        linalg::normalize_in_place(&mut v);
        v
    }

    type Field = Vec<(Vec3, f64)>;

    fn field(rng: &mut ChaCha8Rng, d: usize) -> Field {
        (0..d)
            .map(|_| {
                let w = Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                );
                (w, rng.random_range(0.0..TAU))
            })
            .collect()
    }

    fn model_on(mesh: TriangleMesh, field: &Field) -> NeuralMesh {
        let feats: Vec<f64> = mesh
            .vertices()
            .iter()
            .flat_map(|&v| field.iter().map(move |(w, ph)| libm::cos(w.dot(v) + ph)))
            .collect();
        NeuralMesh::new(mesh, feats, field.len(), "box", true).unwrap()
    }

    fn cuboid(lo: Vec3, hi: Vec3) -> TriangleMesh {
        generate_cuboid_mesh(&[box_corners(lo, hi)], 300).unwrap()
    }

    /// Cuboid whose vertex features vary smoothly with position.
    fn smooth_model(d: usize, seed: u64) -> (NeuralMesh, BackgroundModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = field(&mut rng, d);
        let model = model_on(
            cuboid(Vec3::new(-1.0, -0.45, -0.6), Vec3::new(1.0, 0.45, 0.6)),
            &f,
        );
        let bg = BackgroundModel::new(unit(&mut rng, d), 1.0, true).unwrap();
        (model, bg)
    }

    fn random_features(rng: &mut ChaCha8Rng, d: usize) -> FeatureMap {
        let i = intr();
        let mut f = FeatureMap::from_vec(
            i.height,
            i.width,
            d,
            (0..i.height * i.width * d)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        f.normalize();
        f
    }

    fn pose(az: f64, el: f64, th: f64) -> CameraPose {
        CameraPose::new(az, el, th, 5.0).unwrap()
    }

    #[test]
    fn non_robust_equals_plain_likelihood() {
        let (model, bg) = smooth_model(8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = RobustConfig {
            robust: false,
            ..Default::default()
        };
        for _ in 0..5 {
            let f = random_features(&mut rng, 8);
            let p = pose(rng.random_range(0.0..TAU), 0.3, 0.1);
            let (r, occ) = robust_log_likelihood(&f, &model, &p, &bg, &intr(), &cfg).unwrap();
            let plain = log_likelihood(&f, &model, &p, &bg, &intr(), Pairing::Pixel).unwrap();
            assert!((r - plain).abs() < 1e-9 * plain.abs());
            assert_eq!(occ.count(OcclusionLabel::Occluded), 0);
        }
    }

    #[test]
    fn robust_dominates_forced_visible() {
        let (model, bg) = smooth_model(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for prior in [0.2, 0.5, 0.8] {
            let cfg = RobustConfig {
                prior_visible: prior,
                ..Default::default()
            };
            let f = random_features(&mut rng, 8);
            let p = pose(1.0, 0.2, -0.2);
            let render = render_feature_map(&model, &p, &intr(), 32, 32).unwrap();
            let (r, occ) = robust_log_likelihood_rendered(&f, &model, &render, &bg, &cfg).unwrap();
            let plain = log_likelihood(&f, &model, &p, &bg, &intr(), Pairing::Pixel).unwrap();
            assert!(r >= plain + render.foreground_count() as f64 * libm::log(prior) - 1e-9);
            // Background pixels are never occluded; foreground pixels always carry a verdict.
            for (i, l) in occ.labels.iter().enumerate() {
                assert_eq!(*l == OcclusionLabel::Background, !render.fg_mask[i]);
            }
        }
    }

    #[test]
    fn all_background_target_is_fully_occluded() {
        let (model, bg) = smooth_model(8, 5);
        let i = intr();
        let f = FeatureMap::from_vec(32, 32, 8, bg.beta().repeat(32 * 32)).unwrap();
        // Push the object features away from beta.
        let far: Vec<f64> = bg.beta().iter().map(|v| -v).collect();
        let mut model = model;
        for r in 0..model.mesh().vertex_count() {
            model.set_theta(r, &far).unwrap();
        }
        let cfg = RobustConfig::default();
        let p = pose(0.5, 0.1, 0.0);
        let (r, occ) = robust_log_likelihood(&f, &model, &p, &bg, &i, &cfg).unwrap();
        let fg = occ.count(OcclusionLabel::Occluded);
        assert!(fg > 0);
        assert_eq!(occ.count(OcclusionLabel::Visible), 0);
        let per_pixel = -4.0 * libm::log(TAU);
        let expected = 1024.0 * per_pixel + fg as f64 * libm::log(0.5);
        assert!((r - expected).abs() < 1e-9);
    }

    #[test]
    fn init_grid() {
        let g = sample_initial_poses(12, 4, 3, 5.0).unwrap();
        assert_eq!(g.len(), 144);
        let one = sample_initial_poses(1, 1, 1, 5.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].azimuth(), 0.0);
        assert!((one[0].elevation() - PI / 18.0).abs() < 1e-12);
        assert_eq!(one[0].theta(), 0.0);
        for n in [144, 72, 36, 12, 6, 1] {
            let (a, e, t) = init_grid_shape(n).unwrap();
            assert_eq!(sample_initial_poses(a, e, t, 5.0).unwrap().len(), n);
        }
        let b = InitBands::default();
        assert!(g
            .iter()
            .all(|p| p.elevation() > b.elevation.0 && p.elevation() < b.elevation.1));
        assert!(sample_initial_poses(0, 1, 1, 5.0).is_err());
    }

    fn exact_target(model: &NeuralMesh, bg: &BackgroundModel, p: &CameraPose) -> FeatureMap {
        let render = render_feature_map(model, p, &intr(), 32, 32).unwrap();
        let mut f = render.rendered.clone();
        for i in 0..f.pixel_count() {
            if !render.fg_mask[i] {
                f.pixel_mut(i).copy_from_slice(bg.beta());
            }
        }
        f
    }

    #[test]
    fn best_init_finds_generating_grid_pose() {
        let (model, bg) = smooth_model(16, 7);
        let grid = sample_initial_poses(12, 4, 3, 5.0).unwrap();
        let cfg = RobustConfig::default();
        for k in [0, 17, 100, 143] {
            let f = exact_target(&model, &bg, &grid[k]);
            assert_eq!(
                select_best_init(&f, &model, &bg, &intr(), &grid, &cfg)
                    .unwrap()
                    .0,
                k
            );
        }
        let f = exact_target(&model, &bg, &grid[3]);
        assert_eq!(
            select_best_init(&f, &model, &bg, &intr(), &grid[5..6], &cfg)
                .unwrap()
                .0,
            0
        );
    }

    #[test]
    fn ground_truth_is_stationary() {
        let (model, bg) = smooth_model(16, 8);
        let gt = pose(0.7, 0.25, 0.1);
        let f = exact_target(&model, &bg, &gt);
        for mode in [GradientMode::FiniteDifference, GradientMode::Analytic] {
            let cfg = RobustConfig {
                gradient: mode,
                ..Default::default()
            };
            let est = optimize_pose(&f, &model, &bg, &intr(), &gt, &cfg).unwrap();
            assert!(est.iterations <= 2);
            assert!(geodesic_error(&est.pose.rotation(), &gt.rotation()) < 1e-3);
        }
    }

    #[test]
    fn recovers_small_azimuth_offset() {
        let (model, bg) = smooth_model(16, 9);
        let gt = pose(2.0, 0.2, -0.1);
        let f = exact_target(&model, &bg, &gt);
        for mode in [GradientMode::FiniteDifference, GradientMode::Analytic] {
            let cfg = RobustConfig {
                gradient: mode,
                ..Default::default()
            };
            let start = pose(2.1, 0.2, -0.1);
            let est = optimize_pose(&f, &model, &bg, &intr(), &start, &cfg).unwrap();
            let init_loss = -robust_log_likelihood(&f, &model, &start, &bg, &intr(), &cfg)
                .unwrap()
                .0;
            assert!(est.loss <= init_loss);
            assert!(
                (est.pose.azimuth() - 2.0).abs() < 0.01,
                "{mode:?}: {}",
                est.pose.azimuth()
            );
        }
    }

    #[test]
    fn analytic_gradient_matches_frozen_differences() {
        let (model, bg) = smooth_model(8, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = RobustConfig::default();
        for _ in 0..5 {
            let f = random_features(&mut rng, 8);
            let p = pose(
                rng.random_range(0.0..TAU),
                rng.random_range(-0.3..0.5),
                rng.random_range(-0.4..0.4),
            );
            let render = render_feature_map(&model, &p, &intr(), 32, 32).unwrap();
            let occ = infer_occlusion_map(&f, &render, &model, &bg, &cfg).unwrap();
            let frozen = freeze(&render, &occ);
            let (_, g) = frozen_loss(&f, &model, &p, &intr(), &frozen, true);
            let h = 1e-6;
            for k in 0..3 {
                let (mut a, mut b) = (p.angles(), p.angles());
                a[k] += h;
                b[k] -= h;
                let la = frozen_loss(
                    &f,
                    &model,
                    &p.with_angles(a).unwrap(),
                    &intr(),
                    &frozen,
                    false,
                )
                .0;
                let lb = frozen_loss(
                    &f,
                    &model,
                    &p.with_angles(b).unwrap(),
                    &intr(),
                    &frozen,
                    false,
                )
                .0;
                let fd = (la - lb) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "{k}: {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn frozen_loss_matches_rendered_object_term() {
        let (model, bg) = smooth_model(8, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = random_features(&mut rng, 8);
        let p = pose(4.0, 0.1, 0.2);
        let render = render_feature_map(&model, &p, &intr(), 32, 32).unwrap();
        let cfg = RobustConfig {
            robust: false,
            ..Default::default()
        };
        let occ = infer_occlusion_map(&f, &render, &model, &bg, &cfg).unwrap();
        let (l, _) = frozen_loss(&f, &model, &p, &intr(), &freeze(&render, &occ), false);
        let direct: f64 = (0..f.pixel_count())
            .filter(|&i| render.fg_mask[i])
            .map(|i| linalg::sq_dist(f.pixel(i), render.rendered.pixel(i)) / 2.0)
            .sum();
        assert!((l - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn subtype_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let fld = field(&mut rng, 16);
        let bg = BackgroundModel::new(unit(&mut rng, 16), 1.0, true).unwrap();
        let model_a = model_on(
            cuboid(Vec3::new(-1.0, -0.45, -0.6), Vec3::new(1.0, 0.45, 0.6)),
            &fld,
        );
        let model_b = model_on(
            cuboid(Vec3::new(-0.5, -0.7, -0.5), Vec3::new(0.5, 0.7, 0.5)),
            &fld,
        );
        let gt = pose(1.2, 0.2, 0.0);
        let f = exact_target(&model_a, &bg, &gt);
        let inits = sample_initial_poses(12, 4, 3, 5.0).unwrap();
        let est = estimate_pose(
            &f,
            &[model_b, model_a],
            &bg,
            &intr(),
            &inits,
            &RobustConfig::default(),
        )
        .unwrap();
        assert_eq!(est.subtype, 1);
        assert!(geodesic_error(&est.pose.rotation(), &gt.rotation()) < PI / 18.0);
    }

    #[test]
    fn invalid_config() {
        let (model, bg) = smooth_model(4, 15);
        let f = FeatureMap::zeros(32, 32, 4);
        let p = pose(0.0, 0.0, 0.0);
        for cfg in [
            RobustConfig {
                prior_visible: 0.0,
                ..Default::default()
            },
            RobustConfig {
                prior_visible: 1.0,
                ..Default::default()
            },
            RobustConfig {
                step: 0.0,
                ..Default::default()
            },
        ] {
            assert!(robust_log_likelihood(&f, &model, &p, &bg, &intr(), &cfg).is_err());
        }
        let bad = FeatureMap::zeros(32, 32, 5);
        assert!(
            robust_log_likelihood(&bad, &model, &p, &bg, &intr(), &RobustConfig::default())
                .is_err()
        );
    }
}
