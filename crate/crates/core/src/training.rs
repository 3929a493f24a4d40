//! Training objective and parameter fitting.
//!
//! The loss has three parts: the unit-variance maximum-likelihood term
//! (squared distances of foreground features to their vertex means and of
//! background features to the clutter mean), and two contrastive terms that
//! reward spread among foreground features and separation between
//! foreground and background features. The contrastive terms are averaged
//! over their pair counts.
//!
//! A linear patch extractor stands in for a CNN backbone. Its weights are
//! fit by gradient descent on the full loss with the analytic gradient; the
//! vertex features and the clutter mean are fit as exponential moving
//! averages of the features paired with them.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::geometry::{project_vertices, CameraIntrinsics, CameraPose};
use crate::linalg;
use crate::mesh::TriangleMesh;
use crate::neural_mesh::{BackgroundModel, NeuralMesh};
use crate::raster::{
    rasterize_projected, visible_from_buffer, VisibleVertex, VISIBILITY_TOLERANCE,
};

/// Maps each non-overlapping `patch x patch` block of an image to a
/// `dim`-vector: `u = W x`, optionally scaled to unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPatchExtractor {
    patch: usize,
    in_channels: usize,
    dim: usize,
    weights: Vec<f64>,
    normalize: bool,
}

/// Cached forward pass for back-propagation.
#[derive(Debug, Clone)]
pub struct ExtractorForward {
    patches: Vec<f64>,
    pre_norm: Vec<f64>,
    pub features: FeatureMap,
}

impl LinearPatchExtractor {
    /// `weights` is `dim` rows of `patch * patch * in_channels` values; a patch
    /// is flattened row by row with the channel index fastest.
    pub fn new(
        patch: usize,
        in_channels: usize,
        dim: usize,
        weights: Vec<f64>,
        normalize: bool,
    ) -> Result<Self> {
        if patch == 0 || in_channels == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "extractor sizes must be positive".into(),
            ));
        }
        if weights.len() != dim * patch * patch * in_channels {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} weights for a {dim}x{} extractor",
                weights.len(),
                patch * patch * in_channels
            )));
        }
        Ok(Self {
            patch,
            in_channels,
            dim,
            weights,
            normalize,
        })
    }

    /// Gaussian initialization with variance `1 / fan_in`.
    pub fn random<R: Rng>(
        patch: usize,
        in_channels: usize,
        dim: usize,
        normalize: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = patch * patch * in_channels;
        let scale = 1.0 / libm::sqrt(fan_in as f64);
        let weights = (0..dim * fan_in)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(patch, in_channels, dim, weights, normalize)
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn input_len(&self) -> usize {
        self.patch * self.patch * self.in_channels
    }

    fn check_image(&self, image: &FeatureMap) -> Result<()> {
        if image.depth() != self.in_channels {
            return Err(Error::DimensionMismatch(alloc::format!(
                "image has {} channels, extractor expects {}",
                image.depth(),
                self.in_channels
            )));
        }
        if !image.height().is_multiple_of(self.patch) || !image.width().is_multiple_of(self.patch) {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{}x{} image is not divisible into {p}x{p} patches",
                image.width(),
                image.height(),
                p = self.patch
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &FeatureMap) -> Result<ExtractorForward> {
        self.check_image(image)?;
        let (p, c) = (self.patch, self.in_channels);
        let (oh, ow) = (image.height() / p, image.width() / p);
        let n_in = self.input_len();
        let mut patches = Vec::with_capacity(oh * ow * n_in);
        for py in 0..oh {
            for px in 0..ow {
                for dy in 0..p {
                    let row = (py * p + dy) * image.width() + px * p;
                    patches.extend_from_slice(&image.as_slice()[row * c..(row + p) * c]);
                }
            }
        }
        let mut pre_norm = vec![0.0; oh * ow * self.dim];
        for (x, u) in patches.chunks(n_in).zip(pre_norm.chunks_mut(self.dim)) {
            for (ud, w) in u.iter_mut().zip(self.weights.chunks(n_in)) {
                *ud = w.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = pre_norm.clone();
        if self.normalize {
            for u in out.chunks_mut(self.dim) {
                linalg::normalize_in_place(u);
            }
        }
        let features = FeatureMap::from_vec(oh, ow, self.dim, out)?;
        Ok(ExtractorForward {
            patches,
            pre_norm,
            features,
        })
    }

    /// Gradient of a scalar loss w.r.t. the weights, given its gradient
    /// w.r.t. the output features of `fwd`.
    pub fn backward(&self, fwd: &ExtractorForward, grad_features: &[f64]) -> Vec<f64> {
        let n_in = self.input_len();
        let d = self.dim;
        let mut grad = vec![0.0; self.weights.len()];
        let mut gu = vec![0.0; d];
        for (i, x) in fwd.patches.chunks(n_in).enumerate() {
            let g = &grad_features[i * d..(i + 1) * d];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            if self.normalize {
                let u = &fwd.pre_norm[i * d..(i + 1) * d];
                let n = linalg::norm(u);
                if n == 0.0 {
                    continue;
                }
                let f = fwd.features.pixel(i);
                let fg: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
                for k in 0..d {
                    gu[k] = (g[k] - f[k] * fg) / n;
                }
            } else {
                gu.copy_from_slice(g);
            }
            for (k, row) in grad.chunks_mut(n_in).enumerate() {
                let s = gu[k];
                if s != 0.0 {
                    row.iter_mut().zip(x).for_each(|(r, xv)| *r += s * xv);
                }
            }
        }
        grad
    }
}

/// Runs the extractor on one image.
pub fn extract_features(ex: &LinearPatchExtractor, image: &FeatureMap) -> Result<FeatureMap> {
    Ok(ex.forward(image)?.features)
}

/// Foreground vertex/pixel pairs and background pixels of one training view.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub fg_pairs: Vec<VisibleVertex>,
    pub bg_pixels: Vec<usize>,
}

impl Correspondence {
    /// Distinct foreground pixels, ascending.
    pub fn fg_pixels(&self) -> Vec<usize> {
        unique_pixels(&self.fg_pairs)
    }
}

fn unique_pixels(pairs: &[VisibleVertex]) -> Vec<usize> {
    let mut px: Vec<usize> = pairs.iter().map(|p| p.pixel).collect();
    px.sort_unstable();
    px.dedup();
    px
}

/// Visible vertices of `mesh` under the ground-truth pose, and the pixels no
/// face covers.
pub fn correspondence(
    mesh: &TriangleMesh,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> Result<Correspondence> {
    let proj = project_vertices(mesh.vertices(), pose, intr)?;
    let buf = rasterize_projected(mesh, &proj, intr.width, intr.height);
    let fg_pairs = visible_from_buffer(mesh, &proj, &buf, VISIBILITY_TOLERANCE * mesh.diameter());
    let bg_pixels = (0..intr.width * intr.height)
        .filter(|&i| !buf.is_covered(i))
        .collect();
    Ok(Correspondence {
        fg_pairs,
        bg_pixels,
    })
}

/// Weights of the three loss terms and the foreground constant of the
/// maximum-likelihood term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ml: f64,
    pub feature: f64,
    pub back: f64,
    pub fg_constant: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ml: 1.0,
            feature: 1.0,
            back: 1.0,
            fg_constant: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(ml: f64, feature: f64, back: f64) -> Self {
        Self {
            ml,
            feature,
            back,
            fg_constant: 1.0,
        }
    }

    /// Maximum-likelihood term only.
    pub fn without_contrastive(self) -> Self {
        Self {
            feature: 0.0,
            back: 0.0,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub ml: f64,
    pub feature: f64,
    pub back: f64,
    pub total: f64,
}

fn check_loss_inputs(f: &FeatureMap, model: &NeuralMesh, bg: &BackgroundModel) -> Result<()> {
    f.check_depth(model.dim())?;
    f.check_depth(bg.dim())
}

/// `C * sum_fg |f_i - theta_r|^2 + sum_bg |f_i - beta|^2` over a fixed
/// correspondence.
pub fn mle_loss_with(
    f: &FeatureMap,
    model: &NeuralMesh,
    bg: &BackgroundModel,
    corr: &Correspondence,
    fg_constant: f64,
) -> Result<f64> {
    check_loss_inputs(f, model, bg)?;
    let fg: f64 = corr
        .fg_pairs
        .iter()
        .map(|p| linalg::sq_dist(f.pixel(p.pixel), model.theta(p.vertex)))
        .sum();
    let back: f64 = corr
        .bg_pixels
        .iter()
        .map(|&i| linalg::sq_dist(f.pixel(i), bg.beta()))
        .sum();
    Ok(fg_constant * fg + back)
}

/// Unit-variance maximum-likelihood loss of `f` with the model at `pose`.
pub fn mle_loss(
    f: &FeatureMap,
    model: &NeuralMesh,
    pose: &CameraPose,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
) -> Result<f64> {
    let corr = correspondence(model.mesh(), pose, intr)?;
    mle_loss_with(f, model, bg, &corr, 1.0)
}

/// Sum of squared norms and vector sum of the features at `pixels`.
fn moments(f: &FeatureMap, pixels: &[usize]) -> (f64, Vec<f64>) {
    let mut sq = 0.0;
    let mut sum = vec![0.0; f.depth()];
    for &i in pixels {
        let v = f.pixel(i);
        sq += v.iter().map(|x| x * x).sum::<f64>();
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    (sq, sum)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative mean squared distance over ordered pairs of distinct foreground
/// pixels; zero with fewer than two.
pub fn contrastive_feature_loss(f: &FeatureMap, fg_pairs: &[VisibleVertex]) -> f64 {
    feature_loss_on(f, &unique_pixels(fg_pairs))
}

fn feature_loss_on(f: &FeatureMap, px: &[usize]) -> f64 {
    let n = px.len() as f64;
    if px.len() < 2 {
        return 0.0;
    }
    let (sq, sum) = moments(f, px);
    // sum_{i != j} |f_i - f_j|^2 = 2n sum |f_i|^2 - 2 |sum f_i|^2
    -(2.0 * n * sq - 2.0 * dot(&sum, &sum)) / (n * (n - 1.0))
}

/// Negative mean squared distance over foreground x background pixel pairs;
/// zero when either side is empty.
pub fn contrastive_background_loss(
    f: &FeatureMap,
    fg_pairs: &[VisibleVertex],
    bg_pixels: &[usize],
) -> f64 {
    back_loss_on(f, &unique_pixels(fg_pairs), bg_pixels)
}

fn back_loss_on(f: &FeatureMap, fg: &[usize], bgp: &[usize]) -> f64 {
    if fg.is_empty() || bgp.is_empty() {
        return 0.0;
    }
    let (nf, nb) = (fg.len() as f64, bgp.len() as f64);
    let (sq_f, sum_f) = moments(f, fg);
    let (sq_b, sum_b) = moments(f, bgp);
    -(nb * sq_f + nf * sq_b - 2.0 * dot(&sum_f, &sum_b)) / (nf * nb)
}

/// All loss terms for a fixed correspondence.
pub fn total_loss_with(
    f: &FeatureMap,
    model: &NeuralMesh,
    bg: &BackgroundModel,
    corr: &Correspondence,
    w: &LossWeights,
) -> Result<LossTerms> {
    let ml = mle_loss_with(f, model, bg, corr, w.fg_constant)?;
    let fg = corr.fg_pixels();
    let feature = feature_loss_on(f, &fg);
    let back = back_loss_on(f, &fg, &corr.bg_pixels);
    Ok(LossTerms {
        ml,
        feature,
        back,
        total: w.ml * ml + w.feature * feature + w.back * back,
    })
}

/// Weighted training loss of `f` with the model at `pose`.
pub fn total_loss(
    f: &FeatureMap,
    model: &NeuralMesh,
    pose: &CameraPose,
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    w: &LossWeights,
) -> Result<LossTerms> {
    let corr = correspondence(model.mesh(), pose, intr)?;
    total_loss_with(f, model, bg, &corr, w)
}

/// Loss terms plus the gradient of the weighted total w.r.t. every feature
/// value of `f` (same layout as `f`). Model parameters are held fixed.
pub fn total_loss_gradient(
    f: &FeatureMap,
    model: &NeuralMesh,
    bg: &BackgroundModel,
    corr: &Correspondence,
    w: &LossWeights,
) -> Result<(LossTerms, Vec<f64>)> {
    let terms = total_loss_with(f, model, bg, corr, w)?;
    let d = f.depth();
    let mut grad = vec![0.0; f.as_slice().len()];
    let mut add = |i: usize, scale: f64, v: &[f64]| {
        grad[i * d..(i + 1) * d]
            .iter_mut()
            .zip(v)
            .for_each(|(g, x)| *g += scale * x);
    };

    if w.ml != 0.0 {
        let s = 2.0 * w.ml * w.fg_constant;
        for p in &corr.fg_pairs {
            let diff: Vec<f64> = f
                .pixel(p.pixel)
                .iter()
                .zip(model.theta(p.vertex))
                .map(|(a, b)| a - b)
                .collect();
            add(p.pixel, s, &diff);
        }
        for &i in &corr.bg_pixels {
            let diff: Vec<f64> = f
                .pixel(i)
                .iter()
                .zip(bg.beta())
                .map(|(a, b)| a - b)
                .collect();
            add(i, 2.0 * w.ml, &diff);
        }
    }

    let fg = corr.fg_pixels();
    if w.feature != 0.0 && fg.len() >= 2 {
        // d/df_i of -(2n sum|f|^2 - 2|S|^2) / (n(n-1)) = -(4n f_i - 4S) / (n(n-1))
        let n = fg.len() as f64;
        let (_, sum) = moments(f, &fg);
        let c = -w.feature / (n * (n - 1.0));
        for &i in &fg {
            let g: Vec<f64> = f
                .pixel(i)
                .iter()
                .zip(&sum)
                .map(|(x, s)| 4.0 * n * x - 4.0 * s)
                .collect();
            add(i, c, &g);
        }
    }

    if w.back != 0.0 && !fg.is_empty() && !corr.bg_pixels.is_empty() {
        let (nf, nb) = (fg.len() as f64, corr.bg_pixels.len() as f64);
        let (_, sum_f) = moments(f, &fg);
        let (_, sum_b) = moments(f, &corr.bg_pixels);
        let c = -w.back / (nf * nb);
        for &i in &fg {
            let g: Vec<f64> = f
                .pixel(i)
                .iter()
                .zip(&sum_b)
                .map(|(x, s)| 2.0 * nb * x - 2.0 * s)
                .collect();
            add(i, c, &g);
        }
        for &i in &corr.bg_pixels {
            let g: Vec<f64> = f
                .pixel(i)
                .iter()
                .zip(&sum_f)
                .map(|(x, s)| 2.0 * nf * x - 2.0 * s)
                .collect();
            add(i, c, &g);
        }
    }
    Ok((terms, grad))
}

/// One exponential-moving-average step: every visible vertex moves toward the
/// feature at its pixel, the clutter mean toward the mean background feature.
/// Invisible vertices are untouched.
pub fn update_vertex_features(
    model: &mut NeuralMesh,
    bg: &mut BackgroundModel,
    f: &FeatureMap,
    corr: &Correspondence,
    momentum: f64,
) -> Result<()> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(alloc::format!(
            "momentum {momentum} outside [0, 1)"
        )));
    }
    check_loss_inputs(f, model, bg)?;
    let d = f.depth();
    let mut next = vec![0.0; d];
    for p in &corr.fg_pairs {
        let theta = model.theta(p.vertex);
        for k in 0..d {
            next[k] = momentum * theta[k] + (1.0 - momentum) * f.pixel(p.pixel)[k];
        }
        model.set_theta(p.vertex, &next)?;
    }
    if !corr.bg_pixels.is_empty() {
        let (_, sum) = moments(f, &corr.bg_pixels);
        let n = corr.bg_pixels.len() as f64;
        for k in 0..d {
            next[k] = momentum * bg.beta()[k] + (1.0 - momentum) * sum[k] / n;
        }
        bg.set_beta(&next)?;
    }
    Ok(())
}

/// Training input: a raw image for the extractor, or a ready feature map.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainInput {
    Image(FeatureMap),
    Features(FeatureMap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: TrainInput,
    pub pose: CameraPose,
    pub subtype: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    pub momentum: f64,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub seed: u64,
    pub normalize: bool,
    pub feature_dim: usize,
    pub patch_size: usize,
    /// Keep the extractor at its initialization (vertex features still fit).
    pub freeze_extractor: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.05,
            cosine_decay: true,
            momentum: 0.9,
            weights: LossWeights::default(),
            batch_size: 8,
            seed: 0,
            normalize: true,
            feature_dim: 64,
            patch_size: 8,
            freeze_extractor: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(alloc::format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if [w.ml, w.feature, w.back, w.fg_constant]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.feature_dim == 0 || self.patch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size, feature dim and patch size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Sample-averaged loss terms of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    /// `None` when training ran on precomputed feature maps.
    pub extractor: Option<LinearPatchExtractor>,
    /// One model per subtype, indexed like the meshes passed in.
    pub models: Vec<NeuralMesh>,
    pub background: BackgroundModel,
    pub trace: Vec<EpochStats>,
}

fn random_unit<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    linalg::normalize_in_place(&mut v);
    v
}

/// Fits one neural mesh per subtype mesh, the clutter model and (for image
/// input) the extractor. `intr` describes the feature-map lattice.
pub fn train(
    samples: &[TrainSample],
    meshes: &[TriangleMesh],
    class_label: &str,
    intr: &CameraIntrinsics,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let image_mode = matches!(samples[0].input, TrainInput::Image(_));
    let mut seen = vec![false; meshes.len()];
    for (k, s) in samples.iter().enumerate() {
        if s.subtype >= meshes.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "sample {k} has unknown subtype {}",
                s.subtype
            )));
        }
        seen[s.subtype] = true;
        if matches!(s.input, TrainInput::Image(_)) != image_mode {
            return Err(Error::InvalidArgument(
                "samples mix images and feature maps".into(),
            ));
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(alloc::format!(
            "subtype {k} has no training samples"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut extractor = match &samples[0].input {
        TrainInput::Image(img) => Some(LinearPatchExtractor::random(
            cfg.patch_size,
            img.depth(),
            cfg.feature_dim,
            cfg.normalize,
            &mut rng,
        )?),
        TrainInput::Features(_) => None,
    };
    let dim = match &samples[0].input {
        TrainInput::Image(_) => cfg.feature_dim,
        TrainInput::Features(f) => f.depth(),
    };

    let corrs = samples
        .iter()
        .map(|s| correspondence(&meshes[s.subtype], &s.pose, intr))
        .collect::<Result<Vec<_>>>()?;

    let features_of = |ex: &Option<LinearPatchExtractor>, s: &TrainSample| -> Result<FeatureMap> {
        let f = match (&s.input, ex) {
            (TrainInput::Image(img), Some(ex)) => ex.forward(img)?.features,
            (TrainInput::Features(f), _) => f.clone(),
            (TrainInput::Image(_), None) => unreachable!("extractor exists in image mode"),
        };
        f.check_shape(intr.height, intr.width)?;
        f.check_depth(dim)?;
        Ok(f)
    };

    // Warm start: per-vertex and background means over the initial features.
    let mut sums: Vec<Vec<f64>> = meshes
        .iter()
        .map(|m| vec![0.0; m.vertex_count() * dim])
        .collect();
    let mut counts: Vec<Vec<usize>> = meshes.iter().map(|m| vec![0; m.vertex_count()]).collect();
    let mut bg_sum = vec![0.0; dim];
    let mut bg_count = 0usize;
    for (s, corr) in samples.iter().zip(&corrs) {
        let f = features_of(&extractor, s)?;
        for p in &corr.fg_pairs {
            let row = &mut sums[s.subtype][p.vertex * dim..(p.vertex + 1) * dim];
            row.iter_mut()
                .zip(f.pixel(p.pixel))
                .for_each(|(a, b)| *a += b);
            counts[s.subtype][p.vertex] += 1;
        }
        for &i in &corr.bg_pixels {
            bg_sum.iter_mut().zip(f.pixel(i)).for_each(|(a, b)| *a += b);
            bg_count += 1;
        }
    }
    let mut models = Vec::with_capacity(meshes.len());
    for (k, mesh) in meshes.iter().enumerate() {
        let mut feats = sums[k].clone();
        for r in 0..mesh.vertex_count() {
            let row = &mut feats[r * dim..(r + 1) * dim];
            if counts[k][r] == 0 || linalg::norm(row) == 0.0 {
                row.copy_from_slice(&random_unit(dim, &mut rng));
            } else {
                let c = counts[k][r] as f64;
                row.iter_mut().for_each(|v| *v /= c);
            }
        }
        models.push(NeuralMesh::new(
            mesh.clone(),
            feats,
            dim,
            class_label,
            cfg.normalize,
        )?);
    }
    let mut beta = if bg_count > 0 {
        bg_sum.iter().map(|v| v / bg_count as f64).collect()
    } else {
        random_unit(dim, &mut rng)
    };
    if linalg::norm(&beta) == 0.0 {
        beta = random_unit(dim, &mut rng);
    }
    let mut background = BackgroundModel::new(beta, 1.0, cfg.normalize)?;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = if cfg.cosine_decay {
            cfg.learning_rate * 0.5 * (1.0 + libm::cos(PI * epoch as f64 / cfg.epochs as f64))
        } else {
            cfg.learning_rate
        };
        order.shuffle(&mut rng);
        let mut acc = LossTerms::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_w: Option<Vec<f64>> = None;
            let mut batch_features = Vec::with_capacity(batch.len());
            for &k in batch {
                let s = &samples[k];
                let model = &models[s.subtype];
                let (f, terms) = match (&s.input, &extractor) {
                    (TrainInput::Image(img), Some(ex)) if !cfg.freeze_extractor => {
                        let fwd = ex.forward(img)?;
                        let (terms, gf) = total_loss_gradient(
                            &fwd.features,
                            model,
                            &background,
                            &corrs[k],
                            &cfg.weights,
                        )?;
                        let gw = ex.backward(&fwd, &gf);
                        match &mut grad_w {
                            Some(acc_w) => acc_w.iter_mut().zip(&gw).for_each(|(a, b)| *a += b),
                            None => grad_w = Some(gw),
                        }
                        (fwd.features, terms)
                    }
                    _ => {
                        let f = features_of(&extractor, s)?;
                        let terms =
                            total_loss_with(&f, model, &background, &corrs[k], &cfg.weights)?;
                        (f, terms)
                    }
                };
                if !terms.total.is_finite() {
                    return Err(Error::NonFinite(alloc::format!(
                        "in epoch {epoch}, sample {k}"
                    )));
                }
                acc.ml += terms.ml;
                acc.feature += terms.feature;
                acc.back += terms.back;
                acc.total += terms.total;
                batch_features.push(f);
            }
            if let (Some(gw), Some(ex)) = (grad_w, extractor.as_mut()) {
                let scale = lr / batch.len() as f64;
                ex.weights_mut()
                    .iter_mut()
                    .zip(&gw)
                    .for_each(|(w, g)| *w -= scale * g);
                if ex.weights().iter().any(|w| !w.is_finite()) {
                    return Err(Error::NonFinite(alloc::format!(
                        "extractor weights in epoch {epoch}"
                    )));
                }
            }
            for (&k, f) in batch.iter().zip(&batch_features) {
                let s = &samples[k];
                update_vertex_features(
                    &mut models[s.subtype],
                    &mut background,
                    f,
                    &corrs[k],
                    cfg.momentum,
                )?;
            }
        }
        let n = samples.len() as f64;
        trace.push(EpochStats {
            epoch,
            terms: LossTerms {
                ml: acc.ml / n,
                feature: acc.feature / n,
                back: acc.back / n,
                total: acc.total / n,
            },
        });
    }
    Ok(TrainOutput {
        extractor,
        models,
        background,
        trace,
    })
}
