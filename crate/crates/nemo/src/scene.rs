//! Synthetic scenes with controlled occlusion.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nemo_core::neural_mesh::render_feature_map;
use nemo_core::{CameraPose, FeatureMap};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::world::{normalized, World};
use crate::{HarnessError, HarnessResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OcclusionLevel {
    L0,
    L1,
    L2,
    L3,
}

impl OcclusionLevel {
    pub const ALL: [OcclusionLevel; 4] = [Self::L0, Self::L1, Self::L2, Self::L3];

    /// Allowed fraction of the object's projected area that is occluded.
    pub fn band(self) -> (f64, f64) {
        match self {
            Self::L0 => (0.0, 0.0),
            Self::L1 => (0.2, 0.4),
            Self::L2 => (0.4, 0.6),
            Self::L3 => (0.6, 0.8),
        }
    }

    pub fn contains(self, fraction: f64) -> bool {
        let (lo, hi) = self.band();
        fraction >= lo && fraction <= hi
    }
}

impl fmt::Display for OcclusionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for OcclusionLevel {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L0" => Ok(Self::L0),
            "L1" => Ok(Self::L1),
            "L2" => Ok(Self::L2),
            "L3" => Ok(Self::L3),
            _ => Err(HarnessError::Config(format!(
                "unknown occlusion level {s:?}"
            ))),
        }
    }
}

/// Ranges of the sampled ground-truth pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseBands {
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
    pub theta: (f64, f64),
}

impl Default for PoseBands {
    fn default() -> Self {
        Self {
            azimuth: (0.0, TAU),
            elevation: (-PI / 9.0, 2.0 * PI / 9.0),
            theta: (-PI / 6.0, PI / 6.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub noise_sigma: f64,
    pub pose_bands: PoseBands,
    /// Also render a raw colour image for extractor-mode training.
    pub image_mode: bool,
    pub image_noise: f64,
    /// Fixed subtype; `None` draws one uniformly.
    pub subtype: Option<usize>,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            pose_bands: PoseBands::default(),
            image_mode: false,
            image_noise: 0.05,
            subtype: None,
            max_attempts: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub id: String,
    pub seed: u64,
    pub index: u64,
    pub level: OcclusionLevel,
    pub subtype: usize,
    pub pose: CameraPose,
    pub features: FeatureMap,
    /// Colour image at `image_scale` times the feature resolution.
    pub image: Option<FeatureMap>,
    pub occluder_mask: Vec<bool>,
    /// Projected object region at the ground-truth pose.
    pub fg_mask: Vec<bool>,
}

impl SyntheticScene {
    /// Occluded share of the projected object area.
    pub fn occluded_fraction(&self) -> f64 {
        occluded_fraction(&self.occluder_mask, &self.fg_mask)
    }
}

pub fn occluded_fraction(occluder: &[bool], fg: &[bool]) -> f64 {
    let n = fg.iter().filter(|&&f| f).count();
    if n == 0 {
        return 0.0;
    }
    occluder.iter().zip(fg).filter(|&(&o, &f)| o && f).count() as f64 / n as f64
}

pub fn scene_id(level: OcclusionLevel, index: u64) -> String {
    format!("{level}_{index:05}")
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn noisy_unit(mean: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    normalized(mean.iter().map(|m| m + sigma * gaussian(rng)).collect())
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

/// Places rectangles over the object's bounding box until the occluded share
/// of `fg` reaches the level's band; retries from scratch on overshoot.
fn place_occluders(
    fg: &[bool],
    width: usize,
    height: usize,
    level: OcclusionLevel,
    max_attempts: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<bool>> {
    let mut mask = vec![false; fg.len()];
    if level == OcclusionLevel::L0 {
        return Some(mask);
    }
    let (mut bx0, mut by0, mut bx1, mut by1) = (width, height, 0, 0);
    for (i, _) in fg.iter().enumerate().filter(|(_, &f)| f) {
        let (x, y) = (i % width, i / width);
        bx0 = bx0.min(x);
        by0 = by0.min(y);
        bx1 = bx1.max(x + 1);
        by1 = by1.max(y + 1);
    }
    if bx1 <= bx0 {
        return None;
    }
    let (lo, hi) = level.band();
    let (bw, bh) = ((bx1 - bx0) as f64, (by1 - by0) as f64);
    for _ in 0..max_attempts {
        mask.iter_mut().for_each(|m| *m = false);
        let mut frac = 0.0;
        for _ in 0..8 {
            let w = ((bw * rng.random_range(0.3..0.8)).round() as usize).max(1);
            let h = ((bh * rng.random_range(0.3..0.8)).round() as usize).max(1);
            let cx = bx0 as f64 + rng.random_range(0.0..bw);
            let cy = by0 as f64 + rng.random_range(0.0..bh);
            let x0 = (cx - w as f64 / 2.0).round().max(0.0) as usize;
            let y0 = (cy - h as f64 / 2.0).round().max(0.0) as usize;
            let r = Rect {
                x0,
                y0,
                x1: (x0 + w).min(width),
                y1: (y0 + h).min(height),
            };
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    mask[y * width + x] = true;
                }
            }
            frac = occluded_fraction(&mask, fg);
            if frac >= lo {
                break;
            }
        }
        if frac >= lo && frac <= hi {
            return Some(mask);
        }
    }
    None
}

/// Draws a ground-truth pose inside `bands`.
pub fn sample_pose(
    bands: &PoseBands,
    distance: f64,
    rng: &mut ChaCha8Rng,
) -> nemo_core::Result<CameraPose> {
    let draw = |(lo, hi): (f64, f64), rng: &mut ChaCha8Rng| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let az = draw(bands.azimuth, rng);
    let el = draw(bands.elevation, rng);
    let th = draw(bands.theta, rng);
    CameraPose::new(az, el, th, distance)
}

/// Builds scene `index` of a run. Everything is derived from
/// `(seed, level, index)`, so scenes can be generated in any order.
pub fn generate_scene(
    world: &World,
    level: OcclusionLevel,
    cfg: &SceneConfig,
    seed: u64,
    index: u64,
) -> HarnessResult<SyntheticScene> {
    if !(cfg.noise_sigma >= 0.0) || !(cfg.image_noise >= 0.0) {
        return Err(HarnessError::Config(
            "noise levels must be non-negative".into(),
        ));
    }
    let mut rng = stream(seed, &format!("scene/{level}"), index);
    let subtype = match cfg.subtype {
        Some(s) if s < world.subtype_count() => s,
        Some(s) => return Err(HarnessError::Config(format!("subtype {s} not in world"))),
        None => rng.random_range(0..world.subtype_count()),
    };
    let pose = sample_pose(&cfg.pose_bands, world.config.distance, &mut rng)?;
    let intr = &world.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let render = render_feature_map(&world.models[subtype], &pose, intr, h, w)?;
    let fg_mask = render.fg_mask.clone();
    let occluder_mask = place_occluders(&fg_mask, w, h, level, cfg.max_attempts, &mut rng)
        .ok_or_else(|| {
            HarnessError::Generation(format!(
                "could not place {level} occluders for scene {index} (seed {seed})"
            ))
        })?;

    let d = world.config.feature_dim;
    let beta = world.background.beta();
    let mut data = Vec::with_capacity(w * h * d);
    for i in 0..w * h {
        let mean = if occluder_mask[i] {
            &world.occluder_mean[..]
        } else if fg_mask[i] {
            render.rendered.pixel(i)
        } else {
            beta
        };
        if cfg.noise_sigma == 0.0 {
            data.extend_from_slice(mean);
        } else {
            data.extend(noisy_unit(mean, cfg.noise_sigma, &mut rng));
        }
    }
    let features = FeatureMap::from_vec(h, w, d, data)?;

    let image = if cfg.image_mode {
        Some(render_image(
            world,
            subtype,
            &pose,
            &occluder_mask,
            cfg.image_noise,
            &mut rng,
        )?)
    } else {
        None
    };
    Ok(SyntheticScene {
        id: scene_id(level, index),
        seed,
        index,
        level,
        subtype,
        pose,
        features,
        image,
        occluder_mask,
        fg_mask,
    })
}

/// Colour image of the scene at image resolution. Background pixels get the
/// world background colour plus a per-scene smooth clutter pattern, occluded
/// blocks the occluder colour; everything gets pixel noise.
fn render_image(
    world: &World,
    subtype: usize,
    pose: &CameraPose,
    occluder_mask: &[bool],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> HarnessResult<FeatureMap> {
    let intr = world.image_intrinsics();
    let (w, h) = (intr.width, intr.height);
    let c = world.config.image_channels;
    let s = world.config.image_scale;
    let render = render_feature_map(&world.colour_models[subtype], pose, &intr, h, w)?;
    let clutter: Vec<(f64, f64, f64)> = (0..c)
        .map(|_| {
            let ang = rng.random_range(0.0..TAU);
            let k = rng.random_range(0.5..2.0) * TAU / w as f64;
            (k * ang.cos(), k * ang.sin(), rng.random_range(0.0..TAU))
        })
        .collect();
    let fw = world.intrinsics.width;
    let mut data = Vec::with_capacity(w * h * c);
    for i in 0..w * h {
        let (x, y) = (i % w, i / w);
        let coarse = (y / s) * fw + x / s;
        for ch in 0..c {
            let base = if occluder_mask[coarse] {
                world.occluder_colour[ch]
            } else if render.fg_mask[i] {
                render.rendered.pixel(i)[ch]
            } else {
                let (kx, ky, ph) = clutter[ch];
                world.background_colour[ch] + 0.15 * (kx * x as f64 + ky * y as f64 + ph).cos()
            };
            data.push(base + noise * gaussian(rng));
        }
    }
    Ok(FeatureMap::from_vec(h, w, c, data)?)
}
