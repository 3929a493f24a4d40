//! Ground-truth generators for synthetic scenes.
//!
//! A world holds one cuboid neural mesh per subtype whose vertex features are
//! a smooth random field over 3D space, the clutter mean, an occluder mean,
//! and (for image-mode experiments) a colour version of the same objects.

use std::f64::consts::TAU;

use nemo_core::mesh::{box_corners, generate_cuboid_mesh};
use nemo_core::{BackgroundModel, CameraIntrinsics, NeuralMesh, Result, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub feature_dim: usize,
    /// Side length of the square feature map.
    pub map_size: usize,
    pub focal: f64,
    pub distance: f64,
    pub vertex_target: usize,
    /// Half-extents of each subtype's box.
    pub subtypes: Vec<[f64; 3]>,
    /// Typical spatial frequency of the feature field, radians per unit length.
    pub frequency: f64,
    /// Cosine between every object feature and the clutter mean, negated.
    pub anti_correlation: f64,
    /// Distance of the occluder mean from the clutter mean before normalization.
    pub occluder_offset: f64,
    /// Colour channels of rendered images.
    pub image_channels: usize,
    /// Image pixels per feature-map pixel along each axis.
    pub image_scale: usize,
    pub class_label: String,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            map_size: 32,
            focal: 40.0,
            distance: 5.0,
            vertex_target: 600,
            subtypes: vec![[1.0, 0.45, 0.6], [0.7, 0.6, 0.7]],
            frequency: 8.0,
            anti_correlation: 0.8,
            occluder_offset: 0.6,
            image_channels: 4,
            image_scale: 8,
            class_label: "cuboid".into(),
        }
    }
}

impl WorldConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(self.focal, self.map_size, self.map_size)
    }
}

/// Sum of random plane waves: channel `c` at `x` is `cos(w_c . x + phase_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    waves: Vec<(Vec3, f64)>,
}

impl WaveField {
    pub fn random(channels: usize, frequency: f64, rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..channels)
            .map(|_| {
                let dir = unit3(rng);
                let k = frequency * rng.random_range(0.5..1.5);
                (dir * k, rng.random_range(0.0..TAU))
            })
            .collect();
        Self { waves }
    }

    pub fn channels(&self) -> usize {
        self.waves.len()
    }

    pub fn eval(&self, x: Vec3) -> impl Iterator<Item = f64> + '_ {
        self.waves.iter().map(move |(w, ph)| (w.dot(x) + ph).cos())
    }
}

fn unit3(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v * (1.0 / n);
        }
    }
}

pub fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Removes the component along the unit vector `u`.
fn reject(v: &mut [f64], u: &[f64]) {
    let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub intrinsics: CameraIntrinsics,
    /// Feature models, one per subtype.
    pub models: Vec<NeuralMesh>,
    pub background: BackgroundModel,
    pub occluder_mean: Vec<f64>,
    /// Unnormalized colour models with intensities in `[0, 1]`, one per subtype.
    pub colour_models: Vec<NeuralMesh>,
    pub background_colour: Vec<f64>,
    pub occluder_colour: Vec<f64>,
}

impl World {
    pub fn build(config: &WorldConfig, seed: u64) -> Result<Self> {
        let intrinsics = config.intrinsics()?;
        let d = config.feature_dim;
        let mut rng = stream(seed, "world", 0);
        let beta = random_unit(d, &mut rng);
        let field = WaveField::random(d, config.frequency, &mut rng);
        let mut off = random_unit(d, &mut rng);
        reject(&mut off, &beta);
        let off = normalized(off);
        let occluder_mean = normalized(
            beta.iter()
                .zip(&off)
                .map(|(b, o)| b + config.occluder_offset * o)
                .collect(),
        );

        let a = config.anti_correlation;
        let b = (1.0 - a * a).max(0.0).sqrt();
        let colour_field = WaveField::random(config.image_channels, config.frequency, &mut rng);
        let background_colour: Vec<f64> = (0..config.image_channels)
            .map(|_| rng.random_range(0.2..0.8))
            .collect();
        let occluder_colour: Vec<f64> = (0..config.image_channels)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();

        let mut models = Vec::new();
        let mut colour_models = Vec::new();
        for half in &config.subtypes {
            let box_mesh = box_corners(
                Vec3::new(-half[0], -half[1], -half[2]),
                Vec3::new(half[0], half[1], half[2]),
            );
            let mesh = generate_cuboid_mesh(&[box_mesh], config.vertex_target)?;
            let mut feats = Vec::with_capacity(mesh.vertex_count() * d);
            let mut colours = Vec::with_capacity(mesh.vertex_count() * config.image_channels);
            for &v in mesh.vertices() {
                let mut g: Vec<f64> = field.eval(v).collect();
                reject(&mut g, &beta);
                let g = normalized(g);
                feats.extend(beta.iter().zip(&g).map(|(bb, gg)| -a * bb + b * gg));
                colours.extend(colour_field.eval(v).map(|c| 0.5 + 0.5 * c));
            }
            models.push(NeuralMesh::new(
                mesh.clone(),
                feats,
                d,
                config.class_label.clone(),
                true,
            )?);
            colour_models.push(NeuralMesh::new(
                mesh,
                colours,
                config.image_channels,
                config.class_label.clone(),
                false,
            )?);
        }
        let background = BackgroundModel::new(beta, 1.0, true)?;
        Ok(Self {
            config: config.clone(),
            intrinsics,
            models,
            background,
            occluder_mean,
            colour_models,
            background_colour,
            occluder_colour,
        })
    }

    pub fn subtype_count(&self) -> usize {
        self.models.len()
    }

    /// Lattice of rendered images.
    pub fn image_intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics.scaled(self.config.image_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_invariants() {
        let cfg = WorldConfig {
            feature_dim: 16,
            vertex_target: 200,
            ..Default::default()
        };
        let w = World::build(&cfg, 3).unwrap();
        assert_eq!(w.models.len(), 2);
        for m in &w.models {
            for r in 0..m.mesh().vertex_count() {
                let cos: f64 = m
                    .theta(r)
                    .iter()
                    .zip(w.background.beta())
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((cos + cfg.anti_correlation).abs() < 1e-9);
            }
        }
        assert!((norm(&w.occluder_mean) - 1.0).abs() < 1e-12);
        assert_eq!(World::build(&cfg, 3).unwrap(), w);
        assert_ne!(World::build(&cfg, 4).unwrap().background, w.background);
    }
}
