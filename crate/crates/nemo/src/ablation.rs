//! Paired ablation experiments.
//!
//! Each suite runs two or more configurations that differ only in the ablated
//! component, on identical scenes, and returns one report per configuration.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eval::EvalReport;
use crate::experiment::{
    generate_scenes, train_on_scenes, Estimator, InferenceSettings, TrainSettings,
};
use crate::rng::stream;
use crate::scene::{OcclusionLevel, PoseBands, SceneConfig, SyntheticScene};
use crate::world::{World, WorldConfig};
use crate::{HarnessError, HarnessResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    NoOutlier,
    NoContrastive,
    InitCounts,
    UnseenPose,
}

impl AblationSuite {
    pub const ALL: [AblationSuite; 4] = [
        Self::NoOutlier,
        Self::NoContrastive,
        Self::InitCounts,
        Self::UnseenPose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoOutlier => "no_outlier",
            Self::NoContrastive => "no_contrastive",
            Self::InitCounts => "init_counts",
            Self::UnseenPose => "unseen_pose",
        }
    }
}

impl fmt::Display for AblationSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationSuite {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| HarnessError::Config(format!("unknown ablation suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub world: WorldConfig,
    pub scene: SceneConfig,
    pub seed: u64,
    /// Test scenes per level.
    pub count: usize,
    /// Levels evaluated by `no_outlier`; the other suites use L0.
    pub levels: Vec<OcclusionLevel>,
    pub inference: InferenceSettings,
    /// Training settings for `no_contrastive` (extractor mode) and
    /// `unseen_pose` (feature mode).
    pub train: TrainSettings,
    pub train_count: usize,
    pub init_counts: Vec<usize>,
    /// Half-width of the front and rear azimuth bands used for training in
    /// `unseen_pose`; side views are tested within the same half-width of
    /// `±π/2`.
    pub view_half_width: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            scene: SceneConfig::default(),
            seed: 0,
            count: 200,
            levels: OcclusionLevel::ALL.to_vec(),
            inference: InferenceSettings::default(),
            train: TrainSettings {
                learning_rate: 2e-4,
                w_feat: 300.0,
                w_back: 300.0,
                epochs: 20,
                extractor: true,
                ..TrainSettings::default()
            },
            train_count: 40,
            init_counts: vec![144, 36, 1],
            view_half_width: PI / 6.0,
        }
    }
}

/// Seed of the training scenes, independent of the test scenes' seed.
fn train_seed(seed: u64) -> u64 {
    stream(seed, "train", 0).random()
}

/// Scenes drawn from a union of azimuth bands, `count` split evenly.
fn scenes_in_bands(
    world: &World,
    bands: &[(f64, f64)],
    count: usize,
    cfg: &SceneConfig,
    seed: u64,
) -> HarnessResult<Vec<SyntheticScene>> {
    let mut out = Vec::with_capacity(count);
    for (k, &azimuth) in bands.iter().enumerate() {
        let n = count / bands.len() + usize::from(k < count % bands.len());
        let c = SceneConfig {
            pose_bands: PoseBands {
                azimuth,
                ..cfg.pose_bands
            },
            ..cfg.clone()
        };
        let sub = stream(seed, "bands", k as u64).random();
        out.extend(generate_scenes(world, &[OcclusionLevel::L0], n, &c, sub)?);
    }
    Ok(out)
}

pub fn run_ablation(suite: AblationSuite, cfg: &AblationConfig) -> HarnessResult<Vec<EvalReport>> {
    let world = World::build(&cfg.world, cfg.seed)?;
    let inf = &cfg.inference;
    match suite {
        AblationSuite::NoOutlier => {
            let scenes = generate_scenes(&world, &cfg.levels, cfg.count, &cfg.scene, cfg.seed)?;
            let est = Estimator::from_world(&world);
            let off = InferenceSettings {
                robust: false,
                ..inf.clone()
            };
            Ok(vec![
                est.evaluate("robust", &scenes, inf)?,
                est.evaluate("no_outlier", &scenes, &off)?,
            ])
        }
        AblationSuite::NoContrastive => {
            let sc = SceneConfig {
                image_mode: true,
                ..cfg.scene.clone()
            };
            let train = generate_scenes(
                &world,
                &[OcclusionLevel::L0],
                cfg.train_count,
                &sc,
                train_seed(cfg.seed),
            )?;
            let test = generate_scenes(&world, &[OcclusionLevel::L0], cfg.count, &sc, cfg.seed)?;
            let ts = TrainSettings {
                extractor: true,
                ..cfg.train.clone()
            };
            let mut reports = Vec::new();
            for (label, settings) in [
                ("full", ts.clone()),
                ("no_contrastive", ts.without_contrastive()),
            ] {
                let out = train_on_scenes(&world, &train, &settings, cfg.seed)?;
                reports.push(
                    Estimator::from_training(&out, world.intrinsics).evaluate(label, &test, inf)?,
                );
            }
            Ok(reports)
        }
        AblationSuite::InitCounts => {
            let scenes = generate_scenes(
                &world,
                &[OcclusionLevel::L0],
                cfg.count,
                &cfg.scene,
                cfg.seed,
            )?;
            let est = Estimator::from_world(&world);
            cfg.init_counts
                .iter()
                .map(|&n| {
                    est.evaluate(
                        &format!("inits_{n}"),
                        &scenes,
                        &InferenceSettings {
                            inits: n,
                            ..inf.clone()
                        },
                    )
                })
                .collect()
        }
        AblationSuite::UnseenPose => {
            let h = cfg.view_half_width;
            let front_rear = [(-h, h), (PI - h, PI + h)];
            let side = [(PI / 2.0 - h, PI / 2.0 + h), (1.5 * PI - h, 1.5 * PI + h)];
            let ts = TrainSettings {
                extractor: false,
                ..cfg.train.clone()
            };
            let tseed = train_seed(cfg.seed);
            let all_views = generate_scenes(
                &world,
                &[OcclusionLevel::L0],
                cfg.train_count,
                &cfg.scene,
                tseed,
            )?;
            let limited = scenes_in_bands(&world, &front_rear, cfg.train_count, &cfg.scene, tseed)?;
            let test = scenes_in_bands(&world, &side, cfg.count, &cfg.scene, cfg.seed)?;
            let mut reports = Vec::new();
            for (label, train) in [("all_views", &all_views), ("front_rear", &limited)] {
                let out = train_on_scenes(&world, train, &ts, cfg.seed)?;
                reports.push(
                    Estimator::from_training(&out, world.intrinsics).evaluate(label, &test, inf)?,
                );
            }
            Ok(reports)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in AblationSuite::ALL {
            assert_eq!(s.name().parse::<AblationSuite>().unwrap(), s);
        }
        assert_eq!(
            "No-Outlier".parse::<AblationSuite>().unwrap(),
            AblationSuite::NoOutlier
        );
        assert!("bogus".parse::<AblationSuite>().is_err());
    }

    #[test]
    fn no_outlier_is_a_null_change_without_occlusion() {
        let cfg = AblationConfig {
            count: 9,
            levels: vec![OcclusionLevel::L0],
            scene: SceneConfig {
                noise_sigma: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = run_ablation(AblationSuite::NoOutlier, &cfg).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].scenes.len(), 9);
        for (a, b) in r[0].scenes.iter().zip(&r[1].scenes) {
            assert_eq!(a.scene_id, b.scene_id);
        }
        assert!(r[0].median_deg < 1.0 && r[1].median_deg < 1.0);
        assert!((r[0].median_deg - r[1].median_deg).abs() < 0.5);
    }

    #[test]
    fn band_scenes_respect_azimuth_bands() {
        let world = World::build(
            &WorldConfig {
                feature_dim: 8,
                vertex_target: 100,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let s = scenes_in_bands(
            &world,
            &[(-0.2, 0.2), (3.0, 3.2)],
            5,
            &SceneConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!(s.len(), 5);
        for sc in &s {
            let a = sc.pose.azimuth();
            let d = |c: f64| (a - c).sin().atan2((a - c).cos()).abs();
            assert!(d(0.0) <= 0.2 + 1e-9 || d(3.1) <= 0.1 + 1e-9, "azimuth {a}");
        }
    }
}
