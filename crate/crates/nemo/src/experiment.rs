//! Batch drivers shared by the CLI, the ablation runners and the tests.

use nemo_core::inference::{
    estimate_pose, init_grid_shape, sample_initial_poses_in, GradientMode, InitBands, PoseEstimate,
    RobustConfig,
};
use nemo_core::training::{
    extract_features, train, LinearPatchExtractor, LossWeights, TrainConfig, TrainInput,
    TrainOutput, TrainSample,
};
use nemo_core::{
    BackgroundModel, CameraIntrinsics, CameraPose, FeatureMap, NeuralMesh, TriangleMesh,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, EvalReport};
use crate::io::ModelSet;
use crate::scene::{generate_scene, OcclusionLevel, SceneConfig, SyntheticScene};
use crate::world::World;
use crate::{HarnessError, HarnessResult};

/// Serializable inference parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSettings {
    /// Number of initial poses; one of 144, 72, 36, 12, 6, 1.
    pub inits: usize,
    pub init_elevation: (f64, f64),
    pub init_theta: (f64, f64),
    pub prior_visible: f64,
    pub robust: bool,
    /// "finite-difference" or "analytic".
    pub gradient: String,
    pub step: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    pub max_halvings: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        let r = RobustConfig::default();
        let b = InitBands::default();
        Self {
            inits: 144,
            init_elevation: b.elevation,
            init_theta: b.theta,
            prior_visible: r.prior_visible,
            robust: r.robust,
            gradient: "finite-difference".into(),
            step: r.step,
            max_iterations: r.max_iterations,
            tolerance: r.tolerance,
            fd_step: r.fd_step,
            max_halvings: r.max_halvings,
        }
    }
}

impl InferenceSettings {
    pub fn robust_config(&self) -> HarnessResult<RobustConfig> {
        let gradient = match self.gradient.as_str() {
            "finite-difference" | "fd" => GradientMode::FiniteDifference,
            "analytic" => GradientMode::Analytic,
            g => return Err(HarnessError::Config(format!("unknown gradient mode {g:?}"))),
        };
        let cfg = RobustConfig {
            prior_visible: self.prior_visible,
            robust: self.robust,
            gradient,
            step: self.step,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            fd_step: self.fd_step,
            max_halvings: self.max_halvings,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_poses(&self, distance: f64) -> HarnessResult<Vec<CameraPose>> {
        let (a, e, t) = init_grid_shape(self.inits).ok_or_else(|| {
            HarnessError::Config(format!("unsupported init count {}", self.inits))
        })?;
        let bands = InitBands {
            elevation: self.init_elevation,
            theta: self.init_theta,
        };
        Ok(sample_initial_poses_in(a, e, t, distance, &bands)?)
    }
}

/// Generates `count` scenes per level; order is level-major, then index.
pub fn generate_scenes(
    world: &World,
    levels: &[OcclusionLevel],
    count: usize,
    cfg: &SceneConfig,
    seed: u64,
) -> HarnessResult<Vec<SyntheticScene>> {
    let jobs: Vec<(OcclusionLevel, u64)> = levels
        .iter()
        .flat_map(|&l| (0..count as u64).map(move |i| (l, i)))
        .collect();
    jobs.par_iter()
        .map(|&(l, i)| generate_scene(world, l, cfg, seed, i))
        .collect()
}

/// Pose models plus the feature source they expect.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub models: Vec<NeuralMesh>,
    pub background: BackgroundModel,
    pub intrinsics: CameraIntrinsics,
    /// When set, features are extracted from each scene's image.
    pub extractor: Option<LinearPatchExtractor>,
}

impl Estimator {
    /// The ground-truth world models, reading scene feature maps directly.
    pub fn from_world(world: &World) -> Self {
        Self {
            models: world.models.clone(),
            background: world.background.clone(),
            intrinsics: world.intrinsics,
            extractor: None,
        }
    }

    pub fn from_training(out: &TrainOutput, intrinsics: CameraIntrinsics) -> Self {
        Self {
            models: out.models.clone(),
            background: out.background.clone(),
            intrinsics,
            extractor: out.extractor.clone(),
        }
    }

    pub fn from_model_set(set: ModelSet) -> Self {
        Self {
            models: set.models,
            background: set.background,
            intrinsics: set.intrinsics,
            extractor: set.extractor,
        }
    }

    pub fn features(&self, scene: &SyntheticScene) -> HarnessResult<FeatureMap> {
        match &self.extractor {
            None => Ok(scene.features.clone()),
            Some(ex) => {
                let img = scene.image.as_ref().ok_or_else(|| {
                    HarnessError::Config(format!("scene {} has no image", scene.id))
                })?;
                Ok(extract_features(ex, img)?)
            }
        }
    }

    pub fn estimate(
        &self,
        scene: &SyntheticScene,
        settings: &InferenceSettings,
    ) -> HarnessResult<PoseEstimate> {
        let f = self.features(scene)?;
        let cfg = settings.robust_config()?;
        let inits = settings.initial_poses(scene.pose.distance())?;
        Ok(estimate_pose(
            &f,
            &self.models,
            &self.background,
            &self.intrinsics,
            &inits,
            &cfg,
        )?)
    }

    /// Estimates every scene (in parallel on the current rayon pool); output
    /// order matches `scenes`.
    pub fn estimate_all(
        &self,
        scenes: &[SyntheticScene],
        settings: &InferenceSettings,
    ) -> HarnessResult<Vec<PoseEstimate>> {
        scenes
            .par_iter()
            .map(|s| self.estimate(s, settings))
            .collect()
    }

    pub fn evaluate(
        &self,
        label: &str,
        scenes: &[SyntheticScene],
        settings: &InferenceSettings,
    ) -> HarnessResult<EvalReport> {
        let est = self.estimate_all(scenes, settings)?;
        let poses: Vec<CameraPose> = est.iter().map(|e| e.pose).collect();
        evaluate(label, &poses, scenes)
    }
}

/// Serializable training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub cosine_decay: bool,
    pub momentum: f64,
    pub w_ml: f64,
    pub w_feat: f64,
    pub w_back: f64,
    pub batch_size: usize,
    pub normalize: bool,
    pub feature_dim: usize,
    pub patch_size: usize,
    /// Train the linear extractor on scene images instead of using the
    /// scenes' feature maps.
    pub extractor: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            cosine_decay: t.cosine_decay,
            momentum: t.momentum,
            w_ml: t.weights.ml,
            w_feat: t.weights.feature,
            w_back: t.weights.back,
            batch_size: t.batch_size,
            normalize: t.normalize,
            feature_dim: t.feature_dim,
            patch_size: t.patch_size,
            extractor: false,
        }
    }
}

impl TrainSettings {
    pub fn without_contrastive(&self) -> Self {
        Self {
            w_feat: 0.0,
            w_back: 0.0,
            ..self.clone()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            cosine_decay: self.cosine_decay,
            momentum: self.momentum,
            weights: LossWeights::new(self.w_ml, self.w_feat, self.w_back),
            batch_size: self.batch_size,
            seed,
            normalize: self.normalize,
            feature_dim: self.feature_dim,
            patch_size: self.patch_size,
            freeze_extractor: false,
        }
    }
}

/// Trains on the given scenes with the world's meshes as the known geometry.
pub fn train_on_scenes(
    world: &World,
    scenes: &[SyntheticScene],
    settings: &TrainSettings,
    seed: u64,
) -> HarnessResult<TrainOutput> {
    let meshes: Vec<TriangleMesh> = world.models.iter().map(|m| m.mesh().clone()).collect();
    train_with_meshes(
        &meshes,
        &world.config.class_label,
        &world.intrinsics,
        scenes,
        settings,
        seed,
    )
}

/// Trains one model per mesh; `scenes[i].subtype` indexes `meshes`.
pub fn train_with_meshes(
    meshes: &[TriangleMesh],
    class_label: &str,
    intrinsics: &CameraIntrinsics,
    scenes: &[SyntheticScene],
    settings: &TrainSettings,
    seed: u64,
) -> HarnessResult<TrainOutput> {
    let samples = scenes
        .iter()
        .map(|s| {
            let input =
                if settings.extractor {
                    TrainInput::Image(s.image.clone().ok_or_else(|| {
                        HarnessError::Config(format!("scene {} has no image", s.id))
                    })?)
                } else {
                    TrainInput::Features(s.features.clone())
                };
            Ok(TrainSample {
                input,
                pose: s.pose,
                subtype: s.subtype,
            })
        })
        .collect::<HarnessResult<Vec<_>>>()?;
    Ok(train(
        &samples,
        meshes,
        class_label,
        intrinsics,
        &settings.train_config(seed),
    )?)
}
