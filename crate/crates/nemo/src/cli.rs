//! Command-line driver.
//!
//! Every subcommand reads an optional JSON config, applies flag overrides,
//! runs inside a rayon pool of `--jobs` threads, and writes its outputs plus
//! `resolved_config.json` into a staging directory that is renamed onto the
//! output directory on success.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ablation::{run_ablation, AblationConfig, AblationSuite};
use crate::eval::{evaluate, EvalReport};
use crate::experiment::{
    generate_scenes, train_with_meshes, Estimator, InferenceSettings, TrainSettings,
};
use crate::io::{
    read_json, read_model_set, read_scene_set, write_curve_csv, write_json, write_loss_trace,
    write_model_set, write_occlusion_map, write_report_csv, write_scene_set, EstimateRecord,
    ReportSummary, MODEL_SET_FILE, SCENE_MANIFEST_FILE,
};
use crate::landscape::{argmin, loss_landscape_sweep, PoseParameter};
use crate::scene::{OcclusionLevel, SceneConfig};
use crate::world::{World, WorldConfig};
use crate::{HarnessError, HarnessResult};

#[derive(Debug, Parser)]
#[command(
    name = "nemo",
    version,
    about = "Neural mesh pose estimation on synthetic scenes"
)]
pub struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes and the world models that produced them.
    Gen(GenArgs),
    /// Train neural mesh models on generated scenes.
    Train(TrainArgs),
    /// Estimate the pose of every scene.
    Estimate(EstimateArgs),
    /// Score pose estimates against ground truth.
    Eval(EvalArgs),
    /// Sweep the loss along one pose parameter around the ground truth.
    Landscape(LandscapeArgs),
    /// Run a paired ablation suite.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, replaced on success.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated occlusion levels, e.g. `L0,L2`.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<OcclusionLevel>>,
    /// Scenes per level.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Also render colour images for extractor-mode training.
    #[arg(long)]
    pub images: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scene directory written by `gen`.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Model directory supplying the meshes; defaults to `<scenes>/world`.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train a linear patch extractor on scene images.
    #[arg(long)]
    pub extractor: bool,
    /// Set both contrastive weights to zero.
    #[arg(long)]
    pub no_contrastive: bool,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    /// Number of initial poses: 144, 72, 36, 12, 6 or 1.
    #[arg(long)]
    pub inits: Option<usize>,
    /// Disable the outlier model.
    #[arg(long)]
    pub no_outlier: bool,
    /// `finite-difference` or `analytic`.
    #[arg(long)]
    pub gradient: Option<String>,
}

impl InferenceArgs {
    fn apply(&self, s: &mut InferenceSettings) {
        set(&mut s.inits, self.inits);
        set(&mut s.gradient, self.gradient.clone());
        if self.no_outlier {
            s.robust = false;
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Model directory written by `gen` (its `world` subdirectory) or `train`.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Write one occlusion graymap per scene.
    #[arg(long)]
    pub dump_occlusion: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// `estimates.json` written by `estimate`.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub parameter: Option<PoseParameter>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Half-width of the sweep in radians.
    #[arg(long)]
    pub span: Option<f64>,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub suite: Option<AblationSuite>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<OcclusionLevel>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub levels: Vec<OcclusionLevel>,
    pub count: usize,
    pub world: WorldConfig,
    pub scene: SceneConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            out: "runs/gen".into(),
            seed: 0,
            levels: vec![OcclusionLevel::L0],
            count: 10,
            world: WorldConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub scenes: PathBuf,
    pub geometry: Option<PathBuf>,
    pub train: TrainSettings,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            out: "runs/train".into(),
            seed: 0,
            scenes: "runs/gen".into(),
            geometry: None,
            train: TrainSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub out: PathBuf,
    pub scenes: PathBuf,
    pub models: PathBuf,
    pub inference: InferenceSettings,
    pub dump_occlusion: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            out: "runs/estimate".into(),
            scenes: "runs/gen".into(),
            models: "runs/gen/world".into(),
            inference: InferenceSettings::default(),
            dump_occlusion: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub out: PathBuf,
    pub scenes: PathBuf,
    pub estimates: PathBuf,
    pub label: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            out: "runs/eval".into(),
            scenes: "runs/gen".into(),
            estimates: "runs/estimate/estimates.json".into(),
            label: "eval".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeConfig {
    pub out: PathBuf,
    pub scenes: PathBuf,
    pub models: PathBuf,
    pub parameter: PoseParameter,
    pub steps: usize,
    pub span: f64,
    pub inference: InferenceSettings,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            out: "runs/landscape".into(),
            scenes: "runs/gen".into(),
            models: "runs/gen/world".into(),
            parameter: PoseParameter::Azimuth,
            steps: 72,
            span: PI,
            inference: InferenceSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub out: PathBuf,
    pub suite: AblationSuite,
    #[serde(flatten)]
    pub base: AblationConfig,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            out: "runs/ablate".into(),
            suite: AblationSuite::NoOutlier,
            base: AblationConfig::default(),
        }
    }
}

/// Overall and per-level accuracy of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub overall: ReportSummary,
    pub levels: Vec<ReportSummary>,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        let levels = OcclusionLevel::ALL
            .into_iter()
            .filter(|&l| r.scenes.iter().any(|s| s.level == l))
            .map(|l| ReportSummary::from(&r.for_level(l)))
            .collect();
        Self {
            overall: r.into(),
            levels,
        }
    }
}

/// Argmin of one landscape curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeEntry {
    pub scene_id: String,
    pub file: String,
    pub gt_value: f64,
    pub argmin_value: f64,
    /// Steps between the argmin and the sample nearest the ground truth.
    pub argmin_offset_steps: usize,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load<T: Default + DeserializeOwned>(path: Option<&Path>) -> HarnessResult<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn require(path: &Path, what: &str) -> HarnessResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs `body` against a fresh staging directory, writes the resolved config
/// next to its outputs and moves the result onto `out`. An existing `out` is
/// replaced only if it holds a previous run's `resolved_config.json` or is
/// empty.
fn with_output<C: Serialize>(
    out: &Path,
    config: &C,
    body: impl FnOnce(&Path) -> HarnessResult<()>,
) -> HarnessResult<()> {
    if out.exists() {
        let empty = fs::read_dir(out)
            .map_err(|e| io_error(out, e))?
            .next()
            .is_none();
        if !empty && !out.join("resolved_config.json").exists() {
            return Err(HarnessError::Config(format!(
                "output directory {} exists and was not written by a previous run",
                out.display()
            )));
        }
    }
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let staging = out.with_file_name(format!(".{name}.partial"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| io_error(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| io_error(&staging, e))?;
    write_json(&staging.join("resolved_config.json"), config)?;
    if let Err(e) = body(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        fs::remove_dir_all(out).map_err(|e| io_error(out, e))?;
    }
    fs::rename(&staging, out).map_err(|e| io_error(out, e))
}

pub fn cmd_gen(cfg: &GenConfig) -> HarnessResult<()> {
    if cfg.levels.is_empty() || cfg.count == 0 {
        return Err(HarnessError::Config(
            "gen needs at least one level and a positive count".into(),
        ));
    }
    with_output(&cfg.out, cfg, |dir| {
        let world = World::build(&cfg.world, cfg.seed)?;
        let scenes = generate_scenes(&world, &cfg.levels, cfg.count, &cfg.scene, cfg.seed)?;
        write_scene_set(dir, cfg.seed, &scenes)?;
        write_model_set(
            &dir.join("world"),
            &world.models,
            &world.background,
            &world.intrinsics,
            None,
        )?;
        println!("wrote {} scenes to {}", scenes.len(), cfg.out.display());
        Ok(())
    })
}

pub fn cmd_train(cfg: &TrainRunConfig) -> HarnessResult<()> {
    require(&cfg.scenes.join(SCENE_MANIFEST_FILE), "scene manifest")?;
    let geometry = cfg
        .geometry
        .clone()
        .unwrap_or_else(|| cfg.scenes.join("world"));
    require(&geometry.join(MODEL_SET_FILE), "model set")?;
    with_output(&cfg.out, cfg, |dir| {
        let scenes = read_scene_set(&cfg.scenes)?;
        let geo = read_model_set(&geometry)?;
        let meshes: Vec<_> = geo.models.iter().map(|m| m.mesh().clone()).collect();
        let label = geo.models[0].class_label().to_string();
        let out = train_with_meshes(
            &meshes,
            &label,
            &geo.intrinsics,
            &scenes,
            &cfg.train,
            cfg.seed,
        )?;
        write_model_set(
            dir,
            &out.models,
            &out.background,
            &geo.intrinsics,
            out.extractor.as_ref(),
        )?;
        write_loss_trace(&dir.join("loss_trace.csv"), &out.trace)?;
        if let Some(last) = out.trace.last() {
            println!(
                "trained {} epochs, final loss {:.6}",
                out.trace.len(),
                last.terms.total
            );
        }
        Ok(())
    })
}

pub fn cmd_estimate(cfg: &EstimateConfig) -> HarnessResult<()> {
    require(&cfg.scenes.join(SCENE_MANIFEST_FILE), "scene manifest")?;
    require(&cfg.models.join(MODEL_SET_FILE), "model set")?;
    cfg.inference.robust_config()?;
    cfg.inference.initial_poses(1.0)?;
    let mut aborted = Vec::new();
    with_output(&cfg.out, cfg, |dir| {
        let scenes = read_scene_set(&cfg.scenes)?;
        let est = Estimator::from_model_set(read_model_set(&cfg.models)?);
        let estimates = est.estimate_all(&scenes, &cfg.inference)?;
        let records: Vec<EstimateRecord> = scenes
            .iter()
            .zip(&estimates)
            .map(|(s, e)| EstimateRecord::new(&s.id, e))
            .collect();
        write_json(&dir.join("estimates.json"), &records)?;
        if cfg.dump_occlusion {
            for (s, e) in scenes.iter().zip(&estimates) {
                write_occlusion_map(
                    &dir.join("occlusion").join(format!("{}.pgm", s.id)),
                    &e.occlusion,
                )?;
            }
        }
        aborted = scenes
            .iter()
            .zip(&estimates)
            .filter(|(_, e)| e.aborted)
            .map(|(s, _)| s.id.clone())
            .collect();
        println!("estimated {} scenes", records.len());
        Ok(())
    })?;
    if aborted.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Numeric(format!(
            "non-finite loss in scenes {}",
            aborted.join(", ")
        )))
    }
}

pub fn cmd_eval(cfg: &EvalConfig) -> HarnessResult<()> {
    require(&cfg.scenes.join(SCENE_MANIFEST_FILE), "scene manifest")?;
    require(&cfg.estimates, "estimates file")?;
    with_output(&cfg.out, cfg, |dir| {
        let scenes = read_scene_set(&cfg.scenes)?;
        let records: Vec<EstimateRecord> = read_json(&cfg.estimates)?;
        let by_id: HashMap<&str, &EstimateRecord> =
            records.iter().map(|r| (r.scene_id.as_str(), r)).collect();
        let poses = scenes
            .iter()
            .map(|s| {
                by_id
                    .get(s.id.as_str())
                    .ok_or_else(|| HarnessError::Config(format!("no estimate for scene {}", s.id)))?
                    .pose(s.pose.distance())
            })
            .collect::<HarnessResult<Vec<_>>>()?;
        let report = evaluate(&cfg.label, &poses, &scenes)?;
        write_report_csv(&dir.join("report.csv"), &report)?;
        let summary = EvalSummary::from(&report);
        write_json(&dir.join("summary.json"), &summary)?;
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
        Ok(())
    })
}

pub fn cmd_landscape(cfg: &LandscapeConfig) -> HarnessResult<()> {
    require(&cfg.scenes.join(SCENE_MANIFEST_FILE), "scene manifest")?;
    require(&cfg.models.join(MODEL_SET_FILE), "model set")?;
    if cfg.steps == 0 || !(cfg.span >= 0.0) {
        return Err(HarnessError::Config(
            "landscape needs steps > 0 and span >= 0".into(),
        ));
    }
    let rc = cfg.inference.robust_config()?;
    with_output(&cfg.out, cfg, |dir| {
        let scenes = read_scene_set(&cfg.scenes)?;
        let est = Estimator::from_model_set(read_model_set(&cfg.models)?);
        let curves = scenes
            .par_iter()
            .map(|s| {
                let model = est.models.get(s.subtype).ok_or_else(|| {
                    HarnessError::Config(format!("scene {} needs subtype {}", s.id, s.subtype))
                })?;
                let f = est.features(s)?;
                loss_landscape_sweep(
                    &f,
                    model,
                    &est.background,
                    &est.intrinsics,
                    &s.pose,
                    cfg.parameter,
                    cfg.steps,
                    cfg.span,
                    &rc,
                )
            })
            .collect::<HarnessResult<Vec<_>>>()?;
        let mut entries = Vec::with_capacity(scenes.len());
        for (s, curve) in scenes.iter().zip(&curves) {
            let file = format!("{}_{}.csv", s.id, cfg.parameter);
            write_curve_csv(&dir.join(&file), curve)?;
            let gt = s.pose.angles()[cfg.parameter.index()];
            let best = argmin(curve).expect("steps > 0");
            let nearest = (0..curve.len())
                .min_by(|&a, &b| (curve[a].0 - gt).abs().total_cmp(&(curve[b].0 - gt).abs()))
                .expect("steps > 0");
            entries.push(LandscapeEntry {
                scene_id: s.id.clone(),
                file,
                gt_value: gt,
                argmin_value: curve[best].0,
                argmin_offset_steps: best.abs_diff(nearest),
            });
        }
        write_json(&dir.join("summary.json"), &entries)?;
        println!("swept {} scenes", entries.len());
        Ok(())
    })
}

pub fn cmd_ablate(cfg: &AblateConfig) -> HarnessResult<()> {
    with_output(&cfg.out, cfg, |dir| {
        let reports = run_ablation(cfg.suite, &cfg.base)?;
        for r in &reports {
            write_report_csv(&dir.join(format!("{}.csv", r.label)), r)?;
        }
        let summary: Vec<EvalSummary> = reports.iter().map(EvalSummary::from).collect();
        write_json(&dir.join("summary.json"), &summary)?;
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
        Ok(())
    })
}

fn dispatch(command: Command) -> HarnessResult<()> {
    match command {
        Command::Gen(a) => {
            let mut c: GenConfig = load(a.common.config.as_deref())?;
            set(&mut c.out, a.common.out);
            set(&mut c.seed, a.seed);
            set(&mut c.levels, a.levels);
            set(&mut c.count, a.count);
            set(&mut c.scene.noise_sigma, a.noise);
            c.scene.image_mode |= a.images;
            cmd_gen(&c)
        }
        Command::Train(a) => {
            let mut c: TrainRunConfig = load(a.common.config.as_deref())?;
            set(&mut c.out, a.common.out);
            set(&mut c.seed, a.seed);
            set(&mut c.scenes, a.scenes);
            if a.geometry.is_some() {
                c.geometry = a.geometry;
            }
            set(&mut c.train.epochs, a.epochs);
            set(&mut c.train.learning_rate, a.lr);
            c.train.extractor |= a.extractor;
            if a.no_contrastive {
                c.train = c.train.without_contrastive();
            }
            cmd_train(&c)
        }
        Command::Estimate(a) => {
            let mut c: EstimateConfig = load(a.common.config.as_deref())?;
            set(&mut c.out, a.common.out);
            set(&mut c.scenes, a.scenes);
            set(&mut c.models, a.models);
            a.inference.apply(&mut c.inference);
            c.dump_occlusion |= a.dump_occlusion;
            cmd_estimate(&c)
        }
        Command::Eval(a) => {
            let mut c: EvalConfig = load(a.common.config.as_deref())?;
            set(&mut c.out, a.common.out);
            set(&mut c.scenes, a.scenes);
            set(&mut c.estimates, a.estimates);
            set(&mut c.label, a.label);
            cmd_eval(&c)
        }
        Command::Landscape(a) => {
            let mut c: LandscapeConfig = load(a.common.config.as_deref())?;
            set(&mut c.out, a.common.out);
            set(&mut c.scenes, a.scenes);
            set(&mut c.models, a.models);
            set(&mut c.parameter, a.parameter);
            set(&mut c.steps, a.steps);
            set(&mut c.span, a.span);
            a.inference.apply(&mut c.inference);
            cmd_landscape(&c)
        }
        Command::Ablate(a) => {
            let mut c: AblateConfig = load(a.common.config.as_deref())?;
            set(&mut c.out, a.common.out);
            set(&mut c.suite, a.suite);
            set(&mut c.base.seed, a.seed);
            set(&mut c.base.count, a.count);
            set(&mut c.base.levels, a.levels);
            cmd_ablate(&c)
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
