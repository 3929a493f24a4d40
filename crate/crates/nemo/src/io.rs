//! On-disk formats: NMT1 tensors, binary graymaps, mesh and model JSON,
//! scene bundles and CSV tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nemo_core::inference::{OcclusionMap, PoseEstimate};
use nemo_core::training::{EpochStats, LinearPatchExtractor};
use nemo_core::{
    BackgroundModel, CameraIntrinsics, CameraPose, FeatureMap, NeuralMesh, TriangleMesh, Vec3,
};
use serde::{Deserialize, Serialize};

use crate::eval::EvalReport;
use crate::scene::{OcclusionLevel, SyntheticScene};
use crate::{HarnessError, HarnessResult};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> HarnessResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> HarnessResult<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> HarnessResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> HarnessResult<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| format_err(path, e.to_string()))
}

const NMT_MAGIC: &[u8; 4] = b"NMT1";

/// Three-dimensional `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_f64(dims: [usize; 3], data: &[f64]) -> Self {
        Self {
            dims,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn encode_nmt(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.data.len());
    out.extend_from_slice(NMT_MAGIC);
    for d in t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_nmt(bytes: &[u8]) -> Result<Tensor, String> {
    if bytes.len() < 16 || &bytes[..4] != NMT_MAGIC {
        return Err("not an NMT1 tensor".into());
    }
    let dim =
        |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let dims = [dim(0), dim(1), dim(2)];
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or("tensor size overflows")?;
    if bytes.len() != 16 + 4 * n {
        return Err(format!(
            "expected {} data bytes, found {}",
            4 * n,
            bytes.len() - 16
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn write_nmt(path: &Path, t: &Tensor) -> HarnessResult<()> {
    write_file(path, &encode_nmt(t))
}

pub fn read_nmt(path: &Path) -> HarnessResult<Tensor> {
    decode_nmt(&read_file(path)?).map_err(|m| format_err(path, m))
}

pub fn write_feature_map(path: &Path, f: &FeatureMap) -> HarnessResult<()> {
    write_nmt(
        path,
        &Tensor::from_f64([f.height(), f.width(), f.depth()], f.as_slice()),
    )
}

pub fn read_feature_map(path: &Path) -> HarnessResult<FeatureMap> {
    let t = read_nmt(path)?;
    Ok(FeatureMap::from_vec(
        t.dims[0],
        t.dims[1],
        t.dims[2],
        t.to_f64(),
    )?)
}

/// Binary graymap (`P5`, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated graymap header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err("not a binary graymap".into());
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad header value {s:?}"))
    };
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(format!("unsupported maxval {max}"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(format!("expected {} pixels, found {}", w * h, data.len()));
    }
    Ok((w, h, data.to_vec()))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> HarnessResult<()> {
    let px: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_file(path, &encode_pgm(width, height, &px))
}

pub fn read_mask(path: &Path) -> HarnessResult<(usize, usize, Vec<bool>)> {
    let (w, h, px) = decode_pgm(&read_file(path)?).map_err(|m| format_err(path, m))?;
    Ok((w, h, px.into_iter().map(|p| p >= 128).collect()))
}

pub fn write_occlusion_map(path: &Path, map: &OcclusionMap) -> HarnessResult<()> {
    let px: Vec<u8> = map.labels.iter().map(|l| l.gray()).collect();
    write_file(path, &encode_pgm(map.width, map.height, &px))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshFile {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl MeshFile {
    pub fn from_mesh(m: &TriangleMesh) -> Self {
        Self {
            vertices: m.vertices().iter().map(|v| v.to_array()).collect(),
            faces: m.faces().to_vec(),
        }
    }

    pub fn to_mesh(&self) -> nemo_core::Result<TriangleMesh> {
        TriangleMesh::new(
            self.vertices.iter().map(|&v| Vec3::from_array(v)).collect(),
            self.faces.clone(),
        )
    }
}

pub fn write_mesh(path: &Path, m: &TriangleMesh) -> HarnessResult<()> {
    write_json(path, &MeshFile::from_mesh(m))
}

pub fn read_mesh(path: &Path) -> HarnessResult<TriangleMesh> {
    Ok(read_json::<MeshFile>(path)?.to_mesh()?)
}

/// Model manifest; file names are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub feature_dim: usize,
    pub class_label: String,
    pub normalized: bool,
    pub mesh_file: String,
    pub theta_file: String,
    pub beta_file: String,
}

fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(name)
}

/// Writes `<stem>.json`, `<stem>_mesh.json`, `<stem>_theta.nmt` and
/// `<stem>_beta.nmt` into `dir`; returns the manifest path.
pub fn write_model(
    dir: &Path,
    stem: &str,
    model: &NeuralMesh,
    bg: &BackgroundModel,
) -> HarnessResult<PathBuf> {
    let manifest = ModelManifest {
        feature_dim: model.dim(),
        class_label: model.class_label().to_string(),
        normalized: model.is_normalized(),
        mesh_file: format!("{stem}_mesh.json"),
        theta_file: format!("{stem}_theta.nmt"),
        beta_file: format!("{stem}_beta.nmt"),
    };
    write_mesh(&dir.join(&manifest.mesh_file), model.mesh())?;
    let r = model.mesh().vertex_count();
    write_nmt(
        &dir.join(&manifest.theta_file),
        &Tensor::from_f64([r, model.dim(), 1], model.features()),
    )?;
    write_nmt(
        &dir.join(&manifest.beta_file),
        &Tensor::from_f64([bg.dim(), 1, 1], bg.beta()),
    )?;
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn read_model(path: &Path) -> HarnessResult<(NeuralMesh, BackgroundModel)> {
    let m: ModelManifest = read_json(path)?;
    let mesh = read_mesh(&sibling(path, &m.mesh_file))?;
    let theta_path = sibling(path, &m.theta_file);
    let theta = read_nmt(&theta_path)?;
    if theta.dims[0] != mesh.vertex_count() || theta.dims[1] * theta.dims[2] != m.feature_dim {
        return Err(format_err(
            &theta_path,
            format!(
                "shape {:?} does not fit the mesh and feature_dim",
                theta.dims
            ),
        ));
    }
    let beta_path = sibling(path, &m.beta_file);
    let beta = read_nmt(&beta_path)?;
    if beta.data.len() != m.feature_dim {
        return Err(format_err(
            &beta_path,
            format!("expected {} values", m.feature_dim),
        ));
    }
    let model = NeuralMesh::new(
        mesh,
        theta.to_f64(),
        m.feature_dim,
        m.class_label,
        m.normalized,
    )?;
    let bg = BackgroundModel::new(beta.to_f64(), 1.0, m.normalized)?;
    Ok((model, bg))
}

/// Extractor weights as a `dim x patch*patch x channels` tensor, plus the
/// normalization flag in a sidecar manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorManifest {
    pub patch_size: usize,
    pub in_channels: usize,
    pub feature_dim: usize,
    pub normalize: bool,
    pub weights_file: String,
}

pub fn write_extractor(dir: &Path, ex: &LinearPatchExtractor) -> HarnessResult<PathBuf> {
    let m = ExtractorManifest {
        patch_size: ex.patch(),
        in_channels: ex.in_channels(),
        feature_dim: ex.dim(),
        normalize: ex.normalizes(),
        weights_file: "extractor_weights.nmt".into(),
    };
    write_nmt(
        &dir.join(&m.weights_file),
        &Tensor::from_f64(
            [ex.dim(), ex.patch() * ex.patch(), ex.in_channels()],
            ex.weights(),
        ),
    )?;
    let path = dir.join("extractor.json");
    write_json(&path, &m)?;
    Ok(path)
}

pub fn read_extractor(path: &Path) -> HarnessResult<LinearPatchExtractor> {
    let m: ExtractorManifest = read_json(path)?;
    let w = read_nmt(&sibling(path, &m.weights_file))?;
    Ok(LinearPatchExtractor::new(
        m.patch_size,
        m.in_channels,
        m.feature_dim,
        w.to_f64(),
        m.normalize,
    )?)
}

/// JSON metadata of a persisted scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub scene_id: String,
    pub seed: u64,
    pub index: u64,
    pub level: OcclusionLevel,
    pub subtype: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub theta: f64,
    pub distance: f64,
    pub occluded_fraction: f64,
    pub features_file: String,
    pub mask_file: String,
    pub fg_file: String,
    pub image_file: Option<String>,
}

/// Writes `<id>.json`, `<id>_features.nmt`, `<id>_occluder.pgm`,
/// `<id>_fg.pgm` and (when present) `<id>_image.nmt` into `dir`.
pub fn write_scene(dir: &Path, s: &SyntheticScene) -> HarnessResult<PathBuf> {
    let id = &s.id;
    let meta = SceneMeta {
        scene_id: id.clone(),
        seed: s.seed,
        index: s.index,
        level: s.level,
        subtype: s.subtype,
        azimuth: s.pose.azimuth(),
        elevation: s.pose.elevation(),
        theta: s.pose.theta(),
        distance: s.pose.distance(),
        occluded_fraction: s.occluded_fraction(),
        features_file: format!("{id}_features.nmt"),
        mask_file: format!("{id}_occluder.pgm"),
        fg_file: format!("{id}_fg.pgm"),
        image_file: s.image.as_ref().map(|_| format!("{id}_image.nmt")),
    };
    let (w, h) = (s.features.width(), s.features.height());
    write_feature_map(&dir.join(&meta.features_file), &s.features)?;
    write_mask(&dir.join(&meta.mask_file), w, h, &s.occluder_mask)?;
    write_mask(&dir.join(&meta.fg_file), w, h, &s.fg_mask)?;
    if let (Some(img), Some(name)) = (&s.image, &meta.image_file) {
        write_feature_map(&dir.join(name), img)?;
    }
    let path = dir.join(format!("{id}.json"));
    write_json(&path, &meta)?;
    Ok(path)
}

/// Reads a scene. Feature values round-trip through `f32`.
pub fn read_scene(path: &Path) -> HarnessResult<SyntheticScene> {
    let m: SceneMeta = read_json(path)?;
    let features = read_feature_map(&sibling(path, &m.features_file))?;
    let (_, _, occluder_mask) = read_mask(&sibling(path, &m.mask_file))?;
    let (_, _, fg_mask) = read_mask(&sibling(path, &m.fg_file))?;
    let image = m
        .image_file
        .as_ref()
        .map(|f| read_feature_map(&sibling(path, f)))
        .transpose()?;
    Ok(SyntheticScene {
        id: m.scene_id,
        seed: m.seed,
        index: m.index,
        level: m.level,
        subtype: m.subtype,
        pose: CameraPose::new(m.azimuth, m.elevation, m.theta, m.distance)?,
        features,
        image,
        occluder_mask,
        fg_mask,
    })
}

/// Fixed-precision float formatting for CSV output.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.9}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> HarnessResult<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", header.join(",")).expect("write to memory");
    for r in rows {
        writeln!(out, "{}", r.join(",")).expect("write to memory");
    }
    write_file(path, &out)
}

pub fn write_loss_trace(path: &Path, trace: &[EpochStats]) -> HarnessResult<()> {
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                fmt_f(e.terms.ml),
                fmt_f(e.terms.feature),
                fmt_f(e.terms.back),
                fmt_f(e.terms.total),
            ]
        })
        .collect();
    write_csv(path, &["epoch", "l_ml", "l_feat", "l_back", "total"], &rows)
}

pub fn write_report_csv(path: &Path, report: &EvalReport) -> HarnessResult<()> {
    use std::f64::consts::PI;
    let rows: Vec<Vec<String>> = report
        .scenes
        .iter()
        .map(|s| {
            vec![
                s.scene_id.clone(),
                s.level.to_string(),
                s.subtype.to_string(),
                fmt_f(s.degrees()),
                u8::from(s.error < PI / 6.0).to_string(),
                u8::from(s.error < PI / 18.0).to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "scene_id",
            "level",
            "subtype",
            "error_deg",
            "acc_pi6",
            "acc_pi18",
        ],
        &rows,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub label: String,
    pub count: usize,
    pub acc_pi6: f64,
    pub acc_pi18: f64,
    pub median_deg: f64,
}

impl From<&EvalReport> for ReportSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            label: r.label.clone(),
            count: r.scenes.len(),
            acc_pi6: r.acc_pi6,
            acc_pi18: r.acc_pi18,
            median_deg: r.median_deg,
        }
    }
}

pub fn write_curve_csv(path: &Path, curve: &[(f64, f64)]) -> HarnessResult<()> {
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|&(p, l)| vec![fmt_f(p), fmt_f(l)])
        .collect();
    write_csv(path, &["param_value", "nll"], &rows)
}

/// A directory of subtype models sharing one background model and camera,
/// optionally with the extractor that produces their features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSetManifest {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub models: Vec<String>,
    pub extractor: Option<String>,
}

pub const MODEL_SET_FILE: &str = "models.json";

/// Writes `models.json` plus one model bundle per subtype (`subtype_<k>`).
pub fn write_model_set(
    dir: &Path,
    models: &[NeuralMesh],
    bg: &BackgroundModel,
    intr: &CameraIntrinsics,
    extractor: Option<&LinearPatchExtractor>,
) -> HarnessResult<PathBuf> {
    let mut names = Vec::new();
    for (k, m) in models.iter().enumerate() {
        let p = write_model(dir, &format!("subtype_{k}"), m, bg)?;
        names.push(file_name(&p));
    }
    let extractor = extractor
        .map(|ex| write_extractor(dir, ex))
        .transpose()?
        .map(|p| file_name(&p));
    let manifest = ModelSetManifest {
        focal: intr.focal,
        cx: intr.cx,
        cy: intr.cy,
        width: intr.width,
        height: intr.height,
        models: names,
        extractor,
    };
    let path = dir.join(MODEL_SET_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct ModelSet {
    pub models: Vec<NeuralMesh>,
    pub background: BackgroundModel,
    pub intrinsics: CameraIntrinsics,
    pub extractor: Option<LinearPatchExtractor>,
}

/// Reads a model set from its directory.
pub fn read_model_set(dir: &Path) -> HarnessResult<ModelSet> {
    let path = dir.join(MODEL_SET_FILE);
    let m: ModelSetManifest = read_json(&path)?;
    let mut models = Vec::new();
    let mut background = None;
    for name in &m.models {
        let (model, bg) = read_model(&dir.join(name))?;
        models.push(model);
        background.get_or_insert(bg);
    }
    let background = background.ok_or_else(|| format_err(&path, "no models listed"))?;
    let intrinsics = CameraIntrinsics::new(m.focal, m.cx, m.cy, m.width, m.height)?;
    let extractor = m
        .extractor
        .as_ref()
        .map(|e| read_extractor(&dir.join(e)))
        .transpose()?;
    Ok(ModelSet {
        models,
        background,
        intrinsics,
        extractor,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: OcclusionLevel,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: String,
    pub file: String,
    pub level: OcclusionLevel,
    pub seed: u64,
    pub index: u64,
}

/// Index of a generated scene directory, in generation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub seed: u64,
    pub levels: Vec<LevelCount>,
    pub scenes: Vec<SceneEntry>,
}

pub const SCENE_MANIFEST_FILE: &str = "manifest.json";

/// Writes every scene plus `manifest.json` into `dir`.
pub fn write_scene_set(dir: &Path, seed: u64, scenes: &[SyntheticScene]) -> HarnessResult<PathBuf> {
    let mut levels: Vec<LevelCount> = Vec::new();
    let mut entries = Vec::with_capacity(scenes.len());
    for s in scenes {
        let p = write_scene(dir, s)?;
        match levels.iter_mut().find(|l| l.level == s.level) {
            Some(l) => l.count += 1,
            None => levels.push(LevelCount {
                level: s.level,
                count: 1,
            }),
        }
        entries.push(SceneEntry {
            scene_id: s.id.clone(),
            file: file_name(&p),
            level: s.level,
            seed: s.seed,
            index: s.index,
        });
    }
    let path = dir.join(SCENE_MANIFEST_FILE);
    write_json(
        &path,
        &SceneManifest {
            seed,
            levels,
            scenes: entries,
        },
    )?;
    Ok(path)
}

/// Reads all scenes listed in `dir/manifest.json`, in manifest order.
pub fn read_scene_set(dir: &Path) -> HarnessResult<Vec<SyntheticScene>> {
    let m: SceneManifest = read_json(&dir.join(SCENE_MANIFEST_FILE))?;
    m.scenes
        .iter()
        .map(|e| read_scene(&dir.join(&e.file)))
        .collect()
}

/// Per-scene output of pose estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub scene_id: String,
    pub subtype: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub theta: f64,
    pub loss: f64,
    pub iterations: usize,
    pub init_index: usize,
}

impl EstimateRecord {
    pub fn new(scene_id: &str, e: &PoseEstimate) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            subtype: e.subtype,
            azimuth: e.pose.azimuth(),
            elevation: e.pose.elevation(),
            theta: e.pose.theta(),
            loss: e.loss,
            iterations: e.iterations,
            init_index: e.init_index,
        }
    }

    pub fn pose(&self, distance: f64) -> HarnessResult<CameraPose> {
        Ok(CameraPose::new(
            self.azimuth,
            self.elevation,
            self.theta,
            distance,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmt_layout() {
        let t = Tensor {
            dims: [2, 1, 1],
            data: vec![1.0, -2.5],
        };
        let b = encode_nmt(&t);
        assert_eq!(&b[..4], b"NMT1");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..16], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(decode_nmt(&b).unwrap(), t);
        assert!(decode_nmt(&b[..19]).is_err());
        assert!(decode_nmt(b"NMT2\0\0\0\0").is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let b = encode_pgm(3, 2, &[0, 128, 255, 1, 2, 3]);
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode_pgm(&b).unwrap(), (3, 2, vec![0, 128, 255, 1, 2, 3]));
        let commented = b"P5\n# c\n3 2\n255\n\x00\x01\x02\x03\x04\x05";
        assert_eq!(decode_pgm(commented).unwrap().2, vec![0, 1, 2, 3, 4, 5]);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
