//! Accuracy metrics over sets of pose estimates.

use std::f64::consts::PI;

use nemo_core::{geodesic_error, CameraPose};
use serde::{Deserialize, Serialize};

use crate::scene::{OcclusionLevel, SyntheticScene};
use crate::{HarnessError, HarnessResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneError {
    pub scene_id: String,
    pub level: OcclusionLevel,
    pub subtype: usize,
    /// Geodesic rotation error in radians.
    pub error: f64,
}

impl SceneError {
    pub fn degrees(&self) -> f64 {
        self.error.to_degrees()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub scenes: Vec<SceneError>,
    pub acc_pi6: f64,
    pub acc_pi18: f64,
    pub median_deg: f64,
}

/// Fraction of errors strictly below `threshold`.
pub fn accuracy(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64
}

/// Median, averaging the two middle values of an even-length list.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl EvalReport {
    pub fn from_errors(label: impl Into<String>, scenes: Vec<SceneError>) -> Self {
        let errors: Vec<f64> = scenes.iter().map(|s| s.error).collect();
        Self {
            label: label.into(),
            acc_pi6: accuracy(&errors, PI / 6.0),
            acc_pi18: accuracy(&errors, PI / 18.0),
            median_deg: if errors.is_empty() {
                0.0
            } else {
                median(&errors).to_degrees()
            },
            scenes,
        }
    }

    /// Report restricted to one occlusion level.
    pub fn for_level(&self, level: OcclusionLevel) -> Self {
        let scenes = self
            .scenes
            .iter()
            .filter(|s| s.level == level)
            .cloned()
            .collect();
        Self::from_errors(format!("{}/{level}", self.label), scenes)
    }
}

/// Scores `estimates[k]` against `scenes[k]`.
pub fn evaluate(
    label: &str,
    estimates: &[CameraPose],
    scenes: &[SyntheticScene],
) -> HarnessResult<EvalReport> {
    if estimates.len() != scenes.len() {
        return Err(HarnessError::Config(format!(
            "{} estimates for {} scenes",
            estimates.len(),
            scenes.len()
        )));
    }
    let rows = estimates
        .iter()
        .zip(scenes)
        .map(|(e, s)| SceneError {
            scene_id: s.id.clone(),
            level: s.level,
            subtype: s.subtype,
            error: geodesic_error(&e.rotation(), &s.pose.rotation()),
        })
        .collect();
    Ok(EvalReport::from_errors(label, rows))
}
