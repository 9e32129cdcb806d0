//! Experiment file: every module config plus the paths a command reads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use fovea::cropper::{CropConfig, EventParams};
use fovea::geometry::Resolution;
use fovea::preprocess::Preprocessing;
use fovea::selector::Percentile;
use fovea::synth::{AugmentConfig, Normalization, SceneParams};
use fovea::trainer::TrainConfig;
use fovea::vit::ModelConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Latency profile CSV; the bundled profile for the resolution when absent.
    pub profile: Option<PathBuf>,
    /// Depth profile CSV; the bundled depth table when absent.
    pub depths: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub n: f64,
    pub theta_i_deg: f64,
    pub exit_weights: BTreeMap<usize, f64>,
    /// Resolution of the bundled profile used when `paths.profile` is unset.
    pub resolution: Resolution,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            n: 100.0,
            theta_i_deg: 5.0,
            exit_weights: BTreeMap::new(),
            resolution: Resolution::P1080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSettings {
    pub resolution: Resolution,
    pub percentile: Percentile,
    pub theta_i_deg: f64,
    pub t_sensing_ms: f64,
    pub t_comm_ms: f64,
}

impl Default for SelectSettings {
    fn default() -> Self {
        Self {
            resolution: Resolution::P720,
            percentile: Percentile::P95,
            theta_i_deg: 5.0,
            t_sensing_ms: 0.0,
            t_comm_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Modeled tracking latency per GFLOP, used for the depth table.
    pub ms_per_gflop: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { ms_per_gflop: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub paths: Paths,
    pub scene: SceneParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossSettings,
    pub preprocessing: Preprocessing,
    pub normalization: Normalization,
    /// Extra augmented copies of every training frame; 0 disables augmentation.
    pub augment_copies: usize,
    pub augment: AugmentConfig,
    pub crop: CropConfig,
    pub events: EventParams,
    pub select: SelectSettings,
    pub eval: EvalSettings,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            scene: SceneParams::default(),
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
            loss: LossSettings::default(),
            preprocessing: Preprocessing::Full,
            normalization: Normalization::default(),
            augment_copies: 0,
            augment: AugmentConfig::default(),
            crop: CropConfig::default(),
            events: EventParams::default(),
            select: SelectSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Sets every seed the experiment uses.
    pub fn set_seed(&mut self, seed: u64) {
        self.scene.seed = seed;
        self.train.seed = seed;
    }
}
