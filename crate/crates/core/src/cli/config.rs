use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evalbench::{DegeneracyThresholds, DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID, DEFAULT_LENGTHS};
use crate::lvlm::ModelConfig;
use crate::steering::{FusionConfig, LayerStrategy};
use crate::train::TrainConfig;

pub const CAPTION_FILE: &str = "caption.jsonl";
pub const TEXT_FILE: &str = "text.jsonl";
pub const COMPOSITE_FILE: &str = "composite.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_STEPS_FILE: &str = "train_steps.csv";
pub const TRAIN_EPOCHS_FILE: &str = "train_epochs.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SWEEP_ALPHA_BETA_FILE: &str = "sweep_alpha_beta.csv";
pub const SWEEP_LAYERS_FILE: &str = "sweep_layers.csv";
pub const SCALING_FILE: &str = "scaling.csv";
pub const BENCH_FILE: &str = "bench_overhead.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSizes {
    pub n_caption: usize,
    pub n_text: usize,
    pub n_composite: usize,
}

impl Default for DataSizes {
    fn default() -> Self {
        Self { n_caption: 2000, n_text: 2000, n_composite: 600 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionDefaults {
    pub alpha: f64,
    pub beta: f64,
    /// Unset means the top half of the blocks.
    pub layers: Option<LayerStrategy>,
}

impl Default for FusionDefaults {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.3, layers: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub max_new: usize,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub layer_percents: Vec<usize>,
    pub degeneracy: DegeneracyThresholds,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            max_new: 8,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            beta_grid: DEFAULT_BETA_GRID.to_vec(),
            layer_percents: vec![25, 50, 75, 100],
            degeneracy: DegeneracyThresholds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub lengths: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    pub n_prompts: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { lengths: DEFAULT_LENGTHS.to_vec(), runs: 10, warmup: 2, n_prompts: 4 }
    }
}

/// Run configuration file (TOML). Every field has a default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub data: DataSizes,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fusion: FusionDefaults,
    pub eval: EvalSettings,
    pub bench: BenchSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Copies the run seed into the model and training configs.
    pub fn propagate_seed(&mut self) {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| format!("model: {e}"))?;
        self.train.validate().map_err(|e| format!("train: {e}"))?;
        self.fusion_config(self.model.n_layers).map_err(|e| format!("fusion: {e}"))?;
        if self.eval.max_new == 0 {
            return Err("eval: max_new must be positive".into());
        }
        if self.bench.runs == 0 || self.bench.n_prompts == 0 || self.bench.lengths.contains(&0) {
            return Err("bench: runs, n_prompts and lengths must be positive".into());
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn fusion_config(&self, n_layers: usize) -> Result<FusionConfig, crate::steering::SteeringError> {
        let strategy = self.fusion.layers.unwrap_or(LayerStrategy::TopDown(n_layers.div_ceil(2)));
        FusionConfig::new(self.fusion.alpha, self.fusion.beta, n_layers, strategy)
    }
}
