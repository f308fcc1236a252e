use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{Chart, ReportRow};
use super::sweep::tune_beta;
use super::{eval_composite, EvalError, EvalResult, ModelGenerator};
use crate::corpus::{gen_caption_dataset, gen_composite_eval, gen_text_task_dataset, CompositeRecord};
use crate::lvlm::{GenerateParams, Lvlm, ModelConfig};
use crate::steering::{select_layers, FusionConfig, LayerStrategy};
use crate::train::{run_training, TrainConfig, TrainData, TrainOutcome};

/// β candidates for dev-split tuning.
pub const TUNING_BETA_GRID: [f64; 8] = [0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0];

const COMPOSITE_SEED_OFFSET: u64 = 7_000;
const VALIDATION_SEED_OFFSET: u64 = 1_000;

/// Everything needed to train a toy model and score it with and without fusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_caption: usize,
    pub n_text: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_validation: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub alpha: f64,
    pub beta_grid: Vec<f64>,
    pub layers: LayerStrategy,
    pub max_new: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            n_caption: 2000,
            n_text: 2000,
            n_dev: 100,
            n_test: 500,
            n_validation: 100,
            layers: LayerStrategy::TopDown(model.n_layers.div_ceil(2)),
            model,
            train: TrainConfig::default(),
            alpha: 1.0,
            beta_grid: TUNING_BETA_GRID.to_vec(),
            max_new: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn params(&self) -> GenerateParams {
        GenerateParams::greedy(self.max_new)
    }

    /// Dev and test composite splits for `seed`; disjoint slices of one stream.
    pub fn composite_splits(&self, seed: u64) -> (Vec<CompositeRecord>, Vec<CompositeRecord>) {
        let mut all = gen_composite_eval(self.n_dev + self.n_test, seed + COMPOSITE_SEED_OFFSET);
        let test = all.split_off(self.n_dev);
        (all, test)
    }

    /// Training corpora for `seed`, truncated to `fraction` of the full size.
    pub fn train_data(&self, seed: u64, fraction: f64) -> Result<TrainData, EvalError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(EvalError::Sweep(format!("fraction {fraction} outside (0, 1]")));
        }
        let take = |n: usize| ((n as f64 * fraction).round() as usize).max(1);
        let caps = gen_caption_dataset(self.n_caption, seed);
        let texts = gen_text_task_dataset(self.n_text, seed);
        Ok(TrainData::from_records(&caps[..take(caps.len())], &texts[..take(texts.len())])?)
    }

    pub fn validation_data(&self, seed: u64) -> Result<TrainData, EvalError> {
        let s = seed + VALIDATION_SEED_OFFSET;
        Ok(TrainData::from_records(&gen_caption_dataset(self.n_validation, s), &gen_text_task_dataset(self.n_validation, s))?)
    }
}

/// Trains a fresh model with `seed` on `fraction` of the corpora.
pub fn train_toy(cfg: &ExperimentConfig, seed: u64, fraction: f64) -> Result<(Lvlm<f32>, TrainOutcome), EvalError> {
    let data = cfg.train_data(seed, fraction)?;
    let val = if cfg.n_validation > 0 { Some(cfg.validation_data(seed)?) } else { None };
    let mut model = Lvlm::new(ModelConfig { seed, ..cfg.model.clone() })?;
    let train = TrainConfig { seed, ..cfg.train.clone() };
    let t = Instant::now();
    let outcome = run_training(&mut model, &train, &data, val.as_ref())?;
    log::info!("seed {seed} fraction {fraction}: trained in {:.1}s", t.elapsed().as_secs_f64());
    Ok((model, outcome))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub beta: f64,
    pub lo: usize,
    pub hi: usize,
    pub unfused: EvalResult,
    pub fused: EvalResult,
}

/// Tunes β on the dev split, then scores the test split with and without fusion.
pub fn evaluate_seed(cfg: &ExperimentConfig, model: &Lvlm<f32>, seed: u64) -> Result<SeedResult, EvalError> {
    let (dev, test) = cfg.composite_splits(seed);
    let (lo, hi) = select_layers(model.config().n_layers, cfg.layers)?;
    let params = cfg.params();
    let (beta, _) = tune_beta(model, &dev, &cfg.beta_grid, (lo, hi), &params)?;
    let fusion = FusionConfig { alpha: cfg.alpha, beta, lo, hi };
    let unfused = eval_composite(&ModelGenerator { model, fusion: None, params: params.clone() }, &test)?;
    let fused = eval_composite(&ModelGenerator { model, fusion: Some(fusion), params }, &test)?;
    log::info!("seed {seed}: beta {beta}, unfused {:.3}, fused {:.3}", unfused.accuracy, fused.accuracy);
    Ok(SeedResult { seed, beta, lo, hi, unfused, fused })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub fraction: f64,
    pub seed: u64,
    pub n_caption: usize,
    pub n_text: usize,
    pub beta: f64,
    pub unfused_accuracy: f64,
    pub fused_accuracy: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

impl ReportRow for ScalingRow {
    const HEADER: &'static [&'static str] = &[
        "fraction",
        "seed",
        "n_caption",
        "n_text",
        "beta",
        "unfused_accuracy",
        "fused_accuracy",
        "final_loss",
        "seconds",
    ];

    fn chart(rows: &[Self]) -> Chart {
        let mut c = Chart::new("Composite accuracy by training data fraction", "fraction of training data", "accuracy");
        for r in rows {
            c.push(&format!("fused seed {}", r.seed), r.fraction, r.fused_accuracy);
        }
        c
    }
}

/// One freshly trained and evaluated model per fraction and seed.
pub fn scaling_test(cfg: &ExperimentConfig, fractions: &[f64], seeds: &[u64]) -> Result<Vec<ScalingRow>, EvalError> {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(EvalError::Sweep("fractions and seeds must be nonempty".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(EvalError::Sweep(format!("fraction {f} outside (0, 1]")));
    }
    let mut rows = Vec::with_capacity(fractions.len() * seeds.len());
    for &fraction in fractions {
        for &seed in seeds {
            let t = Instant::now();
            let data = cfg.train_data(seed, fraction)?;
            let (model, outcome) = train_toy(cfg, seed, fraction)?;
            let r = evaluate_seed(cfg, &model, seed)?;
            rows.push(ScalingRow {
                fraction,
                seed,
                n_caption: data.caption.len(),
                n_text: data.text.len(),
                beta: r.beta,
                unfused_accuracy: r.unfused.accuracy,
                fused_accuracy: r.fused.accuracy,
                final_loss: outcome.log.final_loss().unwrap_or(f64::NAN),
                seconds: t.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}
