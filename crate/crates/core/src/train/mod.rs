//! Ability-specific fine-tuning: masked next-token loss over caption and
//! text-only records, modality-pure batching, staged schedules and AdamW with
//! per-group learning rates.

mod batch;
mod optim;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use batch::{build_batches, Batch, Example, Modality, TrainData};
pub use optim::{global_norm, optimizer_step, OptimConfig, OptimState};

use crate::corpus::{CorpusError, ToyImage};
use crate::lvlm::{save_checkpoint, Lvlm, LvlmError};
use crate::rng::Rng;
use crate::tensor::{Scalar, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] LvlmError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("missing training data: {0}")]
    MissingData(String),
    #[error("batch mixes caption and text records")]
    MixedBatch,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch has no response tokens to score")]
    AllMasked,
    #[error("gradient contains NaN or Inf")]
    NonFiniteGradient,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

/// One training stage: which corpora to draw from and for how many epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub mixture: Vec<Modality>,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub stages: Vec<StageSpec>,
    pub seed: u64,
    /// Fraction of all steps after which the learning rate decays linearly.
    pub decay_from: f64,
    /// Learning-rate multiplier reached at the final step.
    pub final_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            batch_size: 8,
            stages: TrainConfig::two_stage(3),
            seed: 0,
            decay_from: 0.6,
            final_lr_scale: 0.1,
        }
    }
}

impl TrainConfig {
    /// Captions alone, then captions mixed with text tasks.
    pub fn two_stage(epochs: usize) -> Vec<StageSpec> {
        vec![
            StageSpec { name: "caption".into(), mixture: vec![Modality::Caption], epochs },
            StageSpec { name: "mixed".into(), mixture: vec![Modality::Caption, Modality::Text], epochs },
        ]
    }

    /// A single stage over both corpora.
    pub fn one_stage(epochs: usize) -> Vec<StageSpec> {
        vec![StageSpec { name: "mixed".into(), mixture: vec![Modality::Caption, Modality::Text], epochs }]
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.optim.validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(TrainError::Config("at least one stage is required".into()));
        }
        for s in &self.stages {
            if s.mixture.is_empty() {
                return Err(TrainError::Config(format!("stage {:?} has an empty mixture", s.name)));
            }
        }
        if !(0.0..=1.0).contains(&self.decay_from) || !(0.0..=1.0).contains(&self.final_lr_scale) {
            return Err(TrainError::Config("decay_from and final_lr_scale must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Constant, then linear decay to `final_lr_scale` at the last step.
    pub fn lr_scale(&self, step: usize, total: usize) -> f64 {
        let start = (self.decay_from * total as f64).floor();
        let s = step as f64;
        if total == 0 || s < start {
            return 1.0;
        }
        let span = (total as f64 - 1.0 - start).max(1.0);
        1.0 - (1.0 - self.final_lr_scale) * ((s - start) / span).min(1.0)
    }
}

/// Builds the graph for one example and returns it with its loss node and
/// number of scored tokens.
fn example_graph<S: Scalar>(
    model: &Lvlm<S>,
    image: Option<&ToyImage>,
    tokens: &[usize],
    mask: &[bool],
) -> Result<(crate::tensor::Graph<S>, crate::tensor::Var, usize), TrainError> {
    let n = tokens.len();
    if n < 2 {
        return Err(TrainError::AllMasked);
    }
    let mut g = model.graph();
    let x = model.embed_input_g(&mut g, image, &tokens[..n - 1])?;
    let (logits, _) = model.decode_g(&mut g, x, 0, None, false, None)?;
    let n_img = if image.is_some() { model.config().n_visual() } else { 0 };
    let mut targets = vec![0; n_img];
    targets.extend_from_slice(&tokens[1..]);
    let mut m = vec![false; n_img];
    m.extend_from_slice(&mask[1..n]);
    let count = m.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(TrainError::AllMasked);
    }
    let loss = g.cross_entropy(logits, &targets, &m)?;
    Ok((g, loss, count))
}

/// Mean next-token loss over the response tokens of a batch, with gradients
/// accumulated into a fresh buffer per parameter.
pub fn loss_step<S: Scalar>(model: &Lvlm<S>, batch: &Batch) -> Result<(f64, Vec<Vec<S>>), TrainError> {
    let total = batch.target_count();
    if total == 0 {
        return Err(TrainError::AllMasked);
    }
    let mut grads = model.params().zero_grads();
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let len = batch.lengths[i];
        let image = batch.images.as_ref().map(|imgs| &imgs[i]);
        let (mut g, l, count) = example_graph(model, image, &batch.tokens[i][..len], &batch.loss_mask[i][..len])?;
        let w = count as f64 / total as f64;
        loss += g.value(l)[0].as_f64() * w;
        let scaled = g.scale(l, S::from_f64(w))?;
        let gr = g.backward(scaled)?;
        model.params().accumulate(&g, &gr, &mut grads);
    }
    Ok((loss, grads))
}

/// Loss without gradients, token-weighted over `examples`.
pub fn eval_loss<S: Scalar>(model: &Lvlm<S>, examples: &[Example]) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut count = 0;
    for e in examples {
        let tokens = e.sequence();
        let mask: Vec<bool> = (0..tokens.len()).map(|i| i >= e.prompt.len()).collect();
        let (g, l, c) = example_graph(model, e.image.as_ref(), &tokens, &mask)?;
        sum += g.value(l)[0].as_f64() * c as f64;
        count += c;
    }
    if count == 0 {
        return Err(TrainError::AllMasked);
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub stage: String,
    pub modality: Modality,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub stage: String,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Held-out loss per modality, when validation data is supplied.
    pub val_caption: Option<f64>,
    pub val_text: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRow>,
    pub epochs: Vec<EpochRow>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    /// Per-step metrics as CSV: `step,stage,modality,loss,lr`.
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.steps {
            w.serialize(r)?;
        }
        if self.steps.is_empty() {
            w.write_record(["step", "stage", "modality", "loss", "lr"])?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        crate::corpus::write_atomic(path, &bytes)?;
        Ok(())
    }
}

/// Training driver state shared across stages.
pub struct Trainer<'a> {
    pub model: &'a mut Lvlm<f32>,
    pub cfg: &'a TrainConfig,
    pub state: OptimState,
    pub log: TrainLog,
    total_steps: usize,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut Lvlm<f32>, cfg: &'a TrainConfig, data: &TrainData) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut total_steps = 0;
        for s in &cfg.stages {
            let mut per_epoch = 0;
            for &m in &s.mixture {
                let n = data.get(m).len();
                if n == 0 {
                    return Err(TrainError::MissingData(format!("stage {:?} needs {} records", s.name, m.as_str())));
                }
                per_epoch += n.div_ceil(cfg.batch_size);
            }
            total_steps += per_epoch * s.epochs;
        }
        let state = OptimState::new(model.params());
        Ok(Self { model, cfg, state, log: TrainLog::default(), total_steps, step: 0 })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Runs every epoch of stage `idx`.
    pub fn run_stage(&mut self, idx: usize, data: &TrainData, validation: Option<&TrainData>) -> Result<(), TrainError> {
        let stage = &self.cfg.stages[idx];
        let groups: Vec<&[Example]> = stage.mixture.iter().map(|&m| data.get(m)).collect();
        for epoch in 0..stage.epochs {
            let t0 = Instant::now();
            let seed = Rng::derive(self.cfg.seed, 0x5EED_0000 + (idx as u64) * 1000 + epoch as u64).next_u64();
            let batches = build_batches(&groups, self.cfg.batch_size, seed)?;
            let mut sum = 0.0;
            for b in &batches {
                let scale = self.cfg.lr_scale(self.step, self.total_steps);
                let (loss, mut grads) = loss_step(self.model, b)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteGradient);
                }
                optimizer_step(self.model.params_mut(), &mut grads, &mut self.state, &self.cfg.optim, scale)?;
                self.log.steps.push(StepRow {
                    step: self.step,
                    stage: stage.name.clone(),
                    modality: b.modality,
                    loss,
                    lr: self.cfg.optim.lr_llm * scale,
                });
                sum += loss;
                self.step += 1;
            }
            let val = |m: Modality| -> Result<Option<f64>, TrainError> {
                match validation.map(|v| v.get(m)).filter(|e| !e.is_empty()) {
                    Some(e) => Ok(Some(eval_loss(self.model, e)?)),
                    None => Ok(None),
                }
            };
            let row = EpochRow {
                stage: stage.name.clone(),
                epoch,
                mean_loss: sum / batches.len() as f64,
                val_caption: val(Modality::Caption)?,
                val_text: val(Modality::Text)?,
                seconds: t0.elapsed().as_secs_f64(),
            };
            log::info!(
                "stage {} epoch {}: loss {:.4} val caption {:?} text {:?} ({:.1}s)",
                row.stage,
                row.epoch,
                row.mean_loss,
                row.val_caption,
                row.val_text,
                row.seconds
            );
            self.log.epochs.push(row);
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub state: OptimState,
}

/// Runs all stages in order.
pub fn run_training(
    model: &mut Lvlm<f32>,
    cfg: &TrainConfig,
    data: &TrainData,
    validation: Option<&TrainData>,
) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(model, cfg, data)?;
    for idx in 0..cfg.stages.len() {
        t.run_stage(idx, data, validation)?;
    }
    Ok(TrainOutcome { log: t.log, state: t.state })
}

/// Writes the model and optimizer state.
pub fn save_training_checkpoint(path: &Path, model: &Lvlm<f32>, state: &OptimState) -> Result<(), TrainError> {
    Ok(save_checkpoint(path, model, Some(&state.snapshot()))?)
}
