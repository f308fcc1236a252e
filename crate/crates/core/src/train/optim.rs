use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::lvlm::{OptimSnapshot, ParamGroup};
use crate::tensor::ParamStore;

/// Per-group learning rates and AdamW hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_llm: f64,
    pub lr_connector: f64,
    pub lr_vision: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub grad_clip: f64,
    pub freeze_llm: bool,
    pub freeze_connector: bool,
    pub freeze_vision: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_llm: 2e-3,
            lr_connector: 4e-4,
            lr_vision: 2e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 1.0,
            freeze_llm: false,
            freeze_connector: false,
            freeze_vision: false,
        }
    }
}

impl OptimConfig {
    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Llm => self.lr_llm,
            ParamGroup::Connector => self.lr_connector,
            ParamGroup::Vision => self.lr_vision,
        }
    }

    pub fn frozen(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Llm => self.freeze_llm,
            ParamGroup::Connector => self.freeze_connector,
            ParamGroup::Vision => self.freeze_vision,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, lr) in [("lr_llm", self.lr_llm), ("lr_connector", self.lr_connector), ("lr_vision", self.lr_vision)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be a positive number, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(TrainError::Config("eps must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        Self { step: 0, m: params.zero_grads(), v: params.zero_grads() }
    }

    pub fn snapshot(&self) -> OptimSnapshot {
        OptimSnapshot { step: self.step, m: self.m.clone(), v: self.v.clone() }
    }

    pub fn from_snapshot(s: OptimSnapshot, params: &ParamStore<f32>) -> Result<Self, TrainError> {
        let ok = |xs: &[Vec<f32>]| xs.len() == params.len() && xs.iter().zip(params.iter()).all(|(x, p)| x.len() == p.numel());
        if !ok(&s.m) || !ok(&s.v) {
            return Err(TrainError::Config("optimizer state does not match the parameters".into()));
        }
        Ok(Self { step: s.step, m: s.m, v: s.v })
    }
}

pub fn global_norm(grads: &[Vec<f32>]) -> f64 {
    grads.iter().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt()
}

/// Clips `grads` in place and applies one AdamW update with learning rates
/// scaled by `lr_scale`. Returns the pre-clip gradient norm.
pub fn optimizer_step(
    params: &mut ParamStore<f32>,
    grads: &mut [Vec<f32>],
    state: &mut OptimState,
    cfg: &OptimConfig,
    lr_scale: f64,
) -> Result<f64, TrainError> {
    if grads.len() != params.len() || grads.iter().zip(params.iter()).any(|(g, p)| g.len() != p.numel()) {
        return Err(TrainError::Config("gradient buffers do not match the parameters".into()));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
        let c = (cfg.grad_clip / norm) as f32;
        grads.iter_mut().flatten().for_each(|g| *g *= c);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    for (id, p) in params.iter_mut().enumerate() {
        let group = ParamGroup::of(&p.name);
        if cfg.frozen(group) {
            continue;
        }
        let lr = cfg.lr(group) * lr_scale;
        let step = (lr / bc1) as f32;
        let decay = (lr * cfg.weight_decay) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let eps = cfg.eps as f32;
        let (m, v, g) = (&mut state.m[id], &mut state.v[id], &grads[id]);
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            *w -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps) + decay * *w;
        }
    }
    Ok(norm)
}
