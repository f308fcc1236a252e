use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{Chart, ReportRow};
use super::{eval_composite, EvalError, ModelGenerator};
use crate::corpus::CompositeRecord;
use crate::lvlm::{GenerateParams, Lvlm};
use crate::steering::{select_layers, FusionConfig, LayerStrategy};

/// α values bracketing the usual optimum of 1.0.
pub const DEFAULT_ALPHA_GRID: [f64; 7] = [0.6, 0.8, 0.9, 1.0, 1.1, 1.2, 1.4];
/// β values from off to well past the useful range.
pub const DEFAULT_BETA_GRID: [f64; 9] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 1.0];

/// Report-only limits for flagging degenerate generations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegeneracyThresholds {
    /// Mean (over records) longest run of one repeated token.
    pub repeat_run: f64,
    /// Mean next-token entropy in nats.
    pub entropy: f64,
}

impl Default for DegeneracyThresholds {
    fn default() -> Self {
        Self { repeat_run: 2.0, entropy: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaBetaRow {
    pub alpha: f64,
    pub beta: f64,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub mean_repeat_run: f64,
    pub max_repeat_run: usize,
    pub degenerate: bool,
    pub seconds: f64,
}

impl ReportRow for AlphaBetaRow {
    const HEADER: &'static [&'static str] =
        &["alpha", "beta", "accuracy", "mean_entropy", "mean_repeat_run", "max_repeat_run", "degenerate", "seconds"];

    fn chart(rows: &[Self]) -> Chart {
        let mut c = Chart::new("Accuracy over beta per alpha", "beta", "accuracy");
        for r in rows {
            c.push(&format!("alpha {}", r.alpha), r.beta, r.accuracy);
        }
        c
    }
}

/// One composite evaluation per (α, β) grid point over the layer range `layers`.
pub fn sweep_alpha_beta(
    model: &Lvlm<f32>,
    records: &[CompositeRecord],
    alphas: &[f64],
    betas: &[f64],
    layers: (usize, usize),
    thresholds: &DegeneracyThresholds,
    params: &GenerateParams,
) -> Result<Vec<AlphaBetaRow>, EvalError> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(EvalError::Sweep("alpha and beta grids must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        for &beta in betas {
            let t = Instant::now();
            let cfg = FusionConfig { alpha, beta, lo: layers.0, hi: layers.1 };
            cfg.validate(model.config().n_layers)?;
            let gen = ModelGenerator { model, fusion: Some(cfg), params: params.clone() };
            let r = eval_composite(&gen, records)?;
            rows.push(AlphaBetaRow {
                alpha,
                beta,
                accuracy: r.accuracy,
                mean_entropy: r.mean_entropy,
                mean_repeat_run: r.mean_repeat_run,
                max_repeat_run: r.max_repeat_run,
                degenerate: r.mean_repeat_run > thresholds.repeat_run || r.mean_entropy > thresholds.entropy,
                seconds: t.elapsed().as_secs_f64(),
            });
            log::info!("alpha {alpha} beta {beta}: accuracy {:.3}", r.accuracy);
        }
    }
    Ok(rows)
}

/// Picks the β with the best accuracy at α = 1; ties go to the smaller β.
pub fn tune_beta(
    model: &Lvlm<f32>,
    dev: &[CompositeRecord],
    betas: &[f64],
    layers: (usize, usize),
    params: &GenerateParams,
) -> Result<(f64, Vec<AlphaBetaRow>), EvalError> {
    let rows = sweep_alpha_beta(model, dev, &[1.0], betas, layers, &DegeneracyThresholds::default(), params)?;
    let best = rows.iter().fold(&rows[0], |b, r| if r.accuracy > b.accuracy { r } else { b });
    Ok((best.beta, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    TopDown,
    BottomUp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub direction: Direction,
    pub percent: usize,
    pub lo: usize,
    pub hi: usize,
    pub accuracy: f64,
    /// The top-half range used by default.
    pub is_default: bool,
    pub seconds: f64,
}

impl ReportRow for LayerRow {
    const HEADER: &'static [&'static str] = &["direction", "percent", "lo", "hi", "accuracy", "is_default", "seconds"];

    fn chart(rows: &[Self]) -> Chart {
        let mut c = Chart::new("Accuracy by fusion layer selection", "percent of layers fused", "accuracy");
        for r in rows {
            let name = match r.direction {
                Direction::TopDown => "top-down",
                Direction::BottomUp => "bottom-up",
            };
            c.push(name, r.percent as f64, r.accuracy);
        }
        c
    }
}

/// Top-down and bottom-up ranges covering each of `percents` of the blocks.
pub fn layer_strategies(n_layers: usize, percents: &[usize]) -> Vec<(Direction, usize, LayerStrategy)> {
    let mut out = Vec::new();
    for dir in [Direction::TopDown, Direction::BottomUp] {
        for &p in percents {
            let k = (n_layers * p).div_ceil(100).clamp(1, n_layers);
            let s = match dir {
                Direction::TopDown => LayerStrategy::TopDown(k),
                Direction::BottomUp => LayerStrategy::BottomUp(k),
            };
            out.push((dir, p, s));
        }
    }
    out
}

pub fn sweep_layers(
    model: &Lvlm<f32>,
    records: &[CompositeRecord],
    strategies: &[(Direction, usize, LayerStrategy)],
    alpha: f64,
    beta: f64,
    params: &GenerateParams,
) -> Result<Vec<LayerRow>, EvalError> {
    let n = model.config().n_layers;
    let default = crate::steering::default_layers(n);
    let mut rows = Vec::with_capacity(strategies.len());
    for &(direction, percent, s) in strategies {
        let t = Instant::now();
        let (lo, hi) = select_layers(n, s)?;
        let gen = ModelGenerator { model, fusion: Some(FusionConfig { alpha, beta, lo, hi }), params: params.clone() };
        let r = eval_composite(&gen, records)?;
        rows.push(LayerRow {
            direction,
            percent,
            lo,
            hi,
            accuracy: r.accuracy,
            is_default: direction == Direction::TopDown && (lo, hi) == default,
            seconds: t.elapsed().as_secs_f64(),
        });
        log::info!("layers {lo}-{hi}: accuracy {:.3}", r.accuracy);
    }
    Ok(rows)
}
