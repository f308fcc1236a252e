use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{Chart, ReportRow};
use super::EvalError;
use crate::corpus::{prompt_ids, CompositeRecord};
use crate::lvlm::{GenerateParams, Lvlm};
use crate::steering::{fused_generate, FusionConfig};

pub const DEFAULT_LENGTHS: [usize; 4] = [25, 100, 200, 400];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub length: usize,
    pub runs: usize,
    /// Median wall-clock per run over the whole prompt set, in milliseconds.
    pub std_ms: f64,
    pub fused_ms: f64,
    /// `fused_ms / std_ms - 1`.
    pub overhead: f64,
    /// Forward passes per prompt.
    pub std_passes: usize,
    pub fused_passes: usize,
    pub pass_delta: i64,
}

impl ReportRow for OverheadRow {
    const HEADER: &'static [&'static str] =
        &["length", "runs", "std_ms", "fused_ms", "overhead", "std_passes", "fused_passes", "pass_delta"];

    fn chart(rows: &[Self]) -> Chart {
        let mut c = Chart::new("Fusion overhead by generation length", "generated tokens", "relative overhead");
        for r in rows {
            c.push("fused vs standard", r.length as f64, r.overhead);
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub runs: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { runs: 10, warmup: 2 }
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times standard and fused generation of exactly `length` tokens (EOS
/// suppressed) over `prompts`, alternating the two inside every run.
pub fn bench_overhead(
    model: &Lvlm<f32>,
    prompts: &[CompositeRecord],
    lengths: &[usize],
    fusion: &FusionConfig,
    bench: &BenchConfig,
) -> Result<Vec<OverheadRow>, EvalError> {
    if prompts.is_empty() {
        return Err(EvalError::NoRecords);
    }
    if lengths.is_empty() || lengths.contains(&0) || bench.runs == 0 {
        return Err(EvalError::Sweep("lengths must be positive and runs nonzero".into()));
    }
    let queries = prompts.iter().map(|r| prompt_ids(&r.question)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(lengths.len());
    for &length in lengths {
        let params = GenerateParams { suppress_eos: true, ..GenerateParams::greedy(length) };
        let (mut std_t, mut fused_t) = (Vec::new(), Vec::new());
        let (mut std_passes, mut fused_passes) = (0, 0);
        for run in 0..bench.warmup + bench.runs {
            let (mut s, mut f) = (0.0, 0.0);
            for (i, (r, q)) in prompts.iter().zip(&queries).enumerate() {
                // Pair the two variants per prompt and alternate which goes first.
                let fused_first = (run + i) % 2 == 1;
                let mut time_std = || -> Result<f64, EvalError> {
                    let t = Instant::now();
                    let vis = model.visual_tokens(&r.image)?;
                    let g = model.generate(Some(&vis), q, &params)?;
                    let ms = t.elapsed().as_secs_f64() * 1e3;
                    if g.tokens.len() != length {
                        return Err(EvalError::Sweep(format!("standard generation stopped at {} of {length}", g.tokens.len())));
                    }
                    std_passes = g.forward_passes;
                    Ok(ms)
                };
                let mut time_fused = || -> Result<f64, EvalError> {
                    let t = Instant::now();
                    let g = fused_generate(model, &r.image, q, fusion, &params)?;
                    let ms = t.elapsed().as_secs_f64() * 1e3;
                    fused_passes = g.forward_passes();
                    Ok(ms)
                };
                if fused_first {
                    f += time_fused()?;
                    s += time_std()?;
                } else {
                    s += time_std()?;
                    f += time_fused()?;
                }
            }
            if run >= bench.warmup {
                std_t.push(s);
                fused_t.push(f);
            }
        }
        let std_ms = median(&mut std_t);
        let fused_ms = median(&mut fused_t);
        rows.push(OverheadRow {
            length,
            runs: bench.runs,
            std_ms,
            fused_ms,
            overhead: fused_ms / std_ms - 1.0,
            std_passes,
            fused_passes,
            pass_delta: fused_passes as i64 - std_passes as i64,
        });
        log::info!("length {length}: standard {std_ms:.2} ms, fused {fused_ms:.2} ms");
    }
    Ok(rows)
}
