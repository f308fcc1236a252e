use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{KvCache, Lvlm, LvlmError, VisualTokens};
use crate::corpus::EOS;
use crate::rng::Rng;
use crate::tensor::ops::log_sum_exp;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateParams {
    pub max_new: usize,
    pub mode: DecodeMode,
    pub temperature: f64,
    pub seed: u64,
    /// Never emit EOS, so exactly `max_new` tokens are produced.
    pub suppress_eos: bool,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self { max_new: 16, mode: DecodeMode::Greedy, temperature: 1.0, seed: 0, suppress_eos: false }
    }
}

impl GenerateParams {
    pub fn greedy(max_new: usize) -> Self {
        Self { max_new, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Generated ids, EOS excluded.
    pub tokens: Vec<usize>,
    pub hit_eos: bool,
    /// Full prompt passes plus single-token decode steps.
    pub forward_passes: usize,
    /// Entropy (nats) of the next-token distribution at every sampling step.
    pub step_entropy: Vec<f64>,
    pub prefill_time: Duration,
    pub decode_time: Duration,
}

impl Generation {
    pub fn mean_entropy(&self) -> f64 {
        if self.step_entropy.is_empty() {
            0.0
        } else {
            self.step_entropy.iter().sum::<f64>() / self.step_entropy.len() as f64
        }
    }
}

/// Entropy of softmax(logits) in nats.
pub(crate) fn entropy(logits: &[f64]) -> f64 {
    let lse = log_sum_exp(logits);
    logits
        .iter()
        .filter(|&&z| z > f64::NEG_INFINITY)
        .map(|&z| {
            let lp = z - lse;
            -lp.exp() * lp
        })
        .sum()
}

fn select(logits: &[f64], params: &GenerateParams, rng: &mut Rng) -> usize {
    let masked = |i: usize| params.suppress_eos && i == EOS;
    match params.mode {
        DecodeMode::Greedy => {
            let mut best = None;
            for (i, &z) in logits.iter().enumerate() {
                if masked(i) {
                    continue;
                }
                if best.is_none_or(|(_, b)| z > b) {
                    best = Some((i, z));
                }
            }
            best.map_or(0, |(i, _)| i)
        }
        DecodeMode::Sampled => {
            let t = params.temperature.max(1e-6);
            let scaled: Vec<f64> =
                logits.iter().enumerate().map(|(i, &z)| if masked(i) { f64::NEG_INFINITY } else { z / t }).collect();
            let lse = log_sum_exp(&scaled);
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &z) in scaled.iter().enumerate() {
                if z == f64::NEG_INFINITY {
                    continue;
                }
                acc += (z - lse).exp();
                last = i;
                if u < acc {
                    return i;
                }
            }
            last
        }
    }
}

impl<S: Scalar> Lvlm<S> {
    /// Prefill over `[visual | text]`, then one decode step per generated token.
    ///
    /// Every emitted non-EOS token is fed back through the model, so the
    /// forward-pass count is `1 + tokens.len()` and the cache ends up holding
    /// the full sequence.
    pub fn generate(
        &self,
        visual: Option<&VisualTokens<S>>,
        text: &[usize],
        params: &GenerateParams,
    ) -> Result<Generation, LvlmError> {
        self.check_generate(visual.map_or(0, |v| v.embeddings.rows()), text.len(), params)?;
        let start = Instant::now();
        let input = self.assemble_input(visual, text)?;
        let mut cache = self.new_cache();
        let out = self.forward(&input, Some(&mut cache), false, None)?;
        let last = out.logits.row(out.logits.rows() - 1).to_vec();
        self.decode_from(&mut cache, &last, params, 1, start.elapsed())
    }

    /// Errors up front when the prompt plus `max_new` tokens cannot fit.
    pub fn check_generate(&self, n_visual: usize, n_text: usize, params: &GenerateParams) -> Result<(), LvlmError> {
        if params.max_new == 0 {
            return Err(LvlmError::Input("max_new must be at least 1".into()));
        }
        if n_text == 0 {
            return Err(LvlmError::EmptyText);
        }
        let needed = n_visual + n_text + params.max_new;
        if needed > self.config().max_positions {
            return Err(LvlmError::PositionOverflow { needed, max: self.config().max_positions });
        }
        Ok(())
    }

    /// Token-by-token decoding over a prefilled cache. `last_logits` are the
    /// logits at the final prompt position; `passes` counts prefill passes
    /// already spent.
    pub fn decode_from(
        &self,
        cache: &mut KvCache<S>,
        last_logits: &[S],
        params: &GenerateParams,
        passes: usize,
        prefill_time: Duration,
    ) -> Result<Generation, LvlmError> {
        let start = Instant::now();
        let mut rng = Rng::new(params.seed);
        let mut logits: Vec<f64> = last_logits.iter().map(|x| x.as_f64()).collect();
        let mut gen = Generation {
            tokens: Vec::with_capacity(params.max_new),
            hit_eos: false,
            forward_passes: passes,
            step_entropy: Vec::with_capacity(params.max_new),
            prefill_time,
            decode_time: Duration::ZERO,
        };
        for _ in 0..params.max_new {
            gen.step_entropy.push(entropy(&logits));
            let tok = select(&logits, params, &mut rng);
            if tok == EOS {
                gen.hit_eos = true;
                break;
            }
            gen.tokens.push(tok);
            let input = self.generated_input(tok, cache.len())?;
            let out = self.forward(&input, Some(cache), false, None)?;
            gen.forward_passes += 1;
            logits = out.logits.row(0).iter().map(|x| x.as_f64()).collect();
        }
        gen.decode_time = start.elapsed();
        Ok(gen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_picks_first_max_and_skips_suppressed_eos() {
        let p = GenerateParams::greedy(1);
        let mut rng = Rng::new(0);
        assert_eq!(select(&[0.0, 3.0, 3.0, 1.0], &p, &mut rng), 1);
        let mut z = vec![0.0; 8];
        z[EOS] = 9.0;
        z[5] = 1.0;
        assert_eq!(select(&z, &p, &mut rng), EOS);
        let q = GenerateParams { suppress_eos: true, ..p };
        assert_eq!(select(&z, &q, &mut rng), 5);
    }

    #[test]
    fn sampling_never_returns_suppressed_token() {
        let p = GenerateParams { mode: DecodeMode::Sampled, suppress_eos: true, ..GenerateParams::greedy(1) };
        let mut z = vec![0.0; 6];
        z[EOS] = 50.0;
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            assert_ne!(select(&z, &p, &mut rng), EOS);
        }
    }

    #[test]
    fn entropy_of_uniform_is_log_n() {
        assert!((entropy(&[0.0; 16]) - 16f64.ln()).abs() < 1e-12);
        assert!(entropy(&[100.0, 0.0, 0.0]) < 1e-30);
    }
}
