use serde::{Deserialize, Serialize};

use super::report::{Chart, ReportRow};
use super::EvalError;
use crate::corpus::{detokenize, prompt_ids, CompositeRecord, ToyImage, Vocab};
use crate::lvlm::{GenerateParams, Lvlm};
use crate::steering::{fused_generate, FusionConfig};

/// What a generator produced for one prompt.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenOutput {
    pub tokens: Vec<usize>,
    pub step_entropy: Vec<f64>,
    pub forward_passes: usize,
}

/// Anything that answers an (image, question) prompt with tokens.
pub trait Generator {
    fn generate(&self, image: &ToyImage, question: &str) -> Result<GenOutput, EvalError>;
}

/// A trained model decoding greedily, with or without fusion.
pub struct ModelGenerator<'a> {
    pub model: &'a Lvlm<f32>,
    pub fusion: Option<FusionConfig>,
    pub params: GenerateParams,
}

impl<'a> ModelGenerator<'a> {
    pub fn new(model: &'a Lvlm<f32>, fusion: Option<FusionConfig>) -> Self {
        Self { model, fusion, params: GenerateParams::greedy(8) }
    }
}

impl Generator for ModelGenerator<'_> {
    fn generate(&self, image: &ToyImage, question: &str) -> Result<GenOutput, EvalError> {
        let q = prompt_ids(question)?;
        let g = match &self.fusion {
            Some(cfg) => fused_generate(self.model, image, &q, cfg, &self.params)?.generation,
            None => {
                let vis = self.model.visual_tokens(image)?;
                self.model.generate(Some(&vis), &q, &self.params)?
            }
        };
        Ok(GenOutput { tokens: g.tokens, step_entropy: g.step_entropy, forward_passes: g.forward_passes })
    }
}

/// The first answer word (a count, `yes` or `no`) in the output, otherwise the
/// whole output with whitespace normalised.
pub fn extract_answer(tokens: &[usize]) -> String {
    let answers = Vocab::get().answer_ids();
    match tokens.iter().find(|t| answers.contains(t)) {
        Some(&t) => detokenize(&[t]),
        None => detokenize(tokens).split_whitespace().collect::<Vec<_>>().join(" "),
    }
}

/// Longest run of one repeated token.
pub fn max_repeat_run(tokens: &[usize]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for (i, t) in tokens.iter().enumerate() {
        run = if i > 0 && tokens[i - 1] == *t { run + 1 } else { 1 };
        best = best.max(run);
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub predicted: String,
    pub gold: String,
    pub correct: bool,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub verdicts: Vec<Verdict>,
    /// Mean over records of the mean next-token entropy.
    pub mean_entropy: f64,
    /// Mean over records of the longest repeated-token run.
    pub mean_repeat_run: f64,
    pub max_repeat_run: usize,
}

/// Exact-match accuracy of `gen` on `records`.
pub fn eval_composite(gen: &dyn Generator, records: &[CompositeRecord]) -> Result<EvalResult, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut verdicts = Vec::with_capacity(records.len());
    let (mut ent, mut rep, mut max_rep) = (0.0, 0.0, 0);
    for r in records {
        let out = gen.generate(&r.image, &r.question)?;
        let predicted = extract_answer(&out.tokens);
        let correct = predicted == r.answer;
        if !out.step_entropy.is_empty() {
            ent += out.step_entropy.iter().sum::<f64>() / out.step_entropy.len() as f64;
        }
        let run = max_repeat_run(&out.tokens);
        rep += run as f64;
        max_rep = max_rep.max(run);
        verdicts.push(Verdict { predicted, gold: r.answer.clone(), correct, output: detokenize(&out.tokens) });
    }
    let n = records.len();
    let correct = verdicts.iter().filter(|v| v.correct).count();
    Ok(EvalResult {
        n,
        correct,
        accuracy: correct as f64 / n as f64,
        verdicts,
        mean_entropy: ent / n as f64,
        mean_repeat_run: rep / n as f64,
        max_repeat_run: max_rep,
    })
}

/// One composite evaluation as a report line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub mode: String,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lo: Option<usize>,
    pub hi: Option<usize>,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub mean_repeat_run: f64,
}

impl EvalRow {
    pub fn new(fusion: Option<&FusionConfig>, r: &EvalResult) -> Self {
        Self {
            mode: if fusion.is_some() { "fused" } else { "unfused" }.into(),
            alpha: fusion.map(|f| f.alpha),
            beta: fusion.map(|f| f.beta),
            lo: fusion.map(|f| f.lo),
            hi: fusion.map(|f| f.hi),
            n: r.n,
            correct: r.correct,
            accuracy: r.accuracy,
            mean_entropy: r.mean_entropy,
            mean_repeat_run: r.mean_repeat_run,
        }
    }
}

impl ReportRow for EvalRow {
    const HEADER: &'static [&'static str] =
        &["mode", "alpha", "beta", "lo", "hi", "n", "correct", "accuracy", "mean_entropy", "mean_repeat_run"];

    fn chart(rows: &[Self]) -> Chart {
        let mut c = Chart::new("Composite accuracy", "row", "accuracy");
        for (i, r) in rows.iter().enumerate() {
            c.push(&r.mode, i as f64, r.accuracy);
        }
        c
    }
}
