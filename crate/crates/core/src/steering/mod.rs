//! Steering-vector extraction, ability fusion and fused generation.
//!
//! A task-solving vector `h(q)` is read from a text-only pass over the
//! instruction; a perception vector `h(v,q)` from the text positions of a pass
//! with the image prepended. Fused inference replaces the text-position states
//! of the multimodal prefill with `α·h(v,q) + β·h(q)` on a range of layers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::ToyImage;
use crate::lvlm::{GenerateParams, Generation, Lvlm, LvlmError};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum SteeringError {
    #[error(transparent)]
    Model(#[from] LvlmError),
    #[error("invalid layer range {lo}-{hi} for a {n_layers}-layer model")]
    LayerRange { lo: usize, hi: usize, n_layers: usize },
    #[error("layer count {k} outside 1..={n_layers}")]
    LayerCount { k: usize, n_layers: usize },
    #[error("fusion weights must be finite (alpha {alpha}, beta {beta})")]
    NonFiniteWeight { alpha: f64, beta: f64 },
    #[error("steering vectors disagree: {0}")]
    Mismatch(String),
    #[error("cannot parse layer selection {0:?}; expected top:K, bottom:K or LO-HI")]
    BadSelection(String),
    #[error("instruction is empty")]
    EmptyQuery,
}

/// Per-layer hidden states at the instruction's text positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringVectors<S> {
    values: BTreeMap<usize, Tensor<S>>,
    text_len: usize,
    d_model: usize,
}

impl<S: Scalar> SteeringVectors<S> {
    pub fn new(values: BTreeMap<usize, Tensor<S>>) -> Result<Self, SteeringError> {
        let (text_len, d_model) = match values.values().next() {
            Some(t) => (t.rows(), t.cols()),
            None => return Err(SteeringError::Mismatch("no layers".into())),
        };
        if values.values().any(|t| t.shape() != [text_len, d_model]) {
            return Err(SteeringError::Mismatch("layers differ in shape".into()));
        }
        Ok(Self { values, text_len, d_model })
    }

    pub fn layers(&self) -> Vec<usize> {
        self.values.keys().copied().collect()
    }

    pub fn get(&self, layer: usize) -> Option<&Tensor<S>> {
        self.values.get(&layer)
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }
}

/// Which blocks to fuse, before being resolved against a model depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerStrategy {
    /// The top `k` blocks.
    TopDown(usize),
    /// The bottom `k` blocks.
    BottomUp(usize),
    /// Inclusive 0-based block range.
    Explicit(usize, usize),
}

impl FromStr for LayerStrategy {
    type Err = SteeringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SteeringError::BadSelection(s.to_string());
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        if let Some(k) = s.strip_prefix("top:") {
            Ok(LayerStrategy::TopDown(num(k)?))
        } else if let Some(k) = s.strip_prefix("bottom:") {
            Ok(LayerStrategy::BottomUp(num(k)?))
        } else if let Some((lo, hi)) = s.split_once('-') {
            Ok(LayerStrategy::Explicit(num(lo)?, num(hi)?))
        } else {
            Err(bad())
        }
    }
}

impl fmt::Display for LayerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerStrategy::TopDown(k) => write!(f, "top:{k}"),
            LayerStrategy::BottomUp(k) => write!(f, "bottom:{k}"),
            LayerStrategy::Explicit(lo, hi) => write!(f, "{lo}-{hi}"),
        }
    }
}

impl TryFrom<String> for LayerStrategy {
    type Error = SteeringError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LayerStrategy> for String {
    fn from(s: LayerStrategy) -> String {
        s.to_string()
    }
}

/// Resolves a strategy to an inclusive `[lo, hi]` block range.
pub fn select_layers(n_layers: usize, strategy: LayerStrategy) -> Result<(usize, usize), SteeringError> {
    let count = |k: usize| {
        if k == 0 || k > n_layers {
            Err(SteeringError::LayerCount { k, n_layers })
        } else {
            Ok(k)
        }
    };
    match strategy {
        LayerStrategy::TopDown(k) => Ok((n_layers - count(k)?, n_layers - 1)),
        LayerStrategy::BottomUp(k) => Ok((0, count(k)? - 1)),
        LayerStrategy::Explicit(lo, hi) => {
            if lo > hi || hi >= n_layers {
                Err(SteeringError::LayerRange { lo, hi, n_layers })
            } else {
                Ok((lo, hi))
            }
        }
    }
}

/// Top half of the blocks, rounded up.
pub fn default_layers(n_layers: usize) -> (usize, usize) {
    (n_layers - n_layers.div_ceil(2), n_layers - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Inclusive, 0-based.
    pub lo: usize,
    pub hi: usize,
}

impl FusionConfig {
    pub fn new(alpha: f64, beta: f64, n_layers: usize, strategy: LayerStrategy) -> Result<Self, SteeringError> {
        let (lo, hi) = select_layers(n_layers, strategy)?;
        let cfg = Self { alpha, beta, lo, hi };
        cfg.validate(n_layers)?;
        Ok(cfg)
    }

    /// α = 1, β as given, top half of the layers.
    pub fn with_defaults(n_layers: usize, beta: f64) -> Self {
        let (lo, hi) = default_layers(n_layers);
        Self { alpha: 1.0, beta, lo, hi }
    }

    pub fn validate(&self, n_layers: usize) -> Result<(), SteeringError> {
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(SteeringError::NonFiniteWeight { alpha: self.alpha, beta: self.beta });
        }
        if self.lo > self.hi || self.hi >= n_layers {
            return Err(SteeringError::LayerRange { lo: self.lo, hi: self.hi, n_layers });
        }
        Ok(())
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.lo..=self.hi).contains(&layer)
    }

    pub fn n_fused_layers(&self) -> usize {
        self.hi - self.lo + 1
    }

    /// `α·h + β·t`, element by element.
    fn combine<S: Scalar>(&self, h: &mut [S], t: &[S]) {
        let (a, b) = (S::from_f64(self.alpha), S::from_f64(self.beta));
        for (x, &y) in h.iter_mut().zip(t) {
            *x = a * *x + b * y;
        }
    }
}

fn slice_layers<S: Scalar>(
    hidden: &crate::lvlm::HiddenStates<S>,
    start: usize,
    len: usize,
    layers: &[usize],
) -> Result<SteeringVectors<S>, SteeringError> {
    let mut values = BTreeMap::new();
    for &l in layers {
        if l >= hidden.n_layers() {
            return Err(SteeringError::LayerRange { lo: l, hi: l, n_layers: hidden.n_layers() });
        }
        values.insert(l, hidden.slice(l, start, len));
    }
    SteeringVectors::new(values)
}

/// Task-solving vector: hidden states of a text-only pass over `q`.
pub fn extract_task_vector<S: Scalar>(
    model: &Lvlm<S>,
    q: &[usize],
    layers: &[usize],
) -> Result<SteeringVectors<S>, SteeringError> {
    if q.is_empty() {
        return Err(SteeringError::EmptyQuery);
    }
    let input = model.assemble_input(None, q)?;
    let out = model.forward(&input, None, true, None)?;
    slice_layers(out.hidden.as_ref().expect("capture requested"), 0, q.len(), layers)
}

/// Perception vector: text-position hidden states of a pass with `v` prepended.
pub fn extract_perception_vector<S: Scalar>(
    model: &Lvlm<S>,
    v: &ToyImage,
    q: &[usize],
    layers: &[usize],
) -> Result<SteeringVectors<S>, SteeringError> {
    if q.is_empty() {
        return Err(SteeringError::EmptyQuery);
    }
    let vis = model.visual_tokens(v)?;
    let input = model.assemble_input(Some(&vis), q)?;
    let n_img = input.n_image();
    let out = model.forward(&input, None, true, None)?;
    slice_layers(out.hidden.as_ref().expect("capture requested"), n_img, q.len(), layers)
}

/// `α·hvq + β·hq` on in-range layers; other layers copied from `hvq`.
pub fn fuse<S: Scalar>(
    hvq: &SteeringVectors<S>,
    hq: &SteeringVectors<S>,
    cfg: &FusionConfig,
) -> Result<SteeringVectors<S>, SteeringError> {
    if hvq.layers() != hq.layers() {
        return Err(SteeringError::Mismatch(format!("layer sets {:?} and {:?}", hvq.layers(), hq.layers())));
    }
    if (hvq.text_len, hvq.d_model) != (hq.text_len, hq.d_model) {
        return Err(SteeringError::Mismatch(format!(
            "shapes {}×{} and {}×{}",
            hvq.text_len, hvq.d_model, hq.text_len, hq.d_model
        )));
    }
    if !cfg.alpha.is_finite() || !cfg.beta.is_finite() {
        return Err(SteeringError::NonFiniteWeight { alpha: cfg.alpha, beta: cfg.beta });
    }
    if (cfg.lo..=cfg.hi).any(|l| !hvq.values.contains_key(&l)) {
        return Err(SteeringError::Mismatch(format!("range {}-{} not covered by {:?}", cfg.lo, cfg.hi, hvq.layers())));
    }
    let mut values = hvq.values.clone();
    for (l, t) in values.iter_mut() {
        if cfg.contains(*l) {
            cfg.combine(t.data_mut(), hq.values[l].data());
        }
    }
    SteeringVectors::new(values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedGenerationTrace {
    pub generation: Generation,
    /// Replaced text rows per block; zero outside the fusion range.
    pub replacements: Vec<usize>,
    pub task_pass_time: Duration,
}

impl FusedGenerationTrace {
    pub fn tokens(&self) -> &[usize] {
        &self.generation.tokens
    }

    pub fn forward_passes(&self) -> usize {
        self.generation.forward_passes
    }

    pub fn replacement_count(&self) -> usize {
        self.replacements.iter().sum()
    }
}

/// Ability-fused generation.
///
/// Pass 1 runs `q` alone and keeps `h(q)` on the fusion layers. Pass 2 is the
/// multimodal prefill; after each in-range block the text rows are replaced by
/// `α·h + β·h(q)` before they reach the next block or the cache. Decoding then
/// continues over that cache without further intervention.
pub fn fused_generate<S: Scalar>(
    model: &Lvlm<S>,
    v: &ToyImage,
    q: &[usize],
    cfg: &FusionConfig,
    params: &GenerateParams,
) -> Result<FusedGenerationTrace, SteeringError> {
    let n_layers = model.config().n_layers;
    cfg.validate(n_layers)?;
    model.check_generate(model.config().n_visual(), q.len(), params)?;

    let t0 = Instant::now();
    let layers: Vec<usize> = (cfg.lo..=cfg.hi).collect();
    let hq = extract_task_vector(model, q, &layers)?;
    let task_pass_time = t0.elapsed();

    let t1 = Instant::now();
    let vis = model.visual_tokens(v)?;
    let input = model.assemble_input(Some(&vis), q)?;
    let n_img = input.n_image();
    let d = model.config().d_model;
    let mut replacements = vec![0; n_layers];
    let mut intervene = |l: usize, offset: usize, h: &mut Tensor<S>| {
        if offset != 0 || !cfg.contains(l) {
            return;
        }
        let rows = &mut h.data_mut()[n_img * d..(n_img + q.len()) * d];
        cfg.combine(rows, hq.values[&l].data());
        replacements[l] += q.len();
    };
    let mut cache = model.new_cache();
    let out = model.forward(&input, Some(&mut cache), false, Some(&mut intervene))?;
    let last = out.logits.row(out.logits.rows() - 1).to_vec();
    let generation = model.decode_from(&mut cache, &last, params, 2, t1.elapsed())?;
    Ok(FusedGenerationTrace { generation, replacements, task_pass_time })
}
