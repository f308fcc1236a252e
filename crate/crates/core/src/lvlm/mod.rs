//! The miniature vision-language model: vision encoder, connector, causal
//! decoder with hidden-state capture and per-layer intervention, KV cache,
//! generation and the binary checkpoint format.

mod checkpoint;
mod config;
mod generate;
mod model;

use std::sync::Arc;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint,
    OptimSnapshot, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::ModelConfig;
pub use generate::{DecodeMode, GenerateParams, Generation};
pub use model::{Intervene, Lvlm, ParamGroup};

use crate::corpus::CorpusError;
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum LvlmError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("sequence needs {needed} positions, model supports {max}")]
    PositionOverflow { needed: usize, max: usize },
    #[error("text input is empty")]
    EmptyText,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint config mismatch: {field} is {found} in file, expected {expected}")]
    CheckpointConfig { field: &'static str, found: u64, expected: u64 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Connector output: one `d_model` row per image patch.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualTokens<S> {
    pub embeddings: Tensor<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Image,
    Text,
    Generated,
}

/// Decoder input: embeddings plus a per-position segment tag and position id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedInput<S> {
    pub embeddings: Tensor<S>,
    pub segments: Vec<Segment>,
    pub position_ids: Vec<usize>,
}

impl<S: Scalar> EmbeddedInput<S> {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Number of leading image positions.
    pub fn n_image(&self) -> usize {
        self.segments.iter().take_while(|&&s| s == Segment::Image).count()
    }

    /// Checks the segment map and position ids against the embeddings.
    pub fn validate(&self) -> Result<(), LvlmError> {
        if self.embeddings.rows() != self.segments.len() || self.position_ids.len() != self.segments.len() {
            return Err(LvlmError::Input(format!(
                "{} embedding rows, {} segment tags, {} position ids",
                self.embeddings.rows(),
                self.segments.len(),
                self.position_ids.len()
            )));
        }
        if self.segments.is_empty() {
            return Err(LvlmError::EmptyText);
        }
        let n_img = self.n_image();
        if self.segments[n_img..].contains(&Segment::Image) {
            return Err(LvlmError::Input("image positions must form a contiguous prefix".into()));
        }
        if self.position_ids.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(LvlmError::Input("position ids must be consecutive".into()));
        }
        Ok(())
    }
}

/// Post-block activations of every layer for every position: `[n_layers × T × d_model]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStates<S> {
    values: Tensor<S>,
}

impl<S: Scalar> HiddenStates<S> {
    pub fn from_layers(layers: Vec<Tensor<S>>) -> Result<Self, LvlmError> {
        let (t, d) = match layers.first().map(|l| l.shape().to_vec()).as_deref() {
            Some(&[t, d]) => (t, d),
            _ => return Err(LvlmError::Input("hidden states need at least one [T×d] layer".into())),
        };
        let mut data = Vec::with_capacity(layers.len() * t * d);
        for l in &layers {
            if l.shape() != [t, d] {
                return Err(LvlmError::Input("hidden state layers differ in shape".into()));
            }
            data.extend_from_slice(l.data());
        }
        Ok(Self { values: Tensor::new(vec![layers.len(), t, d], data)? })
    }

    pub fn values(&self) -> &Tensor<S> {
        &self.values
    }

    pub fn n_layers(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn d_model(&self) -> usize {
        self.values.shape()[2]
    }

    /// Rows `start..start+len` of layer `l` as `[len × d_model]`.
    pub fn slice(&self, l: usize, start: usize, len: usize) -> Tensor<S> {
        let (t, d) = (self.seq_len(), self.d_model());
        let base = l * t * d;
        Tensor::new(vec![len, d], self.values.data()[base + start * d..base + (start + len) * d].to_vec())
            .expect("slice in range")
    }
}

/// Per-layer key/value rows for every position processed so far.
#[derive(Clone, Debug)]
pub struct KvCache<S> {
    keys: Vec<Arc<Vec<S>>>,
    values: Vec<Arc<Vec<S>>>,
    len: usize,
    d_model: usize,
}

impl<S: Scalar> KvCache<S> {
    pub fn new(n_layers: usize, d_model: usize) -> Self {
        Self {
            keys: (0..n_layers).map(|_| Arc::new(Vec::new())).collect(),
            values: (0..n_layers).map(|_| Arc::new(Vec::new())).collect(),
            len: 0,
            d_model,
        }
    }

    /// Committed sequence length.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_layers(&self) -> usize {
        self.keys.len()
    }

    pub(crate) fn append(&mut self, layer: usize, k: &[S], v: &[S]) {
        Arc::make_mut(&mut self.keys[layer]).extend_from_slice(k);
        Arc::make_mut(&mut self.values[layer]).extend_from_slice(v);
    }

    pub(crate) fn layer(&self, layer: usize) -> (Arc<Vec<S>>, Arc<Vec<S>>) {
        (Arc::clone(&self.keys[layer]), Arc::clone(&self.values[layer]))
    }

    pub(crate) fn commit(&mut self, len: usize) {
        debug_assert!(self.keys.iter().all(|k| k.len() == len * self.d_model));
        self.len = len;
    }

    /// Drops rows appended after the last commit.
    pub(crate) fn rollback(&mut self) {
        let keep = self.len * self.d_model;
        for buf in self.keys.iter_mut().chain(self.values.iter_mut()) {
            Arc::make_mut(buf).truncate(keep);
        }
    }

    /// Key rows of `layer` as `[len × d_model]`.
    pub fn keys(&self, layer: usize) -> &[S] {
        &self.keys[layer]
    }

    pub fn values(&self, layer: usize) -> &[S] {
        &self.values[layer]
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<S> {
    /// `[T × vocab]`
    pub logits: Tensor<S>,
    pub hidden: Option<HiddenStates<S>>,
}
