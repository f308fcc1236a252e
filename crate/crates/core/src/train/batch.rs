use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::{prompt_ids, response_ids, CaptionRecord, TextRecord, ToyImage, PAD};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Caption,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Caption => "caption",
            Modality::Text => "text",
        }
    }
}

/// One tokenized training record.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image: Option<ToyImage>,
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
}

impl Example {
    pub fn modality(&self) -> Modality {
        if self.image.is_some() {
            Modality::Caption
        } else {
            Modality::Text
        }
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Prompt followed by response.
    pub fn sequence(&self) -> Vec<usize> {
        let mut s = self.prompt.clone();
        s.extend_from_slice(&self.response);
        s
    }

    pub fn from_caption(r: &CaptionRecord) -> Result<Self, TrainError> {
        Ok(Self { image: Some(r.image.clone()), prompt: prompt_ids(&r.query)?, response: response_ids(&r.response)? })
    }

    pub fn from_text(r: &TextRecord) -> Result<Self, TrainError> {
        Ok(Self { image: None, prompt: prompt_ids(&r.query)?, response: response_ids(&r.response)? })
    }
}

/// Tokenized training corpora by modality.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub caption: Vec<Example>,
    pub text: Vec<Example>,
}

impl TrainData {
    pub fn from_records(caption: &[CaptionRecord], text: &[TextRecord]) -> Result<Self, TrainError> {
        Ok(Self {
            caption: caption.iter().map(Example::from_caption).collect::<Result<_, _>>()?,
            text: text.iter().map(Example::from_text).collect::<Result<_, _>>()?,
        })
    }

    pub fn get(&self, m: Modality) -> &[Example] {
        match m {
            Modality::Caption => &self.caption,
            Modality::Text => &self.text,
        }
    }
}

/// A single-modality batch, padded to its longest sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub modality: Modality,
    /// `[B × max_len]`, `PAD`-filled past each sequence's end.
    pub tokens: Vec<Vec<usize>>,
    /// True on response tokens only.
    pub loss_mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
    /// Present exactly for caption batches.
    pub images: Option<Vec<ToyImage>>,
}

impl Batch {
    pub fn from_examples(examples: &[&Example]) -> Result<Self, TrainError> {
        let modality = match examples.first() {
            Some(e) => e.modality(),
            None => return Err(TrainError::EmptyBatch),
        };
        if examples.iter().any(|e| e.modality() != modality) {
            return Err(TrainError::MixedBatch);
        }
        let max_len = examples.iter().map(|e| e.len()).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(examples.len());
        let mut loss_mask = Vec::with_capacity(examples.len());
        for e in examples {
            let mut t = e.sequence();
            let mut m: Vec<bool> = (0..t.len()).map(|i| i >= e.prompt.len()).collect();
            t.resize(max_len, PAD);
            m.resize(max_len, false);
            tokens.push(t);
            loss_mask.push(m);
        }
        let images = match modality {
            Modality::Caption => Some(examples.iter().map(|e| e.image.clone().expect("caption has image")).collect()),
            Modality::Text => None,
        };
        Ok(Self { modality, tokens, loss_mask, lengths: examples.iter().map(|e| e.len()).collect(), images })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn padded_len(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    /// Number of response tokens that carry loss.
    pub fn target_count(&self) -> usize {
        self.loss_mask.iter().flatten().filter(|&&m| m).count()
    }
}

/// Groups records by modality, batches each group and shuffles the batch order.
///
/// Records are shuffled within their modality before chunking; both shuffles
/// are driven by `seed`.
pub fn build_batches(groups: &[&[Example]], batch_size: usize, seed: u64) -> Result<Vec<Batch>, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    if groups.iter().all(|g| g.is_empty()) {
        return Err(TrainError::MissingData("no records to batch".into()));
    }
    let mut rng = Rng::new(seed);
    let mut batches = Vec::new();
    for modality in [Modality::Caption, Modality::Text] {
        let mut pool: Vec<&Example> =
            groups.iter().flat_map(|g| g.iter()).filter(|e| e.modality() == modality).collect();
        rng.shuffle(&mut pool);
        for chunk in pool.chunks(batch_size) {
            batches.push(Batch::from_examples(chunk)?);
        }
    }
    rng.shuffle(&mut batches);
    Ok(batches)
}
