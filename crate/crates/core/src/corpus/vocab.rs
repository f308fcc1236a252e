use std::collections::HashMap;
use std::sync::OnceLock;

use super::scene::{Color, Shape};
use super::CorpusError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const IMAGE: usize = 3;

/// Largest count answer the vocabulary can express.
pub const MAX_COUNT: usize = 16;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<image>"];

const GRAMMAR: &[&str] = &[
    "a", "an", "empty", "scene", ",", ".", "?", "how", "many", "items", "are", "there", "more", "than", "is", "yes",
    "no",
];

const QUERY_WORDS: &[&str] = &[
    "describe", "the", "image", "what", "in", "list", "objects", "give", "short", "caption", "for", "does", "picture",
    "show", "you", "see", "this", "tell", "me",
];

/// Closed word-level vocabulary.
#[derive(Clone, Debug)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn build() -> Self {
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(GRAMMAR.iter().map(|s| s.to_string()));
        words.extend(Color::ALL.iter().map(|c| c.word().to_string()));
        words.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
        words.extend(Shape::ALL.iter().map(|s| s.plural().to_string()));
        words.extend((0..=MAX_COUNT).map(|n| n.to_string()));
        words.extend(QUERY_WORDS.iter().map(|s| s.to_string()));
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    /// The shared vocabulary instance.
    pub fn get() -> &'static Vocab {
        static V: OnceLock<Vocab> = OnceLock::new();
        V.get_or_init(Vocab::build)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, CorpusError> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| CorpusError::UnknownWord(w.to_string())))
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.word(i).unwrap_or("<unk>")).collect::<Vec<_>>().join(" ")
    }

    /// Ids of every word that is a valid short answer (counts, yes, no).
    pub fn answer_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..=MAX_COUNT).map(|n| self.id(&n.to_string()).unwrap()).collect();
        ids.push(self.id("yes").unwrap());
        ids.push(self.id("no").unwrap());
        ids
    }
}

pub fn tokenize(text: &str) -> Result<Vec<usize>, CorpusError> {
    Vocab::get().tokenize(text)
}

pub fn detokenize(ids: &[usize]) -> String {
    Vocab::get().detokenize(ids)
}

/// Instruction text as model input: `<bos>` followed by the query words.
pub fn prompt_ids(query: &str) -> Result<Vec<usize>, CorpusError> {
    let mut ids = vec![BOS];
    ids.extend(tokenize(query)?);
    Ok(ids)
}

/// Target text as model output: the response words followed by `<eos>`.
pub fn response_ids(response: &str) -> Result<Vec<usize>, CorpusError> {
    let mut ids = tokenize(response)?;
    ids.push(EOS);
    Ok(ids)
}
