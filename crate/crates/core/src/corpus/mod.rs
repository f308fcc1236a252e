//! Synthetic compositional scenes, captions, text tasks, evaluation records,
//! the answer oracle, the closed vocabulary and JSONL persistence.

mod datasets;
mod jsonl;
mod oracle;
mod scene;
mod vocab;

pub use datasets::{
    gen_caption_dataset, gen_caption_dataset_with, gen_composite_eval, gen_composite_eval_with,
    gen_text_task_dataset, gen_text_task_dataset_with, random_question, random_scene, CaptionRecord,
    CompositeRecord, DataGenConfig, Record, TextRecord, CAPTION_QUERIES,
};
pub(crate) use jsonl::write_atomic;
pub use jsonl::{parse_jsonl, read_jsonl, to_jsonl, write_jsonl};
pub use oracle::{answer, oracle_answer, Question};
pub use scene::{caption_of, parse_caption, render_scene, Color, SceneObject, SceneSpec, Shape, Symbol, ToyImage};
pub use vocab::{detokenize, prompt_ids, response_ids, tokenize, Vocab, BOS, EOS, IMAGE, MAX_COUNT, PAD};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("unknown symbol code {0}")]
    UnknownSymbol(u8),
    #[error("grid of {0} cells is not a square")]
    BadGrid(usize),
    #[error("two objects placed on patch {0}")]
    PlacementCollision(usize),
    #[error("patch {patch} outside a grid of {cells} cells")]
    PlacementOutOfGrid { patch: usize, cells: usize },
    #[error("not a canonical caption: {0:?}")]
    BadCaption(String),
    #[error("question matches no template: {0:?}")]
    UnknownTemplate(String),
    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("{0}: {1}")]
    Io(String, String),
}
