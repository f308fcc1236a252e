use serde::{Deserialize, Serialize};

use super::oracle::{answer, Question};
use super::scene::{caption_of, render_scene, Color, SceneObject, SceneSpec, Shape, ToyImage};
use crate::rng::Rng;

/// Caption-request phrasings; every caption record draws its query from here.
pub const CAPTION_QUERIES: [&str; 8] = [
    "describe the image .",
    "what is in the image ?",
    "list the objects in the image .",
    "give a short caption for the image .",
    "what does the picture show ?",
    "describe what you see .",
    "caption this picture .",
    "tell me what is in the picture .",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    #[serde(rename = "grid")]
    pub image: ToyImage,
    pub query: String,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub query: String,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeRecord {
    #[serde(rename = "grid")]
    pub image: ToyImage,
    pub question: String,
    pub answer: String,
}

/// One JSONL line; the `kind` field selects the schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Caption(CaptionRecord),
    Text(TextRecord),
    Composite(CompositeRecord),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataGenConfig {
    pub grid: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// One scene in `eval_modulus` (by hash) is reserved for evaluation.
    pub eval_modulus: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self { grid: 4, min_objects: 1, max_objects: 6, eval_modulus: 8 }
    }
}

impl DataGenConfig {
    /// Whether `spec` belongs to the held-out evaluation partition.
    pub fn is_eval_scene(&self, spec: &SceneSpec) -> bool {
        spec.hash().is_multiple_of(self.eval_modulus)
    }
}

const CAPTION_STREAM: u64 = 1;
const TEXT_STREAM: u64 = 2;
const COMPOSITE_STREAM: u64 = 3;

pub fn random_scene(rng: &mut Rng, cfg: &DataGenConfig) -> SceneSpec {
    let cells = cfg.grid * cfg.grid;
    let n = rng.range(cfg.min_objects, cfg.max_objects.min(cells));
    let mut patches: Vec<usize> = (0..cells).collect();
    rng.shuffle(&mut patches);
    let objects = patches[..n]
        .iter()
        .map(|&patch| SceneObject { shape: *rng.choose(&Shape::ALL), color: *rng.choose(&Color::ALL), patch })
        .collect();
    SceneSpec::new(objects, cfg.grid).expect("distinct patches")
}

fn scene_in(rng: &mut Rng, cfg: &DataGenConfig, eval: bool) -> SceneSpec {
    loop {
        let s = random_scene(rng, cfg);
        if cfg.is_eval_scene(&s) == eval {
            return s;
        }
    }
}

pub fn random_question(rng: &mut Rng) -> Question {
    match rng.below(4) {
        0 => Question::CountColor(*rng.choose(&Color::ALL)),
        1 => Question::CountShape(*rng.choose(&Shape::ALL)),
        2 => {
            let a = *rng.choose(&Shape::ALL);
            let others: Vec<Shape> = Shape::ALL.into_iter().filter(|&s| s != a).collect();
            Question::MoreThan(a, *rng.choose(&others))
        }
        _ => Question::Exists(*rng.choose(&Color::ALL), *rng.choose(&Shape::ALL)),
    }
}

pub fn gen_caption_dataset(n: usize, seed: u64) -> Vec<CaptionRecord> {
    gen_caption_dataset_with(n, seed, &DataGenConfig::default())
}

pub fn gen_caption_dataset_with(n: usize, seed: u64, cfg: &DataGenConfig) -> Vec<CaptionRecord> {
    let mut rng = Rng::derive(seed, CAPTION_STREAM);
    (0..n)
        .map(|_| {
            let spec = scene_in(&mut rng, cfg, false);
            let query = rng.choose(&CAPTION_QUERIES).to_string();
            CaptionRecord { image: render_scene(&spec, cfg.grid).unwrap(), query, response: caption_of(&spec) }
        })
        .collect()
}

pub fn gen_text_task_dataset(n: usize, seed: u64) -> Vec<TextRecord> {
    gen_text_task_dataset_with(n, seed, &DataGenConfig::default())
}

/// Text-only task records: the scene is described in caption grammar inside the query.
pub fn gen_text_task_dataset_with(n: usize, seed: u64, cfg: &DataGenConfig) -> Vec<TextRecord> {
    let mut rng = Rng::derive(seed, TEXT_STREAM);
    (0..n)
        .map(|_| {
            let spec = scene_in(&mut rng, cfg, false);
            let q = random_question(&mut rng);
            TextRecord { query: format!("{} {}", caption_of(&spec), q), response: answer(&spec, q) }
        })
        .collect()
}

pub fn gen_composite_eval(n: usize, seed: u64) -> Vec<CompositeRecord> {
    gen_composite_eval_with(n, seed, &DataGenConfig::default())
}

pub fn gen_composite_eval_with(n: usize, seed: u64, cfg: &DataGenConfig) -> Vec<CompositeRecord> {
    let mut rng = Rng::derive(seed, COMPOSITE_STREAM);
    (0..n)
        .map(|_| {
            let spec = scene_in(&mut rng, cfg, true);
            let q = random_question(&mut rng);
            CompositeRecord {
                image: render_scene(&spec, cfg.grid).unwrap(),
                question: q.to_string(),
                answer: answer(&spec, q),
            }
        })
        .collect()
}
