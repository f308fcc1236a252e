//! Generates a few records of each kind, answers a question with the oracle,
//! and writes the three JSONL splits to a directory (default: a temp dir).

use vift::corpus::{
    gen_caption_dataset, gen_composite_eval, gen_text_task_dataset, oracle_answer, tokenize, write_jsonl, Record,
    SceneSpec, Vocab,
};

fn main() {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("vift_corpus"));
    std::fs::create_dir_all(&dir).unwrap();

    let caps = gen_caption_dataset(200, 0);
    let texts = gen_text_task_dataset(200, 0);
    let comps = gen_composite_eval(50, 0);

    let c = &caps[0];
    println!("image:\n{}", c.image);
    println!("caption  {} -> {}", c.query, c.response);
    println!("text     {} -> {}", texts[0].query, texts[0].response);
    println!("composite {} -> {}", comps[0].question, comps[0].answer);

    let spec = SceneSpec::from_image(&comps[0].image);
    println!("oracle agrees: {}", oracle_answer(&spec, &comps[0].question).unwrap() == comps[0].answer);
    println!("vocab size {}, tokens {:?}", Vocab::get().len(), tokenize(&comps[0].question).unwrap());

    write_jsonl(&dir.join("caption.jsonl"), &caps.into_iter().map(Record::Caption).collect::<Vec<_>>()).unwrap();
    write_jsonl(&dir.join("text.jsonl"), &texts.into_iter().map(Record::Text).collect::<Vec<_>>()).unwrap();
    write_jsonl(&dir.join("composite.jsonl"), &comps.into_iter().map(Record::Composite).collect::<Vec<_>>()).unwrap();
    println!("wrote {}", dir.display());
}
