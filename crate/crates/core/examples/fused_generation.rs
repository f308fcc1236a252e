//! Standard vs ability-fused answers to composite questions, with the
//! forward-pass trace of each.
//!
//!     cargo run --release --example fused_generation -- [CHECKPOINT]

use vift::corpus::{detokenize, gen_composite_eval, prompt_ids};
use vift::evalbench::{train_toy, ExperimentConfig};
use vift::lvlm::{load_checkpoint, GenerateParams, Lvlm};
use vift::steering::{fused_generate, FusionConfig};
use vift::train::TrainConfig;

fn model() -> Lvlm<f32> {
    match std::env::args().nth(1) {
        Some(p) => load_checkpoint(std::path::Path::new(&p)).unwrap().model,
        None => {
            eprintln!("no checkpoint given; training a small model first");
            let cfg = ExperimentConfig {
                n_caption: 600,
                n_text: 600,
                train: TrainConfig { stages: TrainConfig::two_stage(2), ..Default::default() },
                ..Default::default()
            };
            train_toy(&cfg, 0, 1.0).unwrap().0
        }
    }
}

fn main() {
    let model = model();
    let fusion = FusionConfig::with_defaults(model.config().n_layers, 0.3);
    let params = GenerateParams::greedy(8);
    for r in gen_composite_eval(6, 42) {
        let q = prompt_ids(&r.question).unwrap();
        let plain = model.generate(Some(&model.visual_tokens(&r.image).unwrap()), &q, &params).unwrap();
        let fused = fused_generate(&model, &r.image, &q, &fusion, &params).unwrap();
        println!("{}  (gold {})", r.question, r.answer);
        println!("  standard: {:<28} passes {}", detokenize(&plain.tokens), plain.forward_passes);
        println!(
            "  fused:    {:<28} passes {}  task pass {:.2} ms  rows replaced {}",
            detokenize(&fused.generation.tokens),
            fused.forward_passes(),
            fused.task_pass_time.as_secs_f64() * 1e3,
            fused.replacement_count()
        );
    }
}
