//! Extracts the task vector (question alone) and the perception vector (image
//! plus question), fuses them, and prints how far each layer moves.
//!
//!     cargo run --release --example steering_vectors -- [CHECKPOINT]

use vift::corpus::{gen_composite_eval, prompt_ids};
use vift::evalbench::{train_toy, ExperimentConfig};
use vift::lvlm::{load_checkpoint, Lvlm};
use vift::steering::{default_layers, extract_perception_vector, extract_task_vector, fuse, FusionConfig};
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

fn norm(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() / (norm(a) * norm(b))
}

fn main() {
    let model = model();
    let n = model.config().n_layers;
    let r = &gen_composite_eval(1, 3)[0];
    let q = prompt_ids(&r.question).unwrap();
    let layers: Vec<usize> = (0..n).collect();
    let hq = extract_task_vector(&model, &q, &layers).unwrap();
    let hvq = extract_perception_vector(&model, &r.image, &q, &layers).unwrap();
    let (lo, hi) = default_layers(n);
    let cfg = FusionConfig { alpha: 1.0, beta: 0.3, lo: 0, hi: n - 1 };
    let fused = fuse(&hvq, &hq, &cfg).unwrap();
    println!("question: {}  (fused by default: layers {lo}-{hi})", r.question);
    println!("layer  |h(v,q)|  |h(q)|  cos(h(v,q), h(q))  |fused - h(v,q)|");
    for l in layers {
        let a = hvq.get(l).unwrap().data();
        let b = hq.get(l).unwrap().data();
        let f = fused.get(l).unwrap().data();
        let delta: Vec<f32> = f.iter().zip(a).map(|(x, y)| x - y).collect();
        println!("{l:>5}  {:>8.2}  {:>6.2}  {:>17.3}  {:>15.3}", norm(a), norm(b), cosine(a, b), norm(&delta));
    }
}
