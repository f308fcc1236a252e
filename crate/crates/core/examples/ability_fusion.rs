//! The main experiment: train on captions and text tasks only, then score
//! held-out composite questions with and without fusion for three seeds.
//! Takes about ten minutes in release mode.
//!
//!     cargo run --release --example ability_fusion -- [OUT.csv]

use vift::evalbench::{emit_report, evaluate_seed, train_toy, EvalRow, ExperimentConfig, ReportFormat};
use vift::steering::FusionConfig;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VIFT_LOG", "info")).init();
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("vift_ability_fusion.csv"));
    let cfg = ExperimentConfig::default();
    let mut rows = Vec::new();
    let (mut fused, mut unfused) = (0.0, 0.0);
    for seed in [0, 1, 2] {
        let (model, _) = train_toy(&cfg, seed, 1.0).unwrap();
        let r = evaluate_seed(&cfg, &model, seed).unwrap();
        println!("seed {seed}: beta {:<5} unfused {:.3} fused {:.3}", r.beta, r.unfused.accuracy, r.fused.accuracy);
        let f = FusionConfig { alpha: cfg.alpha, beta: r.beta, lo: r.lo, hi: r.hi };
        rows.push(EvalRow::new(None, &r.unfused));
        rows.push(EvalRow::new(Some(&f), &r.fused));
        fused += r.fused.accuracy / 3.0;
        unfused += r.unfused.accuracy / 3.0;
    }
    println!("mean: unfused {unfused:.3} fused {fused:.3}");
    emit_report(&rows, &out, ReportFormat::Csv).unwrap();
    println!("wrote {}", out.display());
}
