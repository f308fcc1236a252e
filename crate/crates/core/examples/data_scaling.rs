//! Fused composite accuracy as the training corpora grow. One seed and a
//! reduced corpus by default; pass a larger size for the full curve.
//!
//!     cargo run --release --example data_scaling -- [N_PER_CORPUS]

use vift::evalbench::{emit_report, scaling_test, ExperimentConfig, ReportFormat};
use vift::train::TrainConfig;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VIFT_LOG", "info")).init();
    let n: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(800);
    let cfg = ExperimentConfig {
        n_caption: n,
        n_text: n,
        train: TrainConfig { stages: TrainConfig::two_stage(2), ..Default::default() },
        ..Default::default()
    };
    let rows = scaling_test(&cfg, &[0.1, 0.25, 0.5, 1.0], &[0]).unwrap();
    for r in &rows {
        println!(
            "fraction {:<4}  {:>4} captions {:>4} texts  unfused {:.3}  fused {:.3}",
            r.fraction, r.n_caption, r.n_text, r.unfused_accuracy, r.fused_accuracy
        );
    }
    let base = std::env::temp_dir().join("vift_scaling");
    emit_report(&rows, &base.with_extension("csv"), ReportFormat::Csv).unwrap();
    emit_report(&rows, &base.with_extension("svg"), ReportFormat::Svg).unwrap();
}
