//! Accuracy and degeneracy indicators over the alpha/beta grid.
//! Writes CSV and SVG to the temp dir.
//!
//!     cargo run --release --example alpha_beta_sweep -- [CHECKPOINT]

use vift::corpus::gen_composite_eval;
use vift::evalbench::{
    emit_report, sweep_alpha_beta, train_toy, DegeneracyThresholds, ExperimentConfig, ReportFormat, DEFAULT_ALPHA_GRID,
    DEFAULT_BETA_GRID,
};
use vift::lvlm::{load_checkpoint, GenerateParams, Lvlm};
use vift::steering::default_layers;
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
    let records = gen_composite_eval(100, 7);
    let layers = default_layers(model.config().n_layers);
    let rows = sweep_alpha_beta(
        &model,
        &records,
        &DEFAULT_ALPHA_GRID,
        &DEFAULT_BETA_GRID,
        layers,
        &DegeneracyThresholds::default(),
        &GenerateParams::greedy(8),
    )
    .unwrap();
    println!("alpha  beta   acc    entropy  repeat  degenerate");
    for r in &rows {
        println!(
            "{:<5}  {:<5}  {:.3}  {:>7.3}  {:>6.2}  {}",
            r.alpha, r.beta, r.accuracy, r.mean_entropy, r.mean_repeat_run, r.degenerate
        );
    }
    let base = std::env::temp_dir().join("vift_sweep_alpha_beta");
    emit_report(&rows, &base.with_extension("csv"), ReportFormat::Csv).unwrap();
    emit_report(&rows, &base.with_extension("svg"), ReportFormat::Svg).unwrap();
    println!("wrote {}.{{csv,svg}}", base.display());
}
