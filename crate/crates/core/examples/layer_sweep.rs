//! Top-down vs bottom-up fusion ranges covering 25, 50, 75 and 100% of blocks.
//!
//!     cargo run --release --example layer_sweep -- [CHECKPOINT]

use vift::corpus::gen_composite_eval;
use vift::evalbench::{emit_report, layer_strategies, sweep_layers, train_toy, ExperimentConfig, ReportFormat};
use vift::lvlm::{load_checkpoint, GenerateParams, Lvlm};
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
    let records = gen_composite_eval(200, 7);
    let strategies = layer_strategies(model.config().n_layers, &[25, 50, 75, 100]);
    let rows = sweep_layers(&model, &records, &strategies, 1.0, 0.3, &GenerateParams::greedy(8)).unwrap();
    for r in &rows {
        let mark = if r.is_default { "  (default)" } else { "" };
        println!("{:?} {:>3}%  layers {}-{}  accuracy {:.3}{mark}", r.direction, r.percent, r.lo, r.hi, r.accuracy);
    }
    let base = std::env::temp_dir().join("vift_sweep_layers");
    emit_report(&rows, &base.with_extension("csv"), ReportFormat::Csv).unwrap();
    emit_report(&rows, &base.with_extension("svg"), ReportFormat::Svg).unwrap();
    println!("wrote {}.{{csv,svg}}", base.display());
}
