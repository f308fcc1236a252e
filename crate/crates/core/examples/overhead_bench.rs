//! Wall-clock cost of the extra task pass at several generation lengths.
//! Untrained weights time the same as trained ones, so no checkpoint is needed.

use vift::corpus::gen_composite_eval;
use vift::evalbench::{bench_overhead, emit_report, BenchConfig, ReportFormat, DEFAULT_LENGTHS};
use vift::lvlm::{Lvlm, ModelConfig};
use vift::steering::FusionConfig;

fn main() {
    let model: Lvlm<f32> = Lvlm::new(ModelConfig::default()).unwrap();
    let fusion = FusionConfig::with_defaults(model.config().n_layers, 0.3);
    let rows =
        bench_overhead(&model, &gen_composite_eval(4, 0), &DEFAULT_LENGTHS, &fusion, &BenchConfig::default()).unwrap();
    println!("length  standard ms  fused ms  overhead  passes");
    for r in &rows {
        println!(
            "{:>6}  {:>11.2}  {:>8.2}  {:>+7.1}%  {} vs {}",
            r.length,
            r.std_ms,
            r.fused_ms,
            100.0 * r.overhead,
            r.std_passes,
            r.fused_passes
        );
    }
    let base = std::env::temp_dir().join("vift_bench_overhead");
    emit_report(&rows, &base.with_extension("csv"), ReportFormat::Csv).unwrap();
    emit_report(&rows, &base.with_extension("svg"), ReportFormat::Svg).unwrap();
}
