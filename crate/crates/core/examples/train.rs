//! Two-stage training of the default toy model on captions and text tasks.
//! Writes the checkpoint and per-step metrics next to each other.
//!
//!     cargo run --release --example train -- [OUT.ckpt] [N_PER_CORPUS] [EPOCHS]

use vift::corpus::{gen_caption_dataset, gen_text_task_dataset};
use vift::lvlm::{Lvlm, ModelConfig};
use vift::train::{run_training, save_training_checkpoint, TrainConfig, TrainData};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VIFT_LOG", "info")).init();
    let mut args = std::env::args().skip(1);
    let out = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("vift_toy.ckpt"));
    let n: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(2000);
    let epochs: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(3);

    let data = TrainData::from_records(&gen_caption_dataset(n, 0), &gen_text_task_dataset(n, 0)).unwrap();
    let val = TrainData::from_records(&gen_caption_dataset(100, 1000), &gen_text_task_dataset(100, 1000)).unwrap();
    let mut model: Lvlm<f32> = Lvlm::new(ModelConfig::default()).unwrap();
    let cfg = TrainConfig { stages: TrainConfig::two_stage(epochs), ..Default::default() };
    let outcome = run_training(&mut model, &cfg, &data, Some(&val)).unwrap();

    for e in &outcome.log.epochs {
        println!(
            "{:>7} epoch {}  train {:.4}  val caption {:.4}  val text {:.4}",
            e.stage,
            e.epoch,
            e.mean_loss,
            e.val_caption.unwrap_or(f64::NAN),
            e.val_text.unwrap_or(f64::NAN)
        );
    }
    save_training_checkpoint(&out, &model, &outcome.state).unwrap();
    outcome.log.write_csv(&out.with_extension("csv")).unwrap();
    println!("checkpoint {}", out.display());
}
