//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails. Reports land in
//! `$CARGO_TARGET_TMPDIR/acceptance`.

use std::path::PathBuf;
use std::time::Instant;

use vift::corpus::{
    gen_caption_dataset, gen_composite_eval, gen_text_task_dataset, prompt_ids, to_jsonl, Record, Symbol, ToyImage,
    Vocab,
};
use vift::evalbench::{
    bench_overhead, emit_report, evaluate_seed, layer_strategies, sweep_alpha_beta, sweep_layers, train_toy,
    AlphaBetaRow, BenchConfig, DegeneracyThresholds, Direction, ExperimentConfig, LayerRow, ReportFormat, SeedResult,
    DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID, DEFAULT_LENGTHS,
};
use vift::lvlm::{load_checkpoint, save_checkpoint, GenerateParams, Lvlm, ModelConfig, ParamGroup};
use vift::rng::Rng;
use vift::steering::{default_layers, fused_generate, FusionConfig};
use vift::tensor::{grad_check, ParamStore};
use vift::train::{build_batches, loss_step, run_training, Batch, Example, Modality, TrainConfig, TrainData};

const SEEDS: [u64; 3] = [0, 1, 2];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn out_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn random_image(rng: &mut Rng, grid: usize) -> ToyImage {
    let cells = (0..grid * grid).map(|_| Symbol::from_code(rng.below(Symbol::COUNT) as u8).unwrap()).collect();
    ToyImage::from_cells(cells).unwrap()
}

fn fusion_identity() -> Outcome {
    let model: Lvlm<f32> = Lvlm::new(ModelConfig { seed: 11, ..Default::default() }).map_err(|e| e.to_string())?;
    let n = model.config().n_layers;
    let vocab = model.config().vocab_size;
    let mut rng = Rng::new(101);
    let params = GenerateParams::greedy(12);
    let mut same = 0;
    for _ in 0..50 {
        let image = random_image(&mut rng, model.config().patch_grid);
        let mut q = vec![vift::corpus::BOS];
        q.extend((0..1 + rng.below(10)).map(|_| 4 + rng.below(vocab - 4)));
        let lo = rng.below(n);
        let hi = lo + rng.below(n - lo);
        let cfg = FusionConfig { alpha: 1.0, beta: 0.0, lo, hi };
        let vis = model.visual_tokens(&image).map_err(|e| e.to_string())?;
        let plain = model.generate(Some(&vis), &q, &params).map_err(|e| e.to_string())?;
        let fused = fused_generate(&model, &image, &q, &cfg, &params).map_err(|e| e.to_string())?;
        same += usize::from(plain.tokens == fused.tokens());
    }
    check(same == 50, format!("{same}/50 prompts token-identical"))
}

fn gradient_check() -> Outcome {
    let cfg = ModelConfig::micro(16);
    let model: Lvlm<f64> = Lvlm::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(5);
    let image = random_image(&mut rng, cfg.patch_grid);
    let caption = Example { image: Some(image), prompt: vec![1, 7, 12], response: vec![4, 15, 9, 2] };
    let text = Example { image: None, prompt: vec![1, 5, 6, 11, 8], response: vec![13, 2] };
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let mut touched = [false; 3];
    for ex in [&caption, &text] {
        let batch = Batch::from_examples(&[ex]).map_err(|e| e.to_string())?;
        let (_, analytic) = loss_step(&model, &batch).map_err(|e| e.to_string())?;
        for (p, g) in model.params().iter().zip(&analytic) {
            if g.iter().any(|&x| x != 0.0) {
                let i = ParamGroup::ALL.iter().position(|&gr| gr == ParamGroup::of(&p.name)).unwrap();
                touched[i] = true;
            }
        }
        let mut store: ParamStore<f64> = model.params().clone();
        let report = grad_check(&mut store, &analytic, 1e-5, 32, 3, |ps| {
            let m = Lvlm::from_params(cfg.clone(), ps.clone()).unwrap();
            loss_step(&m, &batch).unwrap().0
        });
        for (name, e) in report.per_param {
            if e > worst {
                worst = e;
                worst_name = name;
            }
        }
    }
    check(
        worst < 1e-5 && touched.iter().all(|&t| t),
        format!("max relative error {worst:.2e} ({worst_name}); all groups touched: {}", touched.iter().all(|&t| t)),
    )
}

fn cache_equivalence() -> Outcome {
    let m: Lvlm<f32> = Lvlm::new(ModelConfig { seed: 3, ..Default::default() }).map_err(|e| e.to_string())?;
    let n_vis = m.config().n_visual();
    let vocab = m.config().vocab_size;
    let mut rng = Rng::new(77);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let vis = m.visual_tokens(&random_image(&mut rng, m.config().patch_grid)).map_err(|e| e.to_string())?;
        let n_prompt = 1 + rng.below(8);
        let n_more = 1 + rng.below(12);
        let text: Vec<usize> = (0..n_prompt + n_more).map(|_| 4 + rng.below(vocab - 4)).collect();
        let full = m.forward(&m.assemble_input(Some(&vis), &text).unwrap(), None, false, None).unwrap().logits;
        let mut cache = m.new_cache();
        let pre = m.forward(&m.assemble_input(Some(&vis), &text[..n_prompt]).unwrap(), Some(&mut cache), false, None);
        worst = worst.max(pre.unwrap().logits.max_abs_diff(&full.slice_rows(0, n_vis + n_prompt)));
        for (j, &t) in text[n_prompt..].iter().enumerate() {
            let pos = n_vis + n_prompt + j;
            let step = m.forward(&m.generated_input(t, pos).unwrap(), Some(&mut cache), false, None).unwrap();
            worst = worst.max(step.logits.max_abs_diff(&full.slice_rows(pos, 1)));
        }
    }
    check(worst <= 1e-5, format!("max |cached - full| = {worst:.2e} over 20 prompts"))
}

fn initial_loss() -> Outcome {
    let m: Lvlm<f32> = Lvlm::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let data = TrainData::from_records(&gen_caption_dataset(64, 9), &gen_text_task_dataset(64, 9)).unwrap();
    let ln_v = (Vocab::get().len() as f64).ln();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, group) in [("caption", &data.caption), ("text", &data.text)] {
        let refs: Vec<&Example> = group.iter().collect();
        let (loss, _) = loss_step(&m, &Batch::from_examples(&refs).unwrap()).map_err(|e| e.to_string())?;
        let rel = (loss - ln_v).abs() / ln_v;
        ok &= rel < 0.05;
        parts.push(format!("{name} {loss:.4} ({:.2}%)", 100.0 * rel));
    }
    check(ok, format!("ln V = {ln_v:.4}; {}", parts.join(", ")))
}

fn batching_invariants(cfg: &ExperimentConfig) -> Outcome {
    let data = cfg.train_data(0, 1.0).map_err(|e| e.to_string())?;
    let batches = build_batches(&[&data.caption, &data.text], cfg.train.batch_size, 0).map_err(|e| e.to_string())?;
    let mut mixed = 0;
    let mut seen = 0;
    for b in &batches {
        let pure = match b.modality {
            Modality::Caption => b.images.as_ref().is_some_and(|v| v.len() == b.len()),
            Modality::Text => b.images.is_none(),
        };
        mixed += usize::from(!pure);
        seen += b.len();
    }
    let m: Lvlm<f32> = Lvlm::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let mut worst_norm = 0.0f64;
    let mut text_batches = 0;
    for b in batches.iter().filter(|b| b.modality == Modality::Text).take(20) {
        let (_, g) = loss_step(&m, b).map_err(|e| e.to_string())?;
        let norm: f64 = m
            .params()
            .iter()
            .zip(&g)
            .filter(|(p, _)| ParamGroup::of(&p.name) == ParamGroup::Vision)
            .flat_map(|(_, g)| g.iter())
            .map(|&x| (x as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        worst_norm = worst_norm.max(norm);
        text_batches += 1;
    }
    let total = data.caption.len() + data.text.len();
    check(
        mixed == 0 && seen == total && worst_norm == 0.0 && text_batches > 0,
        format!(
            "{} batches, {mixed} mixed, {seen}/{total} examples; vision grad norm {worst_norm} on {text_batches} text batches",
            batches.len()
        ),
    )
}

fn determinism() -> Outcome {
    let a = to_jsonl(&gen_caption_dataset(300, 4).into_iter().map(Record::Caption).collect::<Vec<_>>());
    let b = to_jsonl(&gen_caption_dataset(300, 4).into_iter().map(Record::Caption).collect::<Vec<_>>());
    let c = to_jsonl(&gen_composite_eval(300, 4).into_iter().map(Record::Composite).collect::<Vec<_>>());
    let d = to_jsonl(&gen_composite_eval(300, 4).into_iter().map(Record::Composite).collect::<Vec<_>>());
    let data_same = a == b && c == d;

    let data = TrainData::from_records(&gen_caption_dataset(200, 4), &gen_text_task_dataset(200, 4)).unwrap();
    let tcfg = TrainConfig { seed: 4, stages: TrainConfig::two_stage(1), ..Default::default() };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for i in 0..2 {
        let mut m: Lvlm<f32> = Lvlm::new(ModelConfig { seed: 4, ..Default::default() }).map_err(|e| e.to_string())?;
        let out = run_training(&mut m, &tcfg, &data, None).map_err(|e| e.to_string())?;
        let p = dir.path().join(format!("run{i}.ckpt"));
        save_checkpoint(&p, &m, Some(&out.state.snapshot())).map_err(|e| e.to_string())?;
        runs.push((out.log.steps.iter().map(|s| s.loss).collect::<Vec<_>>(), std::fs::read(&p).unwrap(), m, p));
    }
    let loss_drift =
        runs[0].0.iter().zip(&runs[1].0).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
    let ckpt_same = runs[0].1 == runs[1].1;

    let loaded = load_checkpoint(&runs[0].3).map_err(|e| e.to_string())?.model;
    let params = GenerateParams::greedy(10);
    let fusion = FusionConfig::with_defaults(loaded.config().n_layers, 0.3);
    let mut gens_same = true;
    for r in gen_composite_eval(20, 5) {
        let q = prompt_ids(&r.question).unwrap();
        let before = runs[0].2.generate(Some(&runs[0].2.visual_tokens(&r.image).unwrap()), &q, &params).unwrap();
        let after = loaded.generate(Some(&loaded.visual_tokens(&r.image).unwrap()), &q, &params).unwrap();
        let fb = fused_generate(&runs[0].2, &r.image, &q, &fusion, &params).unwrap();
        let fa = fused_generate(&loaded, &r.image, &q, &fusion, &params).unwrap();
        gens_same &= before.tokens == after.tokens && fb.tokens() == fa.tokens();
    }
    check(
        data_same && loss_drift <= 1e-6 && ckpt_same && gens_same,
        format!(
            "datasets identical: {data_same}; loss drift {loss_drift:.1e} over {} steps; checkpoints identical: {ckpt_same}; generations preserved: {gens_same}",
            runs[0].0.len()
        ),
    )
}

struct Trained {
    seed: u64,
    model: Lvlm<f32>,
    result: SeedResult,
}

fn train_seeds(cfg: &ExperimentConfig) -> Result<Vec<Trained>, String> {
    let mut out = Vec::new();
    for &seed in &SEEDS {
        let t = Instant::now();
        let (model, _) = train_toy(cfg, seed, 1.0).map_err(|e| e.to_string())?;
        let result = evaluate_seed(cfg, &model, seed).map_err(|e| e.to_string())?;
        eprintln!(
            "  seed {seed}: beta {} unfused {:.3} fused {:.3} ({:.0}s)",
            result.beta,
            result.unfused.accuracy,
            result.fused.accuracy,
            t.elapsed().as_secs_f64()
        );
        out.push(Trained { seed, model, result });
    }
    Ok(out)
}

fn ability_fusion(trained: &[Trained]) -> Outcome {
    let n = trained.len() as f64;
    let fused = trained.iter().map(|t| t.result.fused.accuracy).sum::<f64>() / n;
    let unfused = trained.iter().map(|t| t.result.unfused.accuracy).sum::<f64>() / n;
    let per: Vec<String> = trained
        .iter()
        .map(|t| format!("s{}: {:.3}/{:.3} b={}", t.seed, t.result.unfused.accuracy, t.result.fused.accuracy, t.result.beta))
        .collect();
    check(
        fused > unfused,
        format!(
            "3-seed mean fused {fused:.3} vs unfused {unfused:.3} (+{:.1} points); {}",
            100.0 * (fused - unfused),
            per.join(", ")
        ),
    )
}

fn one_extra_pass(model: &Lvlm<f32>) -> Outcome {
    let prompts = gen_composite_eval(4, 99);
    let fusion = FusionConfig::with_defaults(model.config().n_layers, 0.3);
    let rows = bench_overhead(model, &prompts, &DEFAULT_LENGTHS, &fusion, &BenchConfig { runs: 10, warmup: 2 })
        .map_err(|e| e.to_string())?;
    let dir = out_dir();
    emit_report(&rows, &dir.join("bench_overhead.csv"), ReportFormat::Csv).map_err(|e| e.to_string())?;
    emit_report(&rows, &dir.join("bench_overhead.svg"), ReportFormat::Svg).map_err(|e| e.to_string())?;
    let passes_ok = rows.iter().all(|r| r.pass_delta == 1 && r.std_passes == r.length + 1);
    let first = &rows[0];
    let last = rows.last().unwrap();
    let desc: Vec<String> = rows.iter().map(|r| format!("{}: {:+.1}%", r.length, 100.0 * r.overhead)).collect();
    check(
        passes_ok && last.overhead < first.overhead,
        format!("pass delta 1 at all lengths: {passes_ok}; overhead {}", desc.join(", ")),
    )
}

fn layer_sweep(cfg: &ExperimentConfig, trained: &[Trained]) -> Outcome {
    let n = cfg.model.n_layers;
    let strategies = layer_strategies(n, &[25, 50, 75, 100]);
    let mut all: Vec<Vec<LayerRow>> = Vec::new();
    for t in trained {
        let (_, test) = cfg.composite_splits(t.seed);
        let rows = sweep_layers(&t.model, &test, &strategies, cfg.alpha, t.result.beta, &cfg.params())
            .map_err(|e| e.to_string())?;
        emit_report(&rows, &out_dir().join(format!("sweep_layers_seed{}.csv", t.seed)), ReportFormat::Csv)
            .map_err(|e| e.to_string())?;
        all.push(rows);
    }
    let shape_ok = all.iter().all(|rows| {
        rows.len() == 8
            && [Direction::TopDown, Direction::BottomUp].iter().all(|d| {
                let mut p: Vec<usize> = rows.iter().filter(|r| r.direction == *d).map(|r| r.percent).collect();
                p.sort();
                p == [25, 50, 75, 100]
            })
    });
    let mean = |d: Direction, p: usize| {
        all.iter().map(|rows| rows.iter().find(|r| r.direction == d && r.percent == p).unwrap().accuracy).sum::<f64>()
            / all.len() as f64
    };
    let mut means: Vec<(Direction, usize, f64)> = Vec::new();
    for d in [Direction::TopDown, Direction::BottomUp] {
        for p in [25, 50, 75, 100] {
            means.push((d, p, mean(d, p)));
        }
    }
    let top_half = mean(Direction::TopDown, 50);
    let bottom_half = mean(Direction::BottomUp, 50);
    let best = means.iter().cloned().fold(means[0], |b, m| if m.2 > b.2 { m } else { b });
    let top_half_best = means.iter().all(|m| m.2 <= top_half);
    let default_marked = all.iter().all(|rows| {
        rows.iter().filter(|r| r.is_default).map(|r| (r.direction, r.percent, r.lo, r.hi)).collect::<Vec<_>>()
            == [(Direction::TopDown, 50, default_layers(n).0, default_layers(n).1)]
    });
    check(
        shape_ok && default_marked && top_half >= bottom_half,
        format!(
            "top-down 50% {top_half:.3} vs bottom-up 50% {bottom_half:.3}; top-down-half best: {top_half_best} (best {:?} {}% {:.3})",
            best.0, best.1, best.2
        ),
    )
}

fn degeneracy_probe(cfg: &ExperimentConfig, t: &Trained) -> Outcome {
    let (dev, _) = cfg.composite_splits(t.seed);
    let (lo, hi) = default_layers(cfg.model.n_layers);
    let thresholds = DegeneracyThresholds::default();
    let rows: Vec<AlphaBetaRow> =
        sweep_alpha_beta(&t.model, &dev, &DEFAULT_ALPHA_GRID, &DEFAULT_BETA_GRID, (lo, hi), &thresholds, &cfg.params())
            .map_err(|e| e.to_string())?;
    let path = out_dir().join("sweep_alpha_beta.csv");
    emit_report(&rows, &path, ReportFormat::Csv).map_err(|e| e.to_string())?;
    emit_report(&rows, &path.with_extension("svg"), ReportFormat::Svg).map_err(|e| e.to_string())?;
    let header = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let header = header.lines().next().unwrap_or("");
    let columns_ok = ["mean_entropy", "mean_repeat_run", "max_repeat_run", "degenerate"].iter().all(|c| header.contains(c));
    let count_ok = rows.len() == DEFAULT_ALPHA_GRID.len() * DEFAULT_BETA_GRID.len();
    let max_beta = DEFAULT_BETA_GRID.iter().cloned().fold(f64::MIN, f64::max);
    let top: Vec<&AlphaBetaRow> = rows.iter().filter(|r| r.beta == max_beta).collect();
    let consistent = top.iter().all(|r| !(r.mean_repeat_run > thresholds.repeat_run) || r.degenerate);
    let flagged = rows.iter().filter(|r| r.degenerate).count();
    let worst_rep = rows.iter().map(|r| r.mean_repeat_run).fold(0.0, f64::max);
    let verdict = if flagged == 0 {
        "no degeneracy occurred".to_string()
    } else {
        format!("{flagged} grid points flagged, largest beta flagged: {}", top.iter().all(|r| r.degenerate))
    };
    check(
        columns_ok && count_ok && consistent,
        format!("{} rows; {verdict}; worst mean repeat run {worst_rep:.2} (threshold {})", rows.len(), thresholds.repeat_run),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().cloned().unwrap_or_default())));
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] criterion {id:>2} {name}: {detail} ({secs:.1}s)");
        results.push((id, name, r, secs));
    };
    let cfg = ExperimentConfig::default();

    run(1, "fusion identity", &mut fusion_identity);
    run(2, "gradient correctness", &mut gradient_check);
    run(5, "cache equivalence", &mut cache_equivalence);
    run(6, "initial loss", &mut initial_loss);
    run(7, "batching and conditioning", &mut || batching_invariants(&cfg));
    run(10, "determinism and persistence", &mut determinism);

    let t = Instant::now();
    eprintln!("training {} seed models", SEEDS.len());
    match train_seeds(&cfg) {
        Ok(trained) => {
            eprintln!("  trained and evaluated in {:.0}s", t.elapsed().as_secs_f64());
            run(3, "ability fusion", &mut || ability_fusion(&trained));
            run(4, "one extra pass", &mut || one_extra_pass(&trained[0].model));
            run(8, "layer sweep", &mut || layer_sweep(&cfg, &trained));
            run(9, "degeneracy probe", &mut || degeneracy_probe(&cfg, &trained[0]));
        }
        Err(e) => {
            for (id, name) in [(3, "ability fusion"), (4, "one extra pass"), (8, "layer sweep"), (9, "degeneracy probe")] {
                run(id, name, &mut || Err(format!("training failed: {e}")));
            }
        }
    }

    results.sort_by_key(|r| r.0);
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
