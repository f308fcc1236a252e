//! The `vift` command line: data generation, training, generation, evaluation,
//! sweeps and benchmarks driven by a TOML run config plus flag overrides.

mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use config::*;

use crate::corpus::{
    gen_caption_dataset, gen_composite_eval, gen_text_task_dataset, prompt_ids, read_jsonl, write_jsonl, CaptionRecord,
    CompositeRecord, Record, TextRecord, ToyImage,
};
use crate::evalbench::{
    bench_overhead, emit_report, eval_composite, layer_strategies, scaling_test, sweep_alpha_beta, sweep_layers,
    BenchConfig, EvalRow, ExperimentConfig, ModelGenerator, ReportFormat, ReportRow,
};
use crate::lvlm::{load_checkpoint, GenerateParams, Lvlm};
use crate::steering::{fused_generate, FusionConfig, LayerStrategy};
use crate::train::{run_training, save_training_checkpoint, TrainData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vift", version, about = "Train a toy vision-language model and fuse abilities at inference")]
pub struct Cli {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where JSONL datasets are read and written [default: data].
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Where checkpoints and reports go [default: runs].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write caption, text-task and composite JSONL files.
    GenData(GenDataArgs),
    /// Train a model on the caption and text files.
    Train,
    /// Answer one question about one image.
    Generate(GenerateArgs),
    /// Composite accuracy with and without fusion.
    Eval(EvalArgs),
    /// Alpha/beta, fusion-layer or data-scaling sweeps.
    Sweep(SweepArgs),
    /// Fused vs standard generation time by output length.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n_caption: Option<usize>,
    #[arg(long)]
    pub n_text: Option<usize>,
    #[arg(long)]
    pub n_composite: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FusionArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// `top:K`, `bottom:K` or `LO-HI` (inclusive, 0-based).
    #[arg(long, value_name = "SPEC")]
    pub fusion_layers: Option<LayerStrategy>,
    #[arg(long)]
    pub no_fusion: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Inline image: P² symbol codes separated by commas or spaces.
    #[arg(long, value_parser = parse_grid, conflicts_with = "image")]
    pub grid: Option<ToyImage>,
    /// JSONL file with caption or composite records; see `--index`.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub max_new: Option<usize>,
    /// Print forward-pass count and timings.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Composite JSONL [default: DATA_DIR/composite.jsonl].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sweep fusion layer ranges instead of alpha and beta.
    #[arg(long, conflicts_with = "scaling")]
    pub layers: bool,
    /// Train fresh models on fractions of the data.
    #[arg(long)]
    pub scaling: bool,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1.0")]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// CSV path; an SVG chart is written alongside.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

fn parse_grid(s: &str) -> Result<ToyImage, String> {
    let codes = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u8>().map_err(|_| format!("not a symbol code: {t:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    ToyImage::try_from(codes).map_err(|e| e.to_string())
}

/// Failure split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

/// Loads the config file (if any) and applies the global flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    cfg.propagate_seed();
    Ok(cfg)
}

fn apply_fusion_flags(cfg: &mut RunConfig, f: &FusionArgs) {
    if let Some(a) = f.alpha {
        cfg.fusion.alpha = a;
    }
    if let Some(b) = f.beta {
        cfg.fusion.beta = b;
    }
    if let Some(l) = f.fusion_layers {
        cfg.fusion.layers = Some(l);
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenData(a) => {
            if let Some(n) = a.n_caption {
                cfg.data.n_caption = n;
            }
            if let Some(n) = a.n_text {
                cfg.data.n_text = n;
            }
            if let Some(n) = a.n_composite {
                cfg.data.n_composite = n;
            }
            cmd_gen_data(&cfg, out)
        }
        Command::Train => {
            cfg.validate().map_err(usage)?;
            cmd_train(&cfg, out)
        }
        Command::Generate(a) => {
            apply_fusion_flags(&mut cfg, &a.fusion);
            if let Some(n) = a.max_new {
                cfg.eval.max_new = n;
            }
            cfg.validate().map_err(usage)?;
            cmd_generate(&cfg, a, out)
        }
        Command::Eval(a) => {
            apply_fusion_flags(&mut cfg, &a.fusion);
            cfg.validate().map_err(usage)?;
            cmd_eval(&cfg, a, out)
        }
        Command::Sweep(a) => {
            apply_fusion_flags(&mut cfg, &a.fusion);
            if let Some(g) = &a.alphas {
                cfg.eval.alpha_grid = g.clone();
            }
            if let Some(g) = &a.betas {
                cfg.eval.beta_grid = g.clone();
            }
            cfg.validate().map_err(usage)?;
            cmd_sweep(&cfg, a, out)
        }
        Command::Bench(a) => {
            apply_fusion_flags(&mut cfg, &a.fusion);
            if let Some(l) = &a.lengths {
                cfg.bench.lengths = l.clone();
            }
            if let Some(r) = a.runs {
                cfg.bench.runs = r;
            }
            cfg.validate().map_err(usage)?;
            cmd_bench(&cfg, a, out)
        }
    }
}

fn with_path<T, E: std::fmt::Display>(r: Result<T, E>, path: &Path) -> anyhow::Result<T> {
    r.map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    with_path(std::fs::create_dir_all(dir), dir)
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = cfg.data_dir();
    create_dir(&dir)?;
    let caps: Vec<Record> = gen_caption_dataset(cfg.data.n_caption, cfg.seed).into_iter().map(Record::Caption).collect();
    let texts: Vec<Record> = gen_text_task_dataset(cfg.data.n_text, cfg.seed).into_iter().map(Record::Text).collect();
    let comps: Vec<Record> =
        gen_composite_eval(cfg.data.n_composite, cfg.seed).into_iter().map(Record::Composite).collect();
    for (name, recs) in [(CAPTION_FILE, &caps), (TEXT_FILE, &texts), (COMPOSITE_FILE, &comps)] {
        let p = dir.join(name);
        write_jsonl(&p, recs)?;
        writeln!(out, "{}\t{}", p.display(), recs.len())?;
    }
    Ok(())
}

fn read_records(path: &Path) -> anyhow::Result<Vec<Record>> {
    Ok(read_jsonl(path)?)
}

fn read_kind<T>(path: &Path, kind: &str, pick: impl Fn(Record) -> Option<T>) -> anyhow::Result<Vec<T>> {
    let recs = read_records(path)?;
    let n = recs.len();
    let picked: Vec<T> = recs.into_iter().filter_map(pick).collect();
    if picked.len() != n {
        anyhow::bail!("{}: expected only {kind} records", path.display());
    }
    if picked.is_empty() {
        anyhow::bail!("{}: no records", path.display());
    }
    Ok(picked)
}

fn read_captions(path: &Path) -> anyhow::Result<Vec<CaptionRecord>> {
    read_kind(path, "caption", |r| if let Record::Caption(c) = r { Some(c) } else { None })
}

fn read_texts(path: &Path) -> anyhow::Result<Vec<TextRecord>> {
    read_kind(path, "text", |r| if let Record::Text(t) = r { Some(t) } else { None })
}

fn read_composites(path: &Path) -> anyhow::Result<Vec<CompositeRecord>> {
    read_kind(path, "composite", |r| if let Record::Composite(c) = r { Some(c) } else { None })
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = cfg.data_dir();
    let caps = read_captions(&dir.join(CAPTION_FILE))?;
    let texts = read_texts(&dir.join(TEXT_FILE))?;
    let data = TrainData::from_records(&caps, &texts)?;
    let mut model = Lvlm::new(cfg.model.clone())?;
    let t = Instant::now();
    let outcome = run_training(&mut model, &cfg.train, &data, None)?;
    let od = cfg.out_dir();
    create_dir(&od)?;
    let ckpt = od.join(CHECKPOINT_FILE);
    save_training_checkpoint(&ckpt, &model, &outcome.state)?;
    outcome.log.write_csv(&od.join(TRAIN_STEPS_FILE))?;
    write_epochs(&outcome.log.epochs, &od.join(TRAIN_EPOCHS_FILE))?;
    writeln!(out, "final_loss\t{:.6}", outcome.log.final_loss().unwrap_or(f64::NAN))?;
    writeln!(out, "steps\t{}", outcome.log.steps.len())?;
    writeln!(out, "checkpoint\t{}", ckpt.display())?;
    log::info!("trained in {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

fn write_epochs(rows: &[crate::train::EpochRow], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["stage", "epoch", "mean_loss", "val_caption", "val_text", "seconds"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    with_path(crate::corpus::write_atomic(path, &bytes), path)
}

fn load_model(cfg: &RunConfig, path: &Option<PathBuf>) -> anyhow::Result<Lvlm<f32>> {
    let p = path.clone().unwrap_or_else(|| cfg.out_dir().join(CHECKPOINT_FILE));
    Ok(with_path(load_checkpoint(&p), &p)?.model)
}

fn fusion_for(cfg: &RunConfig, f: &FusionArgs, model: &Lvlm<f32>) -> Result<Option<FusionConfig>, CliError> {
    if f.no_fusion {
        return Ok(None);
    }
    Ok(Some(cfg.fusion_config(model.config().n_layers).map_err(|e| usage(format!("fusion: {e}")))?))
}

pub fn cmd_generate(cfg: &RunConfig, a: &GenerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model(cfg, &a.checkpoint)?;
    let image = match (&a.grid, &a.image) {
        (Some(g), _) => g.clone(),
        (None, Some(p)) => {
            let recs = read_records(p)?;
            match recs.into_iter().nth(a.index) {
                Some(Record::Caption(c)) => c.image,
                Some(Record::Composite(c)) => c.image,
                Some(Record::Text(_)) => return Err(usage(format!("record {} of {} has no image", a.index, p.display()))),
                None => return Err(usage(format!("{} has no record {}", p.display(), a.index))),
            }
        }
        (None, None) => return Err(usage("one of --grid or --image is required")),
    };
    let q = prompt_ids(&a.question)?;
    let params = GenerateParams::greedy(cfg.eval.max_new);
    let t = Instant::now();
    let (gen, task_ms) = match fusion_for(cfg, &a.fusion, &model)? {
        Some(f) => {
            let tr = fused_generate(&model, &image, &q, &f, &params)?;
            let ms = tr.task_pass_time.as_secs_f64() * 1e3;
            (tr.generation, Some(ms))
        }
        None => {
            let vis = model.visual_tokens(&image)?;
            (model.generate(Some(&vis), &q, &params)?, None)
        }
    };
    let total = t.elapsed().as_secs_f64() * 1e3;
    writeln!(out, "{}", crate::corpus::detokenize(&gen.tokens))?;
    if a.trace {
        writeln!(out, "forward_passes\t{}", gen.forward_passes)?;
        if let Some(ms) = task_ms {
            writeln!(out, "task_pass_ms\t{ms:.3}")?;
        }
        writeln!(out, "prefill_ms\t{:.3}", gen.prefill_time.as_secs_f64() * 1e3)?;
        writeln!(out, "decode_ms\t{:.3}", gen.decode_time.as_secs_f64() * 1e3)?;
        writeln!(out, "total_ms\t{total:.3}")?;
    }
    Ok(())
}

fn composite_path(cfg: &RunConfig, data: &Option<PathBuf>) -> PathBuf {
    data.clone().unwrap_or_else(|| cfg.data_dir().join(COMPOSITE_FILE))
}

fn report_paths(cfg: &RunConfig, out: &Option<PathBuf>, default: &str) -> anyhow::Result<(PathBuf, PathBuf)> {
    let csv = out.clone().unwrap_or_else(|| cfg.out_dir().join(default));
    if let Some(d) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(d)?;
    }
    let svg = csv.with_extension("svg");
    Ok((csv, svg))
}

fn emit_both<R: ReportRow>(rows: &[R], csv: &Path, svg: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    emit_report(rows, csv, ReportFormat::Csv)?;
    emit_report(rows, svg, ReportFormat::Svg)?;
    writeln!(out, "{}\t{}", csv.display(), rows.len())?;
    writeln!(out, "{}", svg.display())?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model(cfg, &a.checkpoint)?;
    let recs = read_composites(&composite_path(cfg, &a.data))?;
    let params = GenerateParams::greedy(cfg.eval.max_new);
    let mut rows = Vec::new();
    let base = eval_composite(&ModelGenerator { model: &model, fusion: None, params: params.clone() }, &recs)?;
    rows.push(EvalRow::new(None, &base));
    if let Some(f) = fusion_for(cfg, &a.fusion, &model)? {
        let r = eval_composite(&ModelGenerator { model: &model, fusion: Some(f), params }, &recs)?;
        rows.push(EvalRow::new(Some(&f), &r));
    }
    for r in &rows {
        writeln!(out, "{}\taccuracy\t{:.4}\t({}/{})", r.mode, r.accuracy, r.correct, r.n)?;
    }
    let (csv, svg) = report_paths(cfg, &a.out, EVAL_FILE)?;
    emit_both(&rows, &csv, &svg, out)
}

pub fn cmd_sweep(cfg: &RunConfig, a: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = GenerateParams::greedy(cfg.eval.max_new);
    if a.scaling {
        let exp = ExperimentConfig {
            n_caption: cfg.data.n_caption,
            n_text: cfg.data.n_text,
            model: cfg.model.clone(),
            train: cfg.train.clone(),
            alpha: cfg.fusion.alpha,
            layers: cfg.fusion.layers.unwrap_or(LayerStrategy::TopDown(cfg.model.n_layers.div_ceil(2))),
            max_new: cfg.eval.max_new,
            ..ExperimentConfig::default()
        };
        let rows = scaling_test(&exp, &a.fractions, &a.seeds)?;
        let (csv, svg) = report_paths(cfg, &a.out, SCALING_FILE)?;
        return emit_both(&rows, &csv, &svg, out);
    }
    let model = load_model(cfg, &a.checkpoint)?;
    let recs = read_composites(&composite_path(cfg, &a.data))?;
    let n = model.config().n_layers;
    let f = cfg.fusion_config(n).map_err(|e| usage(format!("fusion: {e}")))?;
    if a.layers {
        let strategies = layer_strategies(n, &cfg.eval.layer_percents);
        let rows = sweep_layers(&model, &recs, &strategies, f.alpha, f.beta, &params)?;
        let (csv, svg) = report_paths(cfg, &a.out, SWEEP_LAYERS_FILE)?;
        emit_both(&rows, &csv, &svg, out)
    } else {
        let rows = sweep_alpha_beta(
            &model,
            &recs,
            &cfg.eval.alpha_grid,
            &cfg.eval.beta_grid,
            (f.lo, f.hi),
            &cfg.eval.degeneracy,
            &params,
        )?;
        let flagged = rows.iter().filter(|r| r.degenerate).count();
        writeln!(out, "degenerate_points\t{flagged}")?;
        let (csv, svg) = report_paths(cfg, &a.out, SWEEP_ALPHA_BETA_FILE)?;
        emit_both(&rows, &csv, &svg, out)
    }
}

pub fn cmd_bench(cfg: &RunConfig, a: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model(cfg, &a.checkpoint)?;
    let prompts = gen_composite_eval(cfg.bench.n_prompts, cfg.seed);
    let f = cfg.fusion_config(model.config().n_layers).map_err(|e| usage(format!("fusion: {e}")))?;
    let longest = cfg.bench.lengths.iter().max().copied().unwrap_or(0);
    let room = model.config().max_positions;
    let bench = BenchConfig { runs: cfg.bench.runs, warmup: cfg.bench.warmup };
    if longest + model.config().n_visual() + 16 > room {
        return Err(usage(format!("length {longest} does not fit in {room} positions")));
    }
    let rows = bench_overhead(&model, &prompts, &cfg.bench.lengths, &f, &bench)?;
    if let Some(r) = rows.iter().find(|r| r.pass_delta != 1) {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "fused generation used {} passes against {} at length {}",
            r.fused_passes,
            r.std_passes,
            r.length
        )));
    }
    for r in &rows {
        writeln!(out, "{}\tstd_ms\t{:.2}\tfused_ms\t{:.2}\toverhead\t{:+.4}", r.length, r.std_ms, r.fused_ms, r.overhead)?;
    }
    let (csv, svg) = report_paths(cfg, &a.out, BENCH_FILE)?;
    emit_both(&rows, &csv, &svg, out)
}
