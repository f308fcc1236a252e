use super::*;
use crate::corpus::{gen_composite_eval, tokenize, CompositeRecord, ToyImage};
use crate::lvlm::{GenerateParams, Lvlm, ModelConfig};
use crate::steering::FusionConfig;

struct Oracle<'a>(&'a [CompositeRecord]);

impl Generator for Oracle<'_> {
    fn generate(&self, image: &ToyImage, question: &str) -> Result<GenOutput, EvalError> {
        let r = self.0.iter().find(|r| &r.image == image && r.question == question).unwrap();
        Ok(GenOutput { tokens: tokenize(&format!("red circle {}", r.answer)).unwrap(), ..Default::default() })
    }
}

struct Wrong;

impl Generator for Wrong {
    fn generate(&self, _: &ToyImage, _: &str) -> Result<GenOutput, EvalError> {
        Ok(GenOutput { tokens: tokenize("red circle").unwrap(), ..Default::default() })
    }
}

fn tiny_model() -> Lvlm<f32> {
    Lvlm::new(ModelConfig { d_model: 16, n_layers: 4, n_heads: 2, d_vision: 8, ..Default::default() }).unwrap()
}

#[test]
fn oracle_scores_one_and_wrong_scores_zero() {
    let recs = gen_composite_eval(40, 3);
    let r = eval_composite(&Oracle(&recs), &recs).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.correct, r.n);
    let r = eval_composite(&Wrong, &recs).unwrap();
    assert_eq!(r.accuracy, 0.0);
    assert!(matches!(eval_composite(&Wrong, &[]), Err(EvalError::NoRecords)));
}

#[test]
fn answer_extraction() {
    assert_eq!(extract_answer(&tokenize("red 3 blue").unwrap()), "3");
    assert_eq!(extract_answer(&tokenize("no yes").unwrap()), "no");
    assert_eq!(extract_answer(&tokenize("red circle").unwrap()), "red circle");
    assert_eq!(max_repeat_run(&[1, 1, 2, 2, 2, 1]), 3);
    assert_eq!(max_repeat_run(&[]), 0);
}

#[test]
fn identity_grid_point_matches_unfused() {
    let m = tiny_model();
    let recs = gen_composite_eval(12, 5);
    let params = GenerateParams::greedy(6);
    let rows = sweep_alpha_beta(&m, &recs, &[1.0], &[0.0], (1, 3), &DegeneracyThresholds::default(), &params).unwrap();
    let base = eval_composite(&ModelGenerator { model: &m, fusion: None, params: params.clone() }, &recs).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].accuracy, base.accuracy);
    assert_eq!(rows[0].mean_repeat_run, base.mean_repeat_run);
}

#[test]
fn sweep_covers_grid() {
    let m = tiny_model();
    let recs = gen_composite_eval(3, 5);
    let params = GenerateParams::greedy(3);
    let rows =
        sweep_alpha_beta(&m, &recs, &[0.9, 1.0], &[0.0, 0.1, 0.5], (2, 3), &DegeneracyThresholds::default(), &params)
            .unwrap();
    assert_eq!(rows.len(), 6);
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.alpha, r.beta)).collect();
    assert_eq!(pts, vec![(0.9, 0.0), (0.9, 0.1), (0.9, 0.5), (1.0, 0.0), (1.0, 0.1), (1.0, 0.5)]);
    assert!(sweep_alpha_beta(&m, &recs, &[], &[0.0], (2, 3), &DegeneracyThresholds::default(), &params).is_err());
}

#[test]
fn layer_sweep_shape() {
    let m = tiny_model();
    let recs = gen_composite_eval(4, 9);
    let strategies = layer_strategies(4, &[25, 50, 75, 100]);
    assert_eq!(strategies.len(), 8);
    let rows = sweep_layers(&m, &recs, &strategies, 1.0, 0.2, &GenerateParams::greedy(3)).unwrap();
    assert_eq!(rows.len(), 8);
    let full: Vec<&LayerRow> = rows.iter().filter(|r| r.percent == 100).collect();
    assert_eq!((full[0].lo, full[0].hi), (full[1].lo, full[1].hi));
    assert_eq!(full[0].accuracy, full[1].accuracy);
    let defaults: Vec<&LayerRow> = rows.iter().filter(|r| r.is_default).collect();
    assert_eq!(defaults.len(), 1);
    assert_eq!((defaults[0].direction, defaults[0].percent, defaults[0].lo, defaults[0].hi), (Direction::TopDown, 50, 2, 3));
    let bottom_half = rows.iter().find(|r| r.direction == Direction::BottomUp && r.percent == 50).unwrap();
    assert_eq!((bottom_half.lo, bottom_half.hi), (0, 1));
}

#[test]
fn overhead_pass_delta_is_one() {
    let m = tiny_model();
    let recs = gen_composite_eval(2, 1);
    let f = FusionConfig::with_defaults(4, 0.1);
    let rows = bench_overhead(&m, &recs, &[3, 7], &f, &BenchConfig { runs: 2, warmup: 1 }).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.std_passes, r.length + 1);
        assert_eq!(r.pass_delta, 1);
        assert!(r.std_ms > 0.0 && r.fused_ms > 0.0);
    }
    assert!(bench_overhead(&m, &recs, &[0], &f, &BenchConfig::default()).is_err());
}

#[test]
fn empty_rows_give_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.csv");
    emit_report::<LayerRow>(&[], &p, ReportFormat::Csv).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "direction,percent,lo,hi,accuracy,is_default,seconds\n");
    assert!(read_report::<LayerRow>(&p).unwrap().is_empty());
}

fn sample_rows() -> Vec<AlphaBetaRow> {
    let mut rows = Vec::new();
    for (i, &a) in [0.8, 1.0].iter().enumerate() {
        for (j, &b) in [0.0, 0.25, 0.5].iter().enumerate() {
            rows.push(AlphaBetaRow {
                alpha: a,
                beta: b,
                accuracy: 0.1 * (i + j) as f64,
                mean_entropy: 0.3,
                mean_repeat_run: 1.5,
                max_repeat_run: 2,
                degenerate: j == 2,
                seconds: 0.123456789,
            });
        }
    }
    rows
}

#[test]
fn csv_round_trip_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ab.csv");
    let rows = sample_rows();
    emit_report(&rows, &p, ReportFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), AlphaBetaRow::HEADER.join(","));
    assert_eq!(read_report::<AlphaBetaRow>(&p).unwrap(), rows);

    let p = dir.path().join("eval.csv");
    let r = EvalResult {
        n: 4,
        correct: 1,
        accuracy: 0.25,
        verdicts: vec![],
        mean_entropy: 0.0,
        mean_repeat_run: 1.0,
        max_repeat_run: 1,
    };
    let f = FusionConfig::with_defaults(8, 0.1);
    let rows = vec![EvalRow::new(None, &r), EvalRow::new(Some(&f), &r)];
    emit_report(&rows, &p, ReportFormat::Csv).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().next().unwrap(), EvalRow::HEADER.join(","));
    assert_eq!(read_report::<EvalRow>(&p).unwrap(), rows);
}

fn well_formed(s: &str) -> bool {
    // Tag balance over a flat subset of XML: no comments, CDATA or `>` in attributes.
    let mut stack: Vec<String> = Vec::new();
    let mut rest = s;
    while let Some(i) = rest.find('<') {
        let Some(j) = rest[i..].find('>') else { return false };
        let tag = &rest[i + 1..i + j];
        rest = &rest[i + j + 1..];
        if tag.starts_with('?') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            if stack.pop().as_deref() != Some(name.trim()) {
                return false;
            }
        } else if !tag.ends_with('/') {
            stack.push(tag.split_whitespace().next().unwrap_or("").to_string());
        }
    }
    stack.is_empty() && !rest.contains('>')
}

#[test]
fn svg_is_well_formed_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    let rows = sample_rows();
    assert_eq!(ReportFormat::from_path(&a), ReportFormat::Svg);
    emit_report(&rows, &a, ReportFormat::Svg).unwrap();
    emit_report(&rows, &b, ReportFormat::Svg).unwrap();
    let s = std::fs::read_to_string(&a).unwrap();
    assert_eq!(s.as_bytes(), std::fs::read(&b).unwrap().as_slice());
    assert!(well_formed(&s));
    assert!(s.contains(">beta</text>") && s.contains(">accuracy</text>"));
    assert_eq!(s.matches("<polyline").count(), 2);
    let mut chart = Chart::new("a < b & c", "x", "y");
    chart.push("s", 0.0, 0.0);
    assert!(well_formed(&render_svg(&chart)));
    assert!(well_formed(&render_svg(&Chart::new("empty", "x", "y"))));
    assert!(!well_formed("<svg><g></svg>"));
}

#[test]
fn unwritable_path_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("missing").join("x.csv");
    assert!(matches!(emit_report(&sample_rows(), &p, ReportFormat::Csv), Err(EvalError::Io(_))));
}

#[test]
fn experiment_splits_and_fractions() {
    let cfg = ExperimentConfig { n_caption: 50, n_text: 40, n_dev: 10, n_test: 30, ..Default::default() };
    let (dev, test) = cfg.composite_splits(2);
    assert_eq!((dev.len(), test.len()), (10, 30));
    let full = cfg.train_data(2, 1.0).unwrap();
    let tenth = cfg.train_data(2, 0.1).unwrap();
    assert_eq!((full.caption.len(), full.text.len()), (50, 40));
    assert_eq!((tenth.caption.len(), tenth.text.len()), (5, 4));
    assert_eq!(tenth.caption[..], full.caption[..5]);
    assert!(cfg.train_data(2, 0.0).is_err());
    assert!(scaling_test(&cfg, &[1.5], &[0]).is_err());
}
