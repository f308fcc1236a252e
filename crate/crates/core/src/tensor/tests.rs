use proptest::prelude::*;

use super::ops::{self, RMS_EPS};
use super::*;
use crate::rng::Rng;

fn t2(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_rows(rows).unwrap()
}

fn random(rng: &mut Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect()).unwrap()
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

#[test]
fn matmul_identity() {
    let eye = t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let b = t2(&[vec![3.0, 4.0], vec![5.0, 6.0]]);
    assert_eq!(ops::matmul(&eye, &b).unwrap(), b);
}

#[test]
fn matmul_scalar_case() {
    let out = ops::matmul(&t2(&[vec![2.0]]), &t2(&[vec![3.0]])).unwrap();
    assert_eq!(out.data(), &[6.0]);
}

#[test]
fn matmul_4x3_by_3x2_matches_triple_loop() {
    let mut rng = Rng::new(11);
    let a = random(&mut rng, vec![4, 3]);
    let b = random(&mut rng, vec![3, 2]);
    let got = ops::matmul(&a, &b).unwrap();
    let want = naive_matmul(&a, &b);
    for (g, w) in got.data().iter().zip(&want) {
        assert!((g - w).abs() < 1e-6);
    }
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let a = Tensor::<f32>::zeros(vec![2, 3]);
    let b = Tensor::<f32>::zeros(vec![2, 3]);
    assert!(matches!(ops::matmul(&a, &b), Err(TensorError::ShapeMismatch { .. })));
}

proptest! {
    #[test]
    fn matmul_agrees_with_naive(m in 1usize..=16, k in 1usize..=16, n in 1usize..=16, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = random(&mut rng, vec![m, k]);
        let b = random(&mut rng, vec![k, n]);
        let got = ops::matmul(&a, &b).unwrap();
        let want = naive_matmul(&a, &b);
        for (g, w) in got.data().iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-6);
        }
        // single precision stays within the same bound at this size
        let af = Tensor::<f32>::from_f64(vec![m, k], &a.to_f64_vec()).unwrap();
        let bf = Tensor::<f32>::from_f64(vec![k, n], &b.to_f64_vec()).unwrap();
        let gotf = ops::matmul(&af, &bf).unwrap();
        for (g, w) in gotf.data().iter().zip(&want) {
            prop_assert!((*g as f64 - w).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(row in prop::collection::vec(-1e4f64..1e4, 1..32)) {
        let x = Tensor::new(vec![1, row.len()], row.clone()).unwrap();
        let y = ops::softmax_rows(&x);
        let s: f64 = y.data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(y.data().iter().all(|&p| p >= 0.0));
        let xf = Tensor::<f32>::from_f64(vec![1, row.len()], &row).unwrap();
        let sf: f32 = ops::softmax_rows(&xf).data().iter().sum();
        prop_assert!((sf - 1.0).abs() < 1e-6);
    }
}

#[test]
fn softmax_examples() {
    let y = ops::softmax_rows(&t2(&[vec![0.0, 0.0], vec![1000.0, 1000.0], vec![0.0, 3f64.ln()]]));
    let want = [0.5, 0.5, 0.5, 0.5, 0.25, 0.75];
    for (g, w) in y.data().iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

#[test]
fn rms_norm_examples() {
    let ones = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
    let y = ops::rms_norm(&Tensor::new(vec![1, 4], vec![2.0; 4]).unwrap(), &ones).unwrap();
    let expect = 2.0 / (4.0 + RMS_EPS).sqrt();
    assert!(y.data().iter().all(|&v| (v - expect).abs() < 1e-12 && (v - 1.0).abs() < 1e-5));

    let z = ops::rms_norm(&Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap(), &ones).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));

    let mut rng = Rng::new(5);
    let x = random(&mut rng, vec![3, 16]);
    let gain = Tensor::new(vec![16], vec![1.0; 16]).unwrap();
    let y = ops::rms_norm(&x, &gain).unwrap();
    for r in 0..3 {
        let rms = (y.row(r).iter().map(|v| v * v).sum::<f64>() / 16.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-4, "rms {rms}");
    }
}

#[test]
fn gelu_examples() {
    let x = Tensor::new(vec![3], vec![0.0, 1.0, 20.0]).unwrap();
    let y = ops::gelu(&x);
    assert_eq!(y.data()[0], 0.0);
    let reference = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (1.0 + 0.044715)).tanh());
    assert!((y.data()[1] - reference).abs() < 1e-6);
    assert!((y.data()[2] - 20.0).abs() < 1e-6);
    // monotone on [-0.5, 5]
    let xs: Vec<f64> = (0..200).map(|i| -0.5 + i as f64 * 0.0275).collect();
    let ys = ops::gelu(&Tensor::new(vec![200], xs).unwrap());
    assert!(ys.data().windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn cross_entropy_uniform_logits() {
    let logits = Tensor::<f64>::zeros(vec![5, 32]);
    let loss = ops::cross_entropy(&logits, &[0, 3, 7, 9, 31], &[true; 5]).unwrap();
    assert!((loss - 32f64.ln()).abs() < 1e-4);
    assert!((loss - 3.4657).abs() < 1e-4);
}

#[test]
fn cross_entropy_goes_to_zero_with_margin() {
    let mut prev = f64::INFINITY;
    for margin in [1.0, 5.0, 10.0, 30.0] {
        let mut logits = Tensor::<f64>::zeros(vec![2, 4]);
        logits.data_mut()[1] = margin;
        logits.data_mut()[4 + 2] = margin;
        let loss = ops::cross_entropy(&logits, &[1, 2], &[true, true]).unwrap();
        assert!(loss < prev);
        prev = loss;
    }
    assert!(prev < 1e-12);
}

#[test]
fn cross_entropy_matches_explicit_loop() {
    let mut rng = Rng::new(21);
    let logits = random(&mut rng, vec![3, 8]);
    let targets = [2, 5, 7];
    let mask = [true, false, true];
    let mut want = 0.0;
    for i in [0, 2] {
        let row = logits.row(i);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        want -= (row[targets[i]].exp() / z).ln();
    }
    want /= 2.0;
    let got = ops::cross_entropy(&logits, &targets, &mask).unwrap();
    assert!((got - want).abs() < 1e-6);

    let mut g = Graph::<f64>::new(true);
    let l = g.leaf(logits).unwrap();
    let ce = g.cross_entropy(l, &targets, &mask).unwrap();
    assert!((g.value(ce)[0] - want).abs() < 1e-6);
}

#[test]
fn cross_entropy_rejects_all_masked() {
    let logits = Tensor::<f32>::zeros(vec![2, 4]);
    assert_eq!(ops::cross_entropy(&logits, &[0, 1], &[false, false]), Err(TensorError::AllMasked));
}

#[test]
fn backward_square() {
    let mut store = ParamStore::<f64>::new();
    store.push("x", Tensor::scalar(3.0));
    let mut g = Graph::new(true);
    let x = store.bind(&mut g, 0).unwrap();
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[6.0]);
}

#[test]
fn backward_constant_has_zero_gradient() {
    let mut store = ParamStore::<f64>::new();
    store.push("x", Tensor::scalar(3.0));
    let mut g = Graph::new(true);
    let x = store.bind(&mut g, 0).unwrap();
    let c = g.leaf(Tensor::scalar(2.0)).unwrap();
    let _unused = g.scale(x, 4.0).unwrap();
    let y = g.mul(c, c).unwrap();
    let grads = g.backward(y).unwrap();
    let mut acc = store.zero_grads();
    store.accumulate(&g, &grads, &mut acc);
    assert_eq!(acc[0], vec![0.0]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::<f32>::new(false);
    let x = g.leaf(Tensor::zeros(vec![2, 2])).unwrap();
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarRoot { .. })));
}

#[test]
fn checked_mode_rejects_non_finite() {
    let mut g = Graph::<f32>::new(true);
    let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
    assert_eq!(g.scale(x, f32::INFINITY), Err(TensorError::NonFinite { op: "scale" }));
    assert!(g.leaf(Tensor::new(vec![1], vec![f32::NAN]).unwrap()).is_err());

    let mut unchecked = Graph::<f32>::new(false);
    let x = unchecked.leaf(Tensor::new(vec![1], vec![f32::NAN]).unwrap()).unwrap();
    assert!(unchecked.value(x)[0].is_nan());
}

/// A small network touching every differentiable op.
fn toy_loss<S: Scalar>(store: &ParamStore<S>, g: &mut Graph<S>) -> Var {
    let ids = [1usize, 4, 2, 0, 3];
    let emb = store.bind(g, 0).unwrap();
    let w = store.bind(g, 1).unwrap();
    let bias = store.bind(g, 2).unwrap();
    let gain = store.bind(g, 3).unwrap();
    let head = store.bind(g, 4).unwrap();
    let x = g.embedding(emb, &ids).unwrap();
    let n = g.rms_norm(x, gain).unwrap();
    let q = g.matmul(n, w).unwrap();
    let q = g.add_bias(q, bias).unwrap();
    let a = g.causal_attention(q, n, x, 2, 0).unwrap();
    let pre = g.slice_rows(a, 2, 3).unwrap();
    let tail = g.slice_rows(q, 0, 2).unwrap();
    let cat = g.concat_rows(&[tail, pre]).unwrap();
    let h = g.gelu(cat).unwrap();
    let h = g.add(h, x).unwrap();
    let s = g.softmax_rows(h).unwrap();
    let h = g.mul(h, s).unwrap();
    let h = g.scale(h, S::from_f64(1.5)).unwrap();
    let head_t = g.transpose(head).unwrap();
    let head = g.transpose(head_t).unwrap();
    let logits = g.matmul(h, head).unwrap();
    g.cross_entropy(logits, &[2, 0, 5, 1, 3], &[true, false, true, true, true]).unwrap()
}

fn toy_store(seed: u64) -> ParamStore<f64> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    store.push("emb", random(&mut rng, vec![6, 4]));
    store.push("w", random(&mut rng, vec![4, 4]));
    store.push("bias", random(&mut rng, vec![4]));
    store.push("gain", random(&mut rng, vec![4]));
    store.push("head", random(&mut rng, vec![4, 6]));
    store
}

fn analytic<S: Scalar>(store: &ParamStore<S>) -> Vec<Vec<S>> {
    let mut g = Graph::new(true);
    let loss = toy_loss(store, &mut g);
    let grads = g.backward(loss).unwrap();
    let mut acc = store.zero_grads();
    store.accumulate(&g, &grads, &mut acc);
    acc
}

fn eval(store: &ParamStore<f64>) -> f64 {
    let mut g = Graph::new(true);
    let loss = toy_loss(store, &mut g);
    g.value(loss)[0]
}

#[test]
fn every_op_matches_central_differences() {
    let mut store = toy_store(9);
    let grads = analytic(&store);
    let report = grad_check(&mut store, &grads, 1e-6, 64, 0, eval);
    assert!(report.max_rel_error < 1e-5, "{report:?}");
    assert_eq!(report.coords_checked, 24 + 16 + 4 + 4 + 24);
}

#[test]
fn grad_check_of_linear_function_is_exact() {
    let mut store = ParamStore::<f64>::new();
    store.push("x", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
    let coef = [3.0, -2.0, 0.25];
    let f = |s: &ParamStore<f64>| s.get(0).value.iter().zip(coef).map(|(x, c)| x * c).sum::<f64>();
    let grads = vec![coef.to_vec()];
    let report = grad_check(&mut store, &grads, 1e-3, 8, 0, f);
    assert!(report.max_rel_error < 1e-12, "{report:?}");
}

#[test]
fn grad_check_detects_corrupted_gradient() {
    let mut store = toy_store(9);
    let mut grads = analytic(&store);
    for g in grads[1].iter_mut() {
        *g *= 1.1;
    }
    let report = grad_check(&mut store, &grads, 1e-6, 64, 0, eval);
    assert!(report.max_rel_error > 1e-2);
    assert!(report.per_param[1].1 > 1e-2);
    assert!(report.per_param[0].1 < 1e-5);
}

#[test]
fn single_precision_gradients_within_1e3() {
    let mut store = toy_store(4);
    let grads32 = analytic::<f32>(&store.cast());
    let grads: Vec<Vec<f64>> = grads32.iter().map(|g| g.iter().map(|&x| x as f64).collect()).collect();
    let report = grad_check(&mut store, &grads, 1e-6, 64, 0, eval);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}
