//! Slice-level kernels shared by the eager `Tensor` API and the recorded graph.

use super::{Scalar, Tensor, TensorError};

pub const RMS_EPS: f64 = 1e-5;

// tanh-approximate GELU constants: sqrt(2/pi) and the cubic coefficient
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu_scalar<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad_scalar<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + three * a * x * x)
}

/// In-place max-subtracted softmax over one row.
pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = S::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// log-sum-exp of a row, max-subtracted.
pub fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let sum: S = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Writes `x * inv_rms * gain` into `out` for each `d`-row and returns the
/// per-row inverse rms values.
pub fn rms_norm_rows<S: Scalar>(x: &[S], gain: &[S], out: &mut [S]) -> Vec<S> {
    let d = gain.len();
    let eps = S::from_f64(RMS_EPS);
    let dn = S::from_f64(d as f64);
    x.chunks(d)
        .zip(out.chunks_mut(d))
        .map(|(xr, yr)| {
            let ms = xr.iter().map(|&v| v * v).sum::<S>() / dn;
            let inv = S::one() / (ms + eps).sqrt();
            for ((y, &xv), &g) in yr.iter_mut().zip(xr).zip(gain) {
                *y = xv * inv * g;
            }
            inv
        })
        .collect()
}

pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            expected: vec![k, n],
            got: b.shape().to_vec(),
        });
    }
    let mut out = vec![S::zero(); m * n];
    S::gemm(m, k, n, S::one(), a.data(), false, b.data(), false, S::zero(), &mut out);
    Tensor::new(vec![m, n], out)
}

pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    let c = out.cols();
    if c > 0 {
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
    }
    out
}

pub fn rms_norm<S: Scalar>(x: &Tensor<S>, gain: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let d = gain.numel();
    if d == 0 || x.cols() != d {
        return Err(TensorError::ShapeMismatch {
            op: "rms_norm",
            expected: vec![d],
            got: x.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(x.shape().to_vec());
    rms_norm_rows(x.data(), gain.data(), out.data_mut());
    Ok(out)
}

pub fn gelu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = gelu_scalar(*v);
    }
    out
}

/// Mean negative log-likelihood of `targets` over the positions where `mask` is set.
pub fn cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[usize],
    mask: &[bool],
) -> Result<S, TensorError> {
    let (t, v) = dims2("cross_entropy", logits)?;
    check_targets(t, v, targets, mask)?;
    let mut total = S::zero();
    let mut count = 0usize;
    for (i, (&tg, &m)) in targets.iter().zip(mask).enumerate() {
        if m {
            let row = logits.row(i);
            total = total + log_sum_exp(row) - row[tg];
            count += 1;
        }
    }
    Ok(total / S::from_f64(count as f64))
}

pub(crate) fn check_targets(
    t: usize,
    v: usize,
    targets: &[usize],
    mask: &[bool],
) -> Result<(), TensorError> {
    if targets.len() != t || mask.len() != t {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            expected: vec![t],
            got: vec![targets.len(), mask.len()],
        });
    }
    if let Some(&bad) = targets.iter().zip(mask).find(|(&tg, &m)| m && tg >= v).map(|(t, _)| t) {
        return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: bad, bound: v });
    }
    if !mask.iter().any(|&m| m) {
        return Err(TensorError::AllMasked);
    }
    Ok(())
}

pub(crate) fn dims2<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize), TensorError> {
    match *t.shape() {
        [m, n] => Ok((m, n)),
        _ => Err(TensorError::ShapeMismatch { op, expected: vec![0, 0], got: t.shape().to_vec() }),
    }
}
