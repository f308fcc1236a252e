//! Tape-recorded computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is topologically sorted
//! by construction and `backward` walks it once in reverse.

use std::sync::Arc;

use super::ops::{self, check_targets};
use super::{Scalar, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, S),
    Gelu(Var),
    RmsNorm { x: Var, gain: Var, inv: Vec<S> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Softmax(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, offset: usize, probs: Vec<S> },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, count: usize },
    Sum(Var),
    Transpose(Var),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::RmsNorm { .. } => "rms_norm",
            Op::Embedding { .. } => "embedding",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Softmax(_) => "softmax_rows",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
            Op::Transpose(_) => "transpose",
        }
    }
}

struct Node<S> {
    value: Arc<Vec<S>>,
    shape: Vec<usize>,
    op: Op<S>,
    requires_grad: bool,
}

/// Recorded forward computation.
///
/// In checked mode every operation verifies that its output is finite and
/// fails with [`TensorError::NonFinite`] otherwise.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    checked: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new(false)
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new(checked: bool) -> Self {
        Self { nodes: Vec::new(), checked }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.as_ref().clone()).expect("node shape is consistent")
    }

    /// Parameter id of `v`, if it is a parameter leaf.
    pub fn param_id(&self, v: Var) -> Option<usize> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Every parameter leaf as `(param id, node)`.
    pub fn param_leaves(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((id, Var(i))),
            _ => None,
        })
    }

    fn push(&mut self, value: Vec<S>, shape: Vec<usize>, op: Op<S>) -> Result<Var, TensorError> {
        if self.checked && !value.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => self.inputs(&op).iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node { value: Arc::new(value), shape, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<S>) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Gelu(x) | Op::Softmax(x) | Op::Sum(x) | Op::Transpose(x) => vec![*x],
            Op::RmsNorm { x, gain, .. } => vec![*x, *gain],
            Op::Embedding { table, .. } => vec![*table],
            Op::ConcatRows(parts) => parts.clone(),
            Op::SliceRows { x, .. } => vec![*x],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// Constant input; receives no gradient.
    pub fn leaf(&mut self, t: Tensor<S>) -> Result<Var, TensorError> {
        let shape = t.shape().to_vec();
        self.push(t.into_data(), shape, Op::Leaf)
    }

    /// Constant input sharing an existing buffer.
    pub fn leaf_shared(&mut self, data: Arc<Vec<S>>, shape: Vec<usize>) -> Result<Var, TensorError> {
        self.shared(data, shape, Op::Leaf)
    }

    /// Trainable leaf identified by `id`; shares the parameter buffer.
    pub fn param(&mut self, id: usize, data: Arc<Vec<S>>, shape: Vec<usize>) -> Result<Var, TensorError> {
        self.shared(data, shape, Op::Param(id))
    }

    fn shared(&mut self, data: Arc<Vec<S>>, shape: Vec<usize>, op: Op<S>) -> Result<Var, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape { shape, len: data.len() });
        }
        if self.checked && !data.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = matches!(op, Op::Param(_));
        self.nodes.push(Node { value: data, shape, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match *self.shape(v) {
            [m, n] => Ok((m, n)),
            ref s => Err(TensorError::ShapeMismatch { op, expected: vec![0, 0], got: s.to_vec() }),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: self.shape(a).to_vec(),
                got: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                expected: vec![k, n],
                got: vec![k2, n],
            });
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, S::one(), self.value(a), false, self.value(b), false, S::zero(), &mut out);
        self.push(out, vec![m, n], Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Mul(a, b))
    }

    /// `x [r×c] + bias [c]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (_, c) = self.dims2("add_bias", x)?;
        if self.value(bias).len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                expected: vec![c],
                got: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var, TensorError> {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Scale(x, c))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).iter().map(|&v| ops::gelu_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Gelu(x))
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var, TensorError> {
        let d = self.value(gain).len();
        if d == 0 || self.shape(x).last() != Some(&d) {
            return Err(TensorError::ShapeMismatch {
                op: "rms_norm",
                expected: vec![d],
                got: self.shape(x).to_vec(),
            });
        }
        let mut out = vec![S::zero(); self.value(x).len()];
        let inv = ops::rms_norm_rows(self.value(x), self.value(gain), &mut out);
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::RmsNorm { x, gain, inv })
    }

    /// Gathers rows of `table [V×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (v, d) = self.dims2("embedding", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange { op: "embedding", index: bad, bound: v });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        self.push(out, vec![ids.len(), d], Op::Embedding { table, ids: ids.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::ShapeMismatch {
            op: "concat_rows",
            expected: vec![1],
            got: vec![0],
        })?;
        let (_, d) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != d {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    expected: vec![r, d],
                    got: vec![r, c],
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        self.push(out, vec![rows, d], Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, d) = self.dims2("slice_rows", x)?;
        if start + len > r {
            return Err(TensorError::IndexOutOfRange { op: "slice_rows", index: start + len, bound: r });
        }
        let out = self.value(x)[start * d..(start + len) * d].to_vec();
        self.push(out, vec![len, d], Op::SliceRows { x, start })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (_, c) = self.dims2("softmax_rows", x)?;
        let mut out = self.value(x).to_vec();
        if c > 0 {
            out.chunks_mut(c).for_each(ops::softmax_in_place);
        }
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Softmax(x))
    }

    /// Multi-head causal scaled dot-product attention.
    ///
    /// `q` is `[T×d]` for absolute positions `offset..offset+T`; `k` and `v`
    /// are `[(offset+T)×d]` and cover every position up to the last query.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        offset: usize,
    ) -> Result<Var, TensorError> {
        let (t, d) = self.dims2("attention", q)?;
        let (tk, dk) = self.dims2("attention", k)?;
        if heads == 0 || d % heads != 0 || dk != d || tk != offset + t || self.shape(v) != self.shape(k) {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                expected: vec![offset + t, d],
                got: vec![tk, dk],
            });
        }
        let dh = d / heads;
        let scale = S::one() / S::from_f64(dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![S::zero(); heads * t * tk];
        let mut out = vec![S::zero(); t * d];
        for h in 0..heads {
            let hc = h * dh;
            for i in 0..t {
                let len = offset + i + 1;
                let qi = &qv[i * d + hc..i * d + hc + dh];
                let p = &mut probs[(h * t + i) * tk..(h * t + i) * tk + len];
                for (j, pj) in p.iter_mut().enumerate() {
                    let kj = &kv[j * d + hc..j * d + hc + dh];
                    *pj = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<S>() * scale;
                }
                ops::softmax_in_place(p);
                let oi = &mut out[i * d + hc..i * d + hc + dh];
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &vv[j * d + hc..j * d + hc + dh];
                    for (o, &x) in oi.iter_mut().zip(vj) {
                        *o = *o + pj * x;
                    }
                }
            }
        }
        self.push(out, vec![t, d], Op::Attention { q, k, v, heads, offset, probs })
    }

    /// Mean negative log-likelihood over unmasked positions; scalar output.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var, TensorError> {
        let (t, vocab) = self.dims2("cross_entropy", logits)?;
        check_targets(t, vocab, targets, mask)?;
        let lv = self.value(logits);
        let mut total = S::zero();
        let mut count = 0;
        for (i, (&tg, &m)) in targets.iter().zip(mask).enumerate() {
            if m {
                let row = &lv[i * vocab..(i + 1) * vocab];
                total = total + ops::log_sum_exp(row) - row[tg];
                count += 1;
            }
        }
        let loss = total / S::from_f64(count as f64);
        self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), count },
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2("transpose", x)?;
        let xv = self.value(x);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        self.push(out, vec![c, r], Op::Transpose(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![s], vec![1], Op::Sum(x))
    }

    /// Reverse-mode accumulation from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>, TensorError> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(TensorError::NonScalarRoot { shape: self.shape(root).to_vec() });
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![S::one()]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let zero_like = |v: Var| vec![S::zero(); self.nodes[v.0].value.len()];
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                grads[v.0].get_or_insert_with(|| zero_like(v))
            }};
        }
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let ga = acc!(*a);
                    S::gemm(m, n, k, S::one(), g, false, self.value(*b), true, S::one(), ga);
                }
                if self.wants(*b) {
                    let gb = acc!(*b);
                    S::gemm(k, m, n, S::one(), self.value(*a), true, g, false, S::one(), gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        acc!(v).iter_mut().zip(g).for_each(|(o, &x)| *o = *o + x);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    acc!(*a).iter_mut().zip(g).zip(bv).for_each(|((o, &x), &y)| *o = *o + x * y);
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    acc!(*b).iter_mut().zip(g).zip(av).for_each(|((o, &x), &y)| *o = *o + x * y);
                }
            }
            Op::AddBias(x, bias) => {
                if self.wants(*x) {
                    acc!(*x).iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v);
                }
                if self.wants(*bias) {
                    let gb = acc!(*bias);
                    let c = gb.len();
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    acc!(*x).iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v * *c);
                }
            }
            Op::Gelu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x);
                    acc!(*x)
                        .iter_mut()
                        .zip(g)
                        .zip(xv)
                        .for_each(|((o, &gv), &xi)| *o = *o + gv * ops::gelu_grad_scalar(xi));
                }
            }
            Op::RmsNorm { x, gain, inv } => {
                let d = self.value(*gain).len();
                let (xv, gv) = (self.value(*x), self.value(*gain));
                if self.wants(*gain) {
                    let gg = acc!(*gain);
                    for ((xr, gr), &iv) in xv.chunks(d).zip(g.chunks(d)).zip(inv) {
                        for ((o, &xi), &gi) in gg.iter_mut().zip(xr).zip(gr) {
                            *o = *o + gi * xi * iv;
                        }
                    }
                }
                if self.wants(*x) {
                    let dn = S::from_f64(d as f64);
                    let gx = acc!(*x);
                    for (((xr, gr), ox), &iv) in xv.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)).zip(inv) {
                        // u = g * gain; dx = inv*u - inv^3 * x * <u, x> / d
                        let dot: S = xr.iter().zip(gr).zip(gv).map(|((&xi, &gi), &wi)| gi * wi * xi).sum();
                        let coef = iv * iv * iv * dot / dn;
                        for (((o, &xi), &gi), &wi) in ox.iter_mut().zip(xr).zip(gr).zip(gv) {
                            *o = *o + iv * gi * wi - coef * xi;
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if self.wants(*table) {
                    let d = self.shape(*table)[1];
                    let gt = acc!(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * d..(id + 1) * d];
                        dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(o, &v)| *o = *o + v);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        acc!(p).iter_mut().zip(&g[off..off + n]).for_each(|(o, &v)| *o = *o + v);
                    }
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                if self.wants(*x) {
                    let d = self.shape(*x)[1];
                    let gx = acc!(*x);
                    gx[start * d..start * d + g.len()].iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v);
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let c = self.shape(*x)[1];
                    let y = &node.value;
                    let gx = acc!(*x);
                    for ((yr, gr), or) in y.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yi), &gi) in or.iter_mut().zip(yr).zip(gr) {
                            *o = *o + yi * (gi - dot);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, offset, probs } => {
                self.attention_backward(*q, *k, *v, *heads, *offset, probs, g, grads);
            }
            Op::CrossEntropy { logits, targets, mask, count } => {
                if self.wants(*logits) {
                    let vocab = self.shape(*logits)[1];
                    let lv = self.value(*logits);
                    let scale = g[0] / S::from_f64(*count as f64);
                    let gl = acc!(*logits);
                    for (i, (&tg, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let mut p = lv[i * vocab..(i + 1) * vocab].to_vec();
                        ops::softmax_in_place(&mut p);
                        p[tg] = p[tg] - S::one();
                        gl[i * vocab..(i + 1) * vocab]
                            .iter_mut()
                            .zip(&p)
                            .for_each(|(o, &pv)| *o = *o + pv * scale);
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    acc!(*x).iter_mut().for_each(|o| *o = *o + g[0]);
                }
            }
            Op::Transpose(x) => {
                if self.wants(*x) {
                    let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let gx = acc!(*x);
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = gx[i * c + j] + g[j * r + i];
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        offset: usize,
        probs: &[S],
        g: &[S],
        grads: &mut [Option<Vec<S>>],
    ) {
        let (t, d) = (self.shape(q)[0], self.shape(q)[1]);
        let tk = offset + t;
        let dh = d / heads;
        let scale = S::one() / S::from_f64(dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut gq = vec![S::zero(); t * d];
        let mut gk = vec![S::zero(); tk * d];
        let mut gv = vec![S::zero(); tk * d];
        let mut ds = vec![S::zero(); tk];
        for h in 0..heads {
            let hc = h * dh;
            for i in 0..t {
                let len = offset + i + 1;
                let p = &probs[(h * t + i) * tk..(h * t + i) * tk + len];
                let gi = &g[i * d + hc..i * d + hc + dh];
                let mut dot = S::zero();
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &vv[j * d + hc..j * d + hc + dh];
                    let dp: S = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    ds[j] = dp;
                    dot = dot + pj * dp;
                    let gvj = &mut gv[j * d + hc..j * d + hc + dh];
                    gvj.iter_mut().zip(gi).for_each(|(o, &x)| *o = *o + pj * x);
                }
                let qi = &qv[i * d + hc..i * d + hc + dh];
                for (j, &pj) in p.iter().enumerate() {
                    let s = pj * (ds[j] - dot) * scale;
                    let kj = &kv[j * d + hc..j * d + hc + dh];
                    let gqi = &mut gq[i * d + hc..i * d + hc + dh];
                    gqi.iter_mut().zip(kj).for_each(|(o, &x)| *o = *o + s * x);
                    let gkj = &mut gk[j * d + hc..j * d + hc + dh];
                    gkj.iter_mut().zip(qi).for_each(|(o, &x)| *o = *o + s * x);
                }
            }
        }
        for (var, local) in [(q, gq), (k, gk), (v, gv)] {
            if !self.wants(var) {
                continue;
            }
            match &mut grads[var.0] {
                Some(existing) => existing.iter_mut().zip(&local).for_each(|(o, &x)| *o = *o + x),
                slot @ None => *slot = Some(local),
            }
        }
    }
}
