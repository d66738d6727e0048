//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every activation is a row-major matrix; sequence batches are stored as
//! `[batch * len, width]`. Operations record themselves on a [`Tape`] and
//! [`Tape::backward`] walks the tape once in reverse. Attention, layer norm
//! and softmax cross-entropy are fused ops with hand-written adjoints.

use ndarray::{Array2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Layout of a multi-head attention call.
#[derive(Debug, Clone)]
pub struct AttentionSpec {
    pub batch: usize,
    pub heads: usize,
    pub causal: bool,
    /// `batch * key_len` flags; `false` keys receive no attention.
    pub key_mask: Option<Vec<bool>>,
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    AddConst(Var),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, spec: AttentionSpec, probs: Vec<f64> },
    MaskRows { x: Var, keep: Vec<bool> },
    PowerNormalize { x: Var, sum_sq: f64 },
    ComplexScale { x: Var, c: Complex64 },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Matrix, count: usize },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// `x W + b` with `b` a `[1, out]` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let value = kernels::linear(self.value(x), self.value(w), self.value(b));
        let rg = self.needs(&[x, w, b]);
        self.push(value, Op::Linear { x, w, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a constant (e.g. positional encodings or channel noise).
    pub fn add_const(&mut self, x: Var, c: &Matrix) -> Var {
        let value = self.value(x) + c;
        let rg = self.needs(&[x]);
        self.push(value, Op::AddConst(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (value, xhat, inv_std) = kernels::layer_norm(self.value(x), self.value(gamma), self.value(beta));
        let rg = self.needs(&[x, gamma, beta]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Row lookup `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let value = kernels::gather(self.value(table), ids);
        let rg = self.needs(&[table]);
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Scaled dot-product attention with heads split along columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Var {
        let (value, probs) = kernels::attention(self.value(q), self.value(k), self.value(v), &spec);
        let rg = self.needs(&[q, k, v]);
        self.push(value, Op::Attention { q, k, v, spec, probs }, rg)
    }

    /// Zeros the rows whose flag is `false`.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Var {
        let mut value = self.value(x).clone();
        for (mut row, &k) in value.rows_mut().into_iter().zip(keep) {
            if !k {
                row.fill(0.0);
            }
        }
        let rg = self.needs(&[x]);
        self.push(
            value,
            Op::MaskRows {
                x,
                keep: keep.to_vec(),
            },
            rg,
        )
    }

    /// Scales so that the mean power of the complex pairs is one.
    pub fn power_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let sum_sq: f64 = xv.iter().map(|v| v * v).sum();
        let symbols = xv.len() as f64 / 2.0;
        let value = xv * (symbols / sum_sq).sqrt();
        let rg = self.needs(&[x]);
        self.push(value, Op::PowerNormalize { x, sum_sq }, rg)
    }

    /// Multiplies every consecutive `(re, im)` column pair by `c`.
    pub fn complex_scale(&mut self, x: Var, c: Complex64) -> Var {
        let value = kernels::complex_scale(self.value(x), c);
        let rg = self.needs(&[x]);
        self.push(value, Op::ComplexScale { x, c }, rg)
    }

    /// Mean softmax cross-entropy over rows with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} logit rows for {} targets",
                lv.nrows(),
                targets.len()
            )));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::Empty("cross-entropy over a batch with no targets".into()));
        }
        let probs = kernels::softmax_rows(lv);
        let mut loss = 0.0;
        for (row, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= probs.ncols() {
                    return Err(Error::Shape(format!("target id {t} outside {} classes", probs.ncols())));
                }
                loss -= kernels::log_softmax_at(lv, row, t);
            }
        }
        let value = Array2::from_elem((1, 1), loss / count as f64);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// `sum_i w_i s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.needs(&vars);
        self.push(Array2::from_elem((1, 1), total), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Adjoints of the scalar `loss` with respect to every upstream node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.nodes[loss.0].value.dim()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    if rg(*x) {
                        accumulate(&mut grads[x.0], g.dot(&self.value(*w).t()));
                    }
                    if rg(*w) {
                        accumulate(&mut grads[w.0], self.value(*x).t().dot(&g));
                    }
                    if rg(*b) {
                        accumulate(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::Add(a, b) => {
                    if rg(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if rg(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::AddConst(x) => accumulate(&mut grads[x.0], g),
                Op::Relu(x) => {
                    let mut gx = g;
                    gx.zip_mut_with(self.value(*x), |gi, &xi| {
                        if xi <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if rg(*beta) {
                        accumulate(&mut grads[beta.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if rg(*gamma) {
                        accumulate(&mut grads[gamma.0], (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if rg(*x) {
                        let gx = kernels::layer_norm_backward(&g, self.value(*gamma), xhat, inv_std);
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let mut gt = Array2::zeros(tv.dim());
                    for (row, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(row);
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::Attention { q, k, v, spec, probs } => {
                    let (gq, gk, gv) = kernels::attention_backward(
                        &g,
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        spec,
                        probs,
                    );
                    if rg(*q) {
                        accumulate(&mut grads[q.0], gq);
                    }
                    if rg(*k) {
                        accumulate(&mut grads[k.0], gk);
                    }
                    if rg(*v) {
                        accumulate(&mut grads[v.0], gv);
                    }
                }
                Op::MaskRows { x, keep } => {
                    let mut gx = g;
                    for (mut row, &k) in gx.rows_mut().into_iter().zip(keep) {
                        if !k {
                            row.fill(0.0);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::PowerNormalize { x, sum_sq } => {
                    // y = a x S^-1/2, a = sqrt(#symbols), S = sum x^2
                    let xv = self.value(*x);
                    let a = (xv.len() as f64 / 2.0).sqrt();
                    let dot: f64 = g.iter().zip(xv.iter()).map(|(gi, xi)| gi * xi).sum();
                    let s_half = sum_sq.sqrt();
                    let gx = &g * (a / s_half) - &(xv * (a * dot / (sum_sq * s_half)));
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ComplexScale { x, c } => {
                    accumulate(&mut grads[x.0], kernels::complex_scale(&g, c.conj()));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let scale = g[[0, 0]] / *count as f64;
                    let mut gl = Array2::zeros(probs.dim());
                    for (row, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let mut dst = gl.row_mut(row);
                            dst.assign(&probs.row(row));
                            dst[t] -= 1.0;
                            dst *= scale;
                        }
                    }
                    accumulate(&mut grads[logits.0], gl);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        if rg(v) {
                            accumulate(&mut grads[v.0], &g * w);
                        }
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Forward and adjoint kernels shared by the tape and the cached decoder.
pub(crate) mod kernels {
    use super::{AttentionSpec, Matrix, LAYER_NORM_EPS};
    use ndarray::Array2;
    use num_complex::Complex64;

    pub fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
        let mut out = x.dot(w);
        out += b;
        out
    }

    pub fn gather(table: &Matrix, ids: &[usize]) -> Matrix {
        let mut out = Array2::zeros((ids.len(), table.ncols()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            row.assign(&table.row(id));
        }
        out
    }

    pub fn layer_norm(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> (Matrix, Matrix, Vec<f64>) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = (var + LAYER_NORM_EPS).sqrt().recip();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let mut y = &xhat * gamma;
        y += beta;
        (y, xhat, inv_std)
    }

    pub fn layer_norm_backward(g: &Matrix, gamma: &Matrix, xhat: &Matrix, inv_std: &[f64]) -> Matrix {
        let d = g.ncols() as f64;
        let mut gx = g * gamma;
        for ((mut row, xh), &inv) in gx.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
            let mean_g = row.sum() / d;
            let mean_gx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
            for (gi, &xi) in row.iter_mut().zip(xh.iter()) {
                *gi = inv * (*gi - mean_g - xi * mean_gx);
            }
        }
        gx
    }

    pub fn softmax_rows(x: &Matrix) -> Matrix {
        let mut p = x.clone();
        for mut row in p.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let s = row.sum();
            row /= s;
        }
        p
    }

    pub fn log_softmax_at(x: &Matrix, row: usize, col: usize) -> f64 {
        let r = x.row(row);
        let max = r.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = r.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        r[col] - lse
    }

    pub fn complex_scale(x: &Matrix, c: Complex64) -> Matrix {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let s = row.as_slice_mut().expect("standard layout");
            for pair in s.chunks_exact_mut(2) {
                let z = Complex64::new(pair[0], pair[1]) * c;
                pair[0] = z.re;
                pair[1] = z.im;
            }
        }
        out
    }

    /// Returns the output and softmax weights laid out as `[batch, head, q, k]`.
    pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, spec: &AttentionSpec) -> (Matrix, Vec<f64>) {
        let d = q.ncols();
        let (b, h) = (spec.batch, spec.heads);
        let lq = q.nrows() / b;
        let lk = k.nrows() / b;
        let dh = d / h;
        let scale = (dh as f64).sqrt().recip();
        let qs = q.as_slice().expect("standard layout");
        let ks = k.as_slice().expect("standard layout");
        let vs = v.as_slice().expect("standard layout");
        let mut out = Array2::<f64>::zeros((b * lq, d));
        let os = out.as_slice_mut().expect("standard layout");
        let mut probs = vec![0.0; b * h * lq * lk];
        for bi in 0..b {
            for hi in 0..h {
                let col = hi * dh;
                for i in 0..lq {
                    let qrow = &qs[(bi * lq + i) * d + col..][..dh];
                    let p = &mut probs[((bi * h + hi) * lq + i) * lk..][..lk];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..lk {
                        let allowed = (!spec.causal || j <= i)
                            && spec.key_mask.as_ref().is_none_or(|m| m[bi * lk + j]);
                        if allowed {
                            let krow = &ks[(bi * lk + j) * d + col..][..dh];
                            let s: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                            p[j] = s;
                            max = max.max(s);
                        } else {
                            p[j] = f64::NEG_INFINITY;
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        p.fill(0.0);
                        continue;
                    }
                    let mut sum = 0.0;
                    for pj in p.iter_mut() {
                        *pj = if *pj == f64::NEG_INFINITY { 0.0 } else { (*pj - max).exp() };
                        sum += *pj;
                    }
                    let orow = &mut os[(bi * lq + i) * d + col..][..dh];
                    for j in 0..lk {
                        p[j] /= sum;
                        if p[j] != 0.0 {
                            let vrow = &vs[(bi * lk + j) * d + col..][..dh];
                            for (o, &vv) in orow.iter_mut().zip(vrow) {
                                *o += p[j] * vv;
                            }
                        }
                    }
                }
            }
        }
        (out, probs)
    }

    pub fn attention_backward(
        g: &Matrix,
        q: &Matrix,
        k: &Matrix,
        v: &Matrix,
        spec: &AttentionSpec,
        probs: &[f64],
    ) -> (Matrix, Matrix, Matrix) {
        let d = q.ncols();
        let (b, h) = (spec.batch, spec.heads);
        let lq = q.nrows() / b;
        let lk = k.nrows() / b;
        let dh = d / h;
        let scale = (dh as f64).sqrt().recip();
        let gs = g.as_standard_layout();
        let gs = gs.as_slice().expect("standard layout");
        let qs = q.as_slice().expect("standard layout");
        let ks = k.as_slice().expect("standard layout");
        let vs = v.as_slice().expect("standard layout");
        let mut gq = Array2::<f64>::zeros(q.dim());
        let mut gk = Array2::<f64>::zeros(k.dim());
        let mut gv = Array2::<f64>::zeros(v.dim());
        {
            let gqs = gq.as_slice_mut().expect("standard layout");
            let gks = gk.as_slice_mut().expect("standard layout");
            let gvs = gv.as_slice_mut().expect("standard layout");
            let mut gp = vec![0.0; lk];
            for bi in 0..b {
                for hi in 0..h {
                    let col = hi * dh;
                    for i in 0..lq {
                        let p = &probs[((bi * h + hi) * lq + i) * lk..][..lk];
                        let qoff = (bi * lq + i) * d + col;
                        let grow = &gs[qoff..][..dh];
                        let mut dot = 0.0;
                        for j in 0..lk {
                            if p[j] == 0.0 {
                                gp[j] = 0.0;
                                continue;
                            }
                            let voff = (bi * lk + j) * d + col;
                            let vrow = &vs[voff..][..dh];
                            gp[j] = grow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                            dot += p[j] * gp[j];
                            for (gvv, &gg) in gvs[voff..][..dh].iter_mut().zip(grow) {
                                *gvv += p[j] * gg;
                            }
                        }
                        for j in 0..lk {
                            if p[j] == 0.0 {
                                continue;
                            }
                            let ds = p[j] * (gp[j] - dot) * scale;
                            let koff = (bi * lk + j) * d + col;
                            for c in 0..dh {
                                gqs[qoff + c] += ds * ks[koff + c];
                                gks[koff + c] += ds * qs[qoff + c];
                            }
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}
