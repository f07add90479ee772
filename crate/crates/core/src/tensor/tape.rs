//! Define-by-run reverse-mode differentiation over [`DenseMat`] values.
//!
//! A [`Tape`] is built fresh for every forward pass. Each op appends a node
//! holding its output value; [`Tape::backward`] walks the nodes in exact
//! reverse order of recording and accumulates adjoints. Only the handful of
//! ops the graph autoencoder needs are provided, including fused
//! cross-entropy kernels that go through the stable log-sigmoid path.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::gram_bce::{gram_bce, softplus_sum_and_sigmoid};
use crate::tensor::numeric::{sigmoid, softplus, softplus_and_sigmoid};
use crate::tensor::{DenseMat, SparseMat};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Spmm {
        lhs: Arc<SparseMat>,
        rhs: Var,
    },
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Sum(Var),
    Mean(Var),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    /// Any fused loss whose input adjoint was computed during the forward pass.
    FusedLoss {
        input: Var,
        grad: DenseMat,
    },
}

struct Node {
    value: DenseMat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<DenseMat>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&DenseMat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zero-filled when `v` does not reach the loss.
    pub fn get_or_zeros(&self, v: Var) -> DenseMat {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMat::zeros(r, c)
            }
        }
    }
}

fn check(op: &'static str, m: DenseMat) -> Result<DenseMat> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::numeric(op))
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

    pub fn value(&self, v: Var) -> &DenseMat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: DenseMat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: DenseMat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: DenseMat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn spmm(&mut self, lhs: &Arc<SparseMat>, rhs: Var) -> Result<Var> {
        let out = check("spmm", lhs.spmm(self.value(rhs))?)?;
        let ng = self.ng(rhs);
        Ok(self.push(
            out,
            Op::Spmm {
                lhs: Arc::clone(lhs),
                rhs,
            },
            ng,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = check("matmul", self.value(a).matmul(self.value(b))?)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a * b^T`.
    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = check("matmul_transb", self.value(a).matmul_transb(self.value(b))?)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMulTransB(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = check("add", self.value(a).checked_add(self.value(b))?)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = check("sub", self.value(a).checked_sub(self.value(b))?)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = check("hadamard", self.value(a).hadamard(self.value(b))?)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Hadamard(a, b), ng))
    }

    /// Adds a `1 x c` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = check("add_row", out)?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddRow { x, bias }, ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = check("scale", self.value(a).scale(s))?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Scale(a, s), ng))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = check("add_scalar", self.value(a).map(|v| v + s))?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::AddScalar(a), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = check("exp", self.value(a).map(f64::exp))?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Exp(a), ng))
    }

    /// Elementwise clamp to `[lo, hi]`; the adjoint is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let ng = self.ng(x);
        self.push(out, Op::Clamp { x, lo, hi }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = check("sum", DenseMat::scalar(self.value(a).sum()))?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Sum(a), ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = check("mean", DenseMat::scalar(self.value(a).mean()))?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Mean(a), ng))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {}", xv.rows()),
            ));
        }
        let out = xv.select_rows(idx);
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    fn fused(&mut self, op: &'static str, input: Var, loss: f64, grad: DenseMat) -> Result<Var> {
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::numeric(op));
        }
        let ng = self.ng(input);
        Ok(self.push(DenseMat::scalar(loss), Op::FusedLoss { input, grad }, ng))
    }

    /// `-mean(log sigmoid(sign * x))` over every entry of `x`.
    ///
    /// With `sign = 1` this is the cross-entropy for "label 1" logits, with
    /// `sign = -1` the cross-entropy for "label 0" logits.
    pub fn neg_mean_log_sigmoid(&mut self, x: Var, sign: f64) -> Result<Var> {
        let xv = self.value(x);
        let len = xv.len() as f64;
        let mut loss = 0.0;
        let mut grad = DenseMat::zeros(xv.rows(), xv.cols());
        for (g, &v) in grad.data_mut().iter_mut().zip(xv.data()) {
            let (sp, s) = softplus_and_sigmoid(-sign * v);
            loss += sp;
            // d/dv softplus(-sign v) = -sign * sigmoid(-sign v)
            *g = -sign * s / len;
        }
        self.fused("neg_mean_log_sigmoid", x, loss / len, grad)
    }

    /// Unweighted mean sigmoid cross-entropy of `logits` against a dense 0/1 target.
    pub fn bce_with_logits(&mut self, logits: Var, target: &DenseMat) -> Result<Var> {
        let xv = self.value(logits);
        if xv.shape() != target.shape() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{:?} vs target {:?}", xv.shape(), target.shape()),
            ));
        }
        let len = xv.len() as f64;
        let mut grad = DenseMat::zeros(xv.rows(), xv.cols());
        // t * softplus(-x) + (1 - t) * softplus(x) = softplus(x) - t x
        let mut loss = softplus_sum_and_sigmoid(xv.data(), grad.data_mut());
        for ((g, &x), &t) in grad.data_mut().iter_mut().zip(xv.data()).zip(target.data()) {
            loss -= t * x;
            *g = (*g - t) / len;
        }
        self.fused("bce_with_logits", logits, loss / len, grad)
    }

    /// Weighted sigmoid cross-entropy of dense `logits` against a sparse 0/1
    /// `target`: `norm * mean(pos_weight * t * softplus(-x) + (1 - t) * softplus(x))`.
    pub fn weighted_bce_sparse_target(
        &mut self,
        logits: Var,
        target: &SparseMat,
        pos_weight: f64,
        norm: f64,
    ) -> Result<Var> {
        let xv = self.value(logits);
        if xv.rows() != target.rows() || xv.cols() != target.cols() {
            return Err(Error::shape(
                "weighted_bce",
                format!(
                    "{:?} vs target {}x{}",
                    xv.shape(),
                    target.rows(),
                    target.cols()
                ),
            ));
        }
        let scale = norm / xv.len() as f64;
        let mut grad = DenseMat::zeros(xv.rows(), xv.cols());
        // every entry as a negative first, positives patched below
        let mut loss = softplus_sum_and_sigmoid(xv.data(), grad.data_mut());
        for i in 0..xv.rows() {
            let x_row = xv.row(i);
            let g_row = grad.row_mut(i);
            for &j in target.row(i).0 {
                let x = x_row[j];
                let (sp, s) = softplus_and_sigmoid(x);
                // softplus(-x) = softplus(x) - x
                loss += pos_weight * (sp - x) - sp;
                g_row[j] = pos_weight * (s - 1.0);
            }
            for g in g_row.iter_mut() {
                *g *= scale;
            }
        }
        self.fused("weighted_bce", logits, scale * loss, grad)
    }

    /// Fused `weighted_bce_sparse_target(z * z^T, target, ..)` that exploits
    /// the symmetry of `z z^T`: only the upper triangle is visited and the
    /// `n x n` logit matrix is never materialized.
    ///
    /// `target` must be symmetric.
    pub fn inner_product_bce(
        &mut self,
        z: Var,
        target: &SparseMat,
        pos_weight: f64,
        norm: f64,
    ) -> Result<Var> {
        let zv = self.value(z);
        let n = zv.rows();
        if target.rows() != n || target.cols() != n {
            return Err(Error::shape(
                "inner_product_bce",
                format!(
                    "z {:?} vs target {}x{}",
                    zv.shape(),
                    target.rows(),
                    target.cols()
                ),
            ));
        }
        let d = zv.cols();
        let scale = norm / (n as f64 * n as f64);
        let (loss, grad) = gram_bce(zv.data(), n, d, target, pos_weight, 2.0 * scale);
        let grad = DenseMat::from_vec(n, d, grad)?;
        self.fused("inner_product_bce", z, scale * loss, grad)
    }

    /// Reverse pass from a `1 x 1` loss. Nodes recorded after `loss` are ignored.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<DenseMat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMat::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &DenseMat, grads: &mut [Option<DenseMat>]) -> Result<()> {
        let mut acc = |v: Var, delta: DenseMat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Spmm { lhs, rhs } => {
                if self.ng(*rhs) {
                    acc(*rhs, lhs.spmm_transpose(g)?);
                }
            }
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_transb(self.value(*b))?);
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).matmul_transa(g)?);
                }
            }
            Op::MatMulTransB(a, b) => {
                // out = A B^T: dA = G B, dB = G^T A
                if self.ng(*a) {
                    acc(*a, g.matmul(self.value(*b))?);
                }
                if self.ng(*b) {
                    acc(*b, g.matmul_transa(self.value(*a))?);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Hadamard(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.hadamard(self.value(*b))?);
                }
                if self.ng(*b) {
                    acc(*b, g.hadamard(self.value(*a))?);
                }
            }
            Op::AddRow { x, bias } => {
                acc(*x, g.clone());
                if self.ng(*bias) {
                    let mut col = DenseMat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (c, v) in col.data_mut().iter_mut().zip(g.row(i)) {
                            *c += v;
                        }
                    }
                    acc(*bias, col);
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                acc(
                    *a,
                    g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
                );
            }
            Op::Sigmoid(a) => {
                acc(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y)));
            }
            Op::Exp(a) => acc(*a, g.hadamard(&node.value)?),
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *x,
                    g.zip_map(self.value(*x), |gv, v| {
                        if (lo..=hi).contains(&v) {
                            gv
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, DenseMat::filled(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, DenseMat::filled(r, c, g.data()[0] / (r * c) as f64));
            }
            Op::GatherRows { x, idx } => {
                let (r, c) = self.value(*x).shape();
                let mut out = DenseMat::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*x, out);
            }
            Op::FusedLoss { input, grad } => acc(*input, grad.scale(g.data()[0])),
        }
        Ok(())
    }
}

/// Plain (untaped) reference for the weighted structure loss. Used by tests
/// and by evaluation code that only needs the value.
pub fn weighted_bce_value(logits: &DenseMat, target: &DenseMat, pos_weight: f64, norm: f64) -> f64 {
    let mut total = 0.0;
    for (&x, &t) in logits.data().iter().zip(target.data()) {
        total += pos_weight * t * softplus(-x) + (1.0 - t) * softplus(x);
    }
    norm * total / logits.len() as f64
}
