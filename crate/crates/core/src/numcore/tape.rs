//! Reverse-mode automatic differentiation on an operation tape.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Each op
//! appends a node recording its inputs by index, so nodes are already in
//! topological order and [`Tape::backward`] is a single reverse sweep that
//! visits each op exactly once, accumulating gradients additively when a
//! value fans out into several consumers.
//!
//! Parameters enter the graph via [`Tape::param`]; after a backward pass,
//! [`Tape::accumulate_param_grads`] folds their gradients back into the
//! owning [`ParamStore`].

use crate::error::{Error, Result};
use crate::numcore::params::{ParamId, ParamStore};
use crate::numcore::tensor::{matmul_raw, Tensor};

/// Epsilon inside the layer-norm variance square root. Small enough that a
/// normalized row has variance within 1e-6 of 1 for any non-degenerate row.
pub const LAYER_NORM_EPS: f64 = 1e-8;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Value, Value),
    Transpose(Value),
    Add(Value, Value),
    AddBiasRow(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Scale(Value, f64),
    Relu(Value),
    SoftmaxRows(Value),
    LayerNormRows {
        x: Value,
        gamma: Value,
        beta: Value,
    },
    ConcatRows(Value, Value),
    SelectRows {
        mask: Vec<bool>,
        on_true: Value,
        on_false: Value,
    },
    CrossEntropyRows {
        logits: Value,
        targets: Vec<usize>,
    },
    MeanAll(Value),
    SumAll(Value),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    param: Option<ParamId>,
}

/// Operation tape for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, param: Option<ParamId>) -> Value {
        debug_assert!(value.is_finite(), "non-finite tensor pushed to tape");
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            param,
        });
        Value(self.nodes.len() - 1)
    }

    /// Inserts a constant leaf (no parameter binding).
    pub fn input(&mut self, value: Tensor) -> Value {
        self.push(value, Op::Leaf, None)
    }

    /// Inserts a leaf bound to a stored parameter. The same parameter may be
    /// inserted more than once per tape; gradients from all uses accumulate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Value {
        self.push(store.get(id).clone(), Op::Leaf, Some(id))
    }

    pub fn tensor(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient of the last backward target w.r.t. this node, if it was
    /// reached by the sweep.
    pub fn grad(&self, v: Value) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn dims2(&self, v: Value, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(Error::BadShape {
                op,
                shape: s.to_vec(),
                reason: "expected a rank-2 tensor",
            }),
        }
    }

    /// Rows/cols treating a rank-1 tensor as a single row.
    fn dims_rowish(&self, v: Value) -> (usize, usize) {
        let s = self.shape(v);
        match s.len() {
            2 => (s[0], s[1]),
            1 => (1, s[0]),
            _ => (1, self.tensor(v).numel()),
        }
    }

    // ----- forward ops -----

    /// Matrix product [m x k] * [k x n] -> [m x n].
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(Error::DimMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_raw(self.data(a), self.data(b), m, ka, n);
        let out = Tensor::from_vec(vec![m, n], data)?;
        Ok(self.push(out, Op::MatMul(a, b), None))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, a: Value) -> Result<Value> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.data(a);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let out = Tensor::from_vec(vec![n, m], data)?;
        Ok(self.push(out, Op::Transpose(a), None))
    }

    fn elementwise(
        &mut self,
        a: Value,
        b: Value,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Value> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::DimMismatch {
                op: op_name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, op, None))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise difference of two same-shape tensors.
    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a rank-1 bias row to every row of a rank-2 tensor.
    pub fn add_bias_row(&mut self, x: Value, bias: Value) -> Result<Value> {
        let (n, d) = self.dims2(x, "add_bias_row")?;
        if self.shape(bias) != [d] {
            return Err(Error::DimMismatch {
                op: "add_bias_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let xs = self.data(x);
        let bs = self.data(bias);
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                data.push(xs[i * d + j] + bs[j]);
            }
        }
        let out = Tensor::from_vec(vec![n, d], data)?;
        Ok(self.push(out, Op::AddBiasRow(x, bias), None))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Value, c: f64) -> Result<Value> {
        if !c.is_finite() {
            return Err(Error::NonFinite { op: "scale" });
        }
        let data = self.data(a).iter().map(|x| x * c).collect();
        let out = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Scale(a, c), None))
    }

    /// Elementwise max(x, 0).
    pub fn relu(&mut self, a: Value) -> Result<Value> {
        let data = self.data(a).iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Relu(a), None))
    }

    /// Row-wise softmax over the last axis, computed exp-normalized with a
    /// per-row max shift so rows sum to 1 regardless of logit scale.
    pub fn softmax_rows(&mut self, a: Value) -> Result<Value> {
        let (n, d) = self.dims_rowish(a);
        if d == 0 {
            return Err(Error::BadShape {
                op: "softmax",
                shape: self.shape(a).to_vec(),
                reason: "empty softmax axis",
            });
        }
        let src = self.data(a);
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..d {
                let e = (row[j] - m).exp();
                data[i * d + j] = e;
                sum += e;
            }
            for j in 0..d {
                data[i * d + j] /= sum;
            }
        }
        let out = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::SoftmaxRows(a), None))
    }

    /// Row-wise layer normalization with learned scale and shift:
    /// per row, (x - mean) / sqrt(var + eps) * gamma + beta.
    pub fn layer_norm_rows(&mut self, x: Value, gamma: Value, beta: Value) -> Result<Value> {
        let (n, d) = self.dims2(x, "layer_norm")?;
        if d == 0 {
            return Err(Error::BadShape {
                op: "layer_norm",
                shape: self.shape(x).to_vec(),
                reason: "empty rows",
            });
        }
        for v in [gamma, beta] {
            if self.shape(v) != [d] {
                return Err(Error::DimMismatch {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
        }
        let xs = self.data(x);
        let gs = self.data(gamma);
        let bs = self.data(beta);
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..d {
                data[i * d + j] = (row[j] - mean) * inv * gs[j] + bs[j];
            }
        }
        let out = Tensor::from_vec(vec![n, d], data)?;
        Ok(self.push(out, Op::LayerNormRows { x, gamma, beta }, None))
    }

    /// Stacks the rows of `a` on top of the rows of `b`.
    pub fn concat_rows(&mut self, a: Value, b: Value) -> Result<Value> {
        let (na, da) = self.dims2(a, "concat_rows")?;
        let (nb, db) = self.dims2(b, "concat_rows")?;
        if da != db {
            return Err(Error::DimMismatch {
                op: "concat_rows",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut data = Vec::with_capacity((na + nb) * da);
        data.extend_from_slice(self.data(a));
        data.extend_from_slice(self.data(b));
        let out = Tensor::from_vec(vec![na + nb, da], data)?;
        Ok(self.push(out, Op::ConcatRows(a, b), None))
    }

    /// Row-wise select: row i comes from `on_true` where `mask[i]` holds,
    /// otherwise from `on_false`. Selected rows are copied verbatim, so a
    /// passthrough row is bitwise equal to its source.
    pub fn select_rows(&mut self, mask: &[bool], on_true: Value, on_false: Value) -> Result<Value> {
        let (n, d) = self.dims2(on_true, "select_rows")?;
        if self.shape(on_true) != self.shape(on_false) {
            return Err(Error::DimMismatch {
                op: "select_rows",
                lhs: self.shape(on_true).to_vec(),
                rhs: self.shape(on_false).to_vec(),
            });
        }
        if mask.len() != n {
            return Err(Error::Contract(format!(
                "select_rows: mask length {} does not match row count {n}",
                mask.len()
            )));
        }
        let ts = self.data(on_true);
        let fs = self.data(on_false);
        let mut data = Vec::with_capacity(n * d);
        for (i, take_true) in mask.iter().enumerate() {
            let src = if *take_true { ts } else { fs };
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::from_vec(vec![n, d], data)?;
        Ok(self.push(
            out,
            Op::SelectRows {
                mask: mask.to_vec(),
                on_true,
                on_false,
            },
            None,
        ))
    }

    /// Mean over rows of the cross-entropy between each logit row and its
    /// target column, computed via a max-shifted log-sum-exp.
    pub fn cross_entropy_rows(&mut self, logits: Value, targets: &[usize]) -> Result<Value> {
        let (n, k) = self.dims_rowish(logits);
        if k == 0 {
            return Err(Error::BadShape {
                op: "cross_entropy",
                shape: self.shape(logits).to_vec(),
                reason: "empty logit rows",
            });
        }
        if targets.len() != n {
            return Err(Error::Contract(format!(
                "cross_entropy: {} targets for {n} rows",
                targets.len()
            )));
        }
        if n == 0 {
            return Err(Error::BadShape {
                op: "cross_entropy",
                shape: self.shape(logits).to_vec(),
                reason: "no rows to average",
            });
        }
        let src = self.data(logits);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: k,
                });
            }
            let row = &src[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let out = Tensor::scalar(total / n as f64);
        Ok(self.push(
            out,
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
            },
            None,
        ))
    }

    /// Mean over all elements.
    pub fn mean_all(&mut self, a: Value) -> Result<Value> {
        let n = self.tensor(a).numel();
        if n == 0 {
            return Err(Error::BadShape {
                op: "mean_all",
                shape: self.shape(a).to_vec(),
                reason: "mean of an empty tensor",
            });
        }
        let out = Tensor::scalar(self.data(a).iter().sum::<f64>() / n as f64);
        Ok(self.push(out, Op::MeanAll(a), None))
    }

    /// Sum over all elements.
    pub fn sum_all(&mut self, a: Value) -> Result<Value> {
        let out = Tensor::scalar(self.data(a).iter().sum::<f64>());
        Ok(self.push(out, Op::SumAll(a), None))
    }

    // ----- backward -----

    fn add_grad(&mut self, v: Value, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        debug_assert_eq!(delta.len(), node.value.data.len());
        let grad = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Runs the reverse sweep from a scalar loss, filling node gradients.
    /// Existing gradients are cleared first; each op contributes exactly once.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        if self.tensor(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    // d a = g * b^T ; d b = a^T * g
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    let (av, bv) = (self.data(a).to_vec(), self.data(b).to_vec());
                    let mut bt = vec![0.0; n * k];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = bv[p * n + j];
                        }
                    }
                    let da = matmul_raw(&grad, &bt, m, n, k);
                    let mut at = vec![0.0; k * m];
                    for ii in 0..m {
                        for p in 0..k {
                            at[p * m + ii] = av[ii * k + p];
                        }
                    }
                    let db = matmul_raw(&at, &grad, k, m, n);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Transpose(a) => {
                    let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                    let mut da = vec![0.0; m * n];
                    for ii in 0..m {
                        for j in 0..n {
                            da[ii * n + j] = grad[j * m + ii];
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::Add(a, b) => {
                    self.add_grad(a, &grad);
                    self.add_grad(b, &grad);
                }
                Op::Sub(a, b) => {
                    self.add_grad(a, &grad);
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.add_grad(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = grad.iter().zip(self.data(b)).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = grad.iter().zip(self.data(a)).map(|(g, x)| g * x).collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::AddBiasRow(x, bias) => {
                    let (n, d) = (self.shape(x)[0], self.shape(x)[1]);
                    let mut db = vec![0.0; d];
                    for ii in 0..n {
                        for j in 0..d {
                            db[j] += grad[ii * d + j];
                        }
                    }
                    self.add_grad(x, &grad);
                    self.add_grad(bias, &db);
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.add_grad(a, &da);
                }
                Op::Relu(a) => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(self.data(a))
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::SoftmaxRows(a) => {
                    // d x = y .* (g - rowsum(g .* y))
                    let (n, d) = self.dims_rowish(a);
                    let y = &self.nodes[i].value.data;
                    let mut da = vec![0.0; n * d];
                    for ii in 0..n {
                        let ys = &y[ii * d..(ii + 1) * d];
                        let gs = &grad[ii * d..(ii + 1) * d];
                        let dot: f64 = ys.iter().zip(gs).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..d {
                            da[ii * d + j] = ys[j] * (gs[j] - dot);
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::LayerNormRows { x, gamma, beta } => {
                    let (n, d) = (self.shape(x)[0], self.shape(x)[1]);
                    let xs = self.data(x).to_vec();
                    let gs = self.data(gamma).to_vec();
                    let mut dx = vec![0.0; n * d];
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for ii in 0..n {
                        let row = &xs[ii * d..(ii + 1) * d];
                        let g = &grad[ii * d..(ii + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let gg: Vec<f64> = g.iter().zip(&gs).map(|(gv, ga)| gv * ga).collect();
                        let mean_gg = gg.iter().sum::<f64>() / d as f64;
                        let mean_gg_xhat =
                            gg.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[ii * d + j] = (gg[j] - mean_gg - xhat[j] * mean_gg_xhat) * inv;
                            dgamma[j] += g[j] * xhat[j];
                            dbeta[j] += g[j];
                        }
                    }
                    self.add_grad(x, &dx);
                    self.add_grad(gamma, &dgamma);
                    self.add_grad(beta, &dbeta);
                }
                Op::ConcatRows(a, b) => {
                    let na = self.shape(a)[0] * self.shape(a)[1];
                    self.add_grad(a, &grad[..na]);
                    self.add_grad(b, &grad[na..]);
                }
                Op::SelectRows {
                    mask,
                    on_true,
                    on_false,
                } => {
                    let d = self.shape(on_true)[1];
                    let mut dt = vec![0.0; self.tensor(on_true).numel()];
                    let mut df = vec![0.0; self.tensor(on_false).numel()];
                    for (ii, take_true) in mask.iter().enumerate() {
                        let dst = if *take_true { &mut dt } else { &mut df };
                        dst[ii * d..(ii + 1) * d].copy_from_slice(&grad[ii * d..(ii + 1) * d]);
                    }
                    self.add_grad(on_true, &dt);
                    self.add_grad(on_false, &df);
                }
                Op::CrossEntropyRows { logits, targets } => {
                    // d logits = (softmax(row) - onehot(target)) * g / n
                    let (n, k) = self.dims_rowish(logits);
                    let src = self.data(logits).to_vec();
                    let g = grad[0] / n as f64;
                    let mut dl = vec![0.0; n * k];
                    for (ii, &t) in targets.iter().enumerate() {
                        let row = &src[ii * k..(ii + 1) * k];
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for j in 0..k {
                            let p = exps[j] / sum;
                            dl[ii * k + j] = (p - if j == t { 1.0 } else { 0.0 }) * g;
                        }
                    }
                    self.add_grad(logits, &dl);
                }
                Op::MeanAll(a) => {
                    let n = self.tensor(a).numel();
                    let da = vec![grad[0] / n as f64; n];
                    self.add_grad(a, &da);
                }
                Op::SumAll(a) => {
                    let n = self.tensor(a).numel();
                    let da = vec![grad[0]; n];
                    self.add_grad(a, &da);
                }
            }
        }
        Ok(())
    }

    /// Folds parameter-leaf gradients back into the store. Multiple leaves
    /// bound to the same parameter accumulate.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Some(id), Some(grad)) = (node.param, node.grad.as_ref()) {
                store.accumulate_grad(id, grad);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_known_product_and_grads() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.input(Tensor::from_vec(vec![2, 1], vec![5.0, 6.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(c), &[17.0, 39.0]);
        let loss = tape.sum_all(c).unwrap();
        tape.backward(loss).unwrap();
        // d sum / d a = [[5,6],[5,6]], d sum / d b = [[4],[6]]
        assert_eq!(tape.grad(a).unwrap(), &[5.0, 6.0, 5.0, 6.0]);
        assert_eq!(tape.grad(b).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(vec![2, 3]));
        let b = tape.input(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_matches_exp_normalize_oracle() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        let expect = [
            0.09003057317038046,
            0.24472847105479764,
            0.6652409557748218,
        ];
        for (got, want) in tape.data(y).iter().zip(expect) {
            assert!(close(*got, want, 1e-12), "{got} vs {want}");
        }
        let sum: f64 = tape.data(y).iter().sum();
        assert!(close(sum, 1.0, 1e-9));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let xs = tape.input(Tensor::from_vec(vec![1, 3], vec![1001.0, 1002.0, 1003.0]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        let ys = tape.softmax_rows(xs).unwrap();
        for (a, b) in tape.data(y).iter().zip(tape.data(ys)) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn softmax_empty_axis_is_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![2, 0], vec![]).unwrap());
        assert!(tape.softmax_rows(x).is_err());
    }

    #[test]
    fn cross_entropy_matches_oracle() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let ce = tape.cross_entropy_rows(x, &[0]).unwrap();
        assert!(close(tape.data(ce)[0], 2.4076059644443806, 1e-12));
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let err = tape.cross_entropy_rows(x, &[3]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 3, len: 3, .. }));
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let ce = tape.cross_entropy_rows(x, &[0]).unwrap();
        tape.backward(ce).unwrap();
        let g = tape.grad(x).unwrap();
        let sm = [0.09003057317038046, 0.24472847105479764, 0.6652409557748218];
        assert!(close(g[0], sm[0] - 1.0, 1e-12));
        assert!(close(g[1], sm[1], 1e-12));
        assert!(close(g[2], sm[2], 1e-12));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(vec![2, 2]));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn layer_norm_rows_have_unit_stats_before_affine() {
        let mut tape = Tape::new();
        let x = tape.input(
            Tensor::from_vec(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 10.0]).unwrap(),
        );
        let gamma = tape.input(Tensor::from_vec(vec![4], vec![1.0; 4]).unwrap());
        let beta = tape.input(Tensor::from_vec(vec![4], vec![0.0; 4]).unwrap());
        let y = tape.layer_norm_rows(x, gamma, beta).unwrap();
        for i in 0..2 {
            let row = &tape.data(y)[i * 4..(i + 1) * 4];
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6, "row {i} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row {i} var {var}");
        }
    }

    #[test]
    fn gradient_accumulates_when_value_fans_out() {
        // loss = sum(x + x) => d loss / d x = 2 everywhere.
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1, 2], vec![3.0, -1.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn select_rows_copies_verbatim_and_routes_grads() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.input(Tensor::from_vec(vec![2, 2], vec![10.0, 20.0, 30.0, 40.0]).unwrap());
        let y = tape.select_rows(&[true, false], a, b).unwrap();
        assert_eq!(tape.data(y), &[1.0, 2.0, 30.0, 40.0]);
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(tape.grad(b).unwrap(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_rows_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.input(Tensor::from_vec(vec![2, 2], vec![0.0, 0.0, 5.0, 5.0]).unwrap());
        let y = tape.concat_rows(a, b).unwrap();
        assert_eq!(tape.shape(y), &[3, 2]);
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().len(), 2);
        assert_eq!(tape.grad(b).unwrap().len(), 4);
    }

    #[test]
    fn param_grads_accumulate_across_multiple_uses() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let w1 = tape.param(&store, w);
        let w2 = tape.param(&store, w);
        let y = tape.add(w1, w2).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut store);
        assert_eq!(store.get(w).grad.as_deref(), Some(&[2.0, 2.0][..]));
    }
}
