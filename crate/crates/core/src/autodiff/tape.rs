//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so a node's inputs always have
//! smaller indices and a single reverse sweep visits every node after all of
//! its consumers.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Relu(Var),
    /// `a [m x k] * b [n x k]^T`
    MatMulBt(Var, Var),
    /// `x [m x n] + b [n]`
    AddRowBias(Var, Var),
    /// `x [B x C x L] + b [C]`
    AddChannelBias(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    /// `[B x C x L] -> [B x C]`
    MeanTime(Var),
    /// Per-column batch normalization of `x [B x D]` with affine `gamma`,
    /// `beta [D]`; `aux` holds the normalized input followed by the column
    /// inverse standard deviations.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    /// Row-wise L2 normalization; `aux` holds the row norms.
    L2NormalizeRows(Var),
    /// Row-wise log-softmax; with `exclude_diag` the diagonal is left out of
    /// the normalizer and its output is pinned to zero.
    LogSoftmaxRows {
        x: Var,
        exclude_diag: bool,
    },
    ConcatRows(Var, Var),
    Sum(Var),
    Mean(Var),
    /// Mean binary cross-entropy of logits against constant targets.
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    aux: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.push_aux(shape, value, Vec::new(), op, needs_grad)
    }

    fn push_aux(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        aux: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            aux,
            op,
            needs_grad,
        });
        self.grads.push(Vec::new());
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf holding a copy of `t`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, true)
    }

    /// Constant leaf holding a copy of `t`; no gradient flows into it.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        if numel(&shape) != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                values.len()
            )));
        }
        Ok(self.push(shape, values, Op::Leaf, false))
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Gradient accumulated into `v` by the last [`Tape::backward`]; zeros if
    /// `v` was unreachable.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            vec![0.0; self.node(v).value.len()]
        } else {
            g.clone()
        }
    }

    pub fn to_tensor(&self, v: Var) -> Result<Tensor> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn dims<const N: usize>(&self, v: Var, what: &str) -> Result<[usize; N]> {
        let s = self.shape(v);
        s.try_into()
            .map_err(|_| Error::shape(format!("{what} expects rank {N}, got {s:?}")))
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(&[a, b]);
        self.push(self.shape(a).to_vec(), value, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.elementwise(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * c).collect();
        let needs = self.needs(&[a]);
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, c), needs)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|x| x + c).collect();
        let needs = self.needs(&[a]);
        self.push(self.shape(a).to_vec(), value, Op::AddScalar(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.exp()).collect();
        let needs = self.needs(&[a]);
        self.push(self.shape(a).to_vec(), value, Op::Exp(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let needs = self.needs(&[a]);
        self.push(self.shape(a).to_vec(), value, Op::Relu(a), needs)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.dims(a, "matmul lhs")?;
        let [n, k2] = self.dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let ar = &av[i * k..(i + 1) * k];
            for (j, o) in row.iter_mut().enumerate() {
                *o = dot(ar, &bv[j * k..(j + 1) * k]);
            }
        });
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMulBt(a, b), needs))
    }

    /// Dense layer `x W^T + b` with `W [out x in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_bt(x, w)?;
        self.add_row_bias(y, b)
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [_, n] = self.dims(x, "row bias input")?;
        if self.shape(b) != [n] {
            return Err(Error::shape(format!(
                "row bias {:?} for width {n}",
                self.shape(b)
            )));
        }
        let bv = self.value(b);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % n])
            .collect();
        let needs = self.needs(&[x, b]);
        Ok(self.push(self.shape(x).to_vec(), value, Op::AddRowBias(x, b), needs))
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [_, c, l] = self.dims(x, "channel bias input")?;
        if self.shape(b) != [c] {
            return Err(Error::shape(format!(
                "channel bias {:?} for {c} channels",
                self.shape(b)
            )));
        }
        let bv = self.value(b);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[(i / l) % c])
            .collect();
        let needs = self.needs(&[x, b]);
        Ok(self.push(
            self.shape(x).to_vec(),
            value,
            Op::AddChannelBias(x, b),
            needs,
        ))
    }

    /// 1-D convolution (cross-correlation) with zero padding `pad` on both
    /// sides. `x [B x Cin x L]`, `w [Cout x Cin x K]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let [bsz, cin, len] = self.dims(x, "conv1d input")?;
        let [cout, cin_w, k] = self.dims(w, "conv1d weight")?;
        if cin != cin_w {
            return Err(Error::shape(format!(
                "conv1d input has {cin} channels, weight expects {cin_w}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv1d stride must be positive"));
        }
        if len + 2 * pad < k {
            return Err(Error::shape(format!(
                "conv1d kernel {k} longer than padded input {}",
                len + 2 * pad
            )));
        }
        let lout = (len + 2 * pad - k) / stride + 1;
        let geo = ConvGeometry {
            cin,
            len,
            cout,
            k,
            lout,
            stride,
            pad,
        };
        let (xv, wv) = (self.value(x), self.value(w));
        let mut out = vec![0.0; bsz * cout * lout];
        out.par_chunks_mut(cout * lout)
            .zip(xv.par_chunks(cin * len))
            .for_each(|(yb, xb)| geo.forward(xb, wv, yb));
        let needs = self.needs(&[x, w]);
        Ok(self.push(
            vec![bsz, cout, lout],
            out,
            Op::Conv1d { x, w, stride, pad },
            needs,
        ))
    }

    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let [b, c, l] = self.dims(x, "mean_time input")?;
        let value = self
            .value(x)
            .chunks(l)
            .map(|row| row.iter().sum::<f64>() / l as f64)
            .collect();
        let needs = self.needs(&[x]);
        Ok(self.push(vec![b, c], value, Op::MeanTime(x), needs))
    }

    /// Batch normalization over the rows of `x [B x D]` using the batch mean
    /// and biased variance of every column, then `gamma * x_hat + beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let [b, d] = self.dims(x, "batch_norm input")?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(format!(
                "batch_norm affine parameters must have shape [{d}]"
            )));
        }
        if b < 2 {
            return Err(Error::invalid("batch_norm needs at least 2 rows"));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("batch_norm eps must be positive"));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; d];
        for row in xv.chunks(d) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; d];
        for row in xv.chunks(d) {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v / b as f64 + eps).sqrt())
            .collect();
        let mut aux = Vec::with_capacity(b * d + d);
        for row in xv.chunks(d) {
            aux.extend((0..d).map(|j| (row[j] - mean[j]) * inv_std[j]));
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let value = aux
            .chunks(d)
            .flat_map(|r| (0..d).map(move |j| gv[j] * r[j] + bv[j]))
            .collect();
        aux.extend_from_slice(&inv_std);
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push_aux(
            vec![b, d],
            value,
            aux,
            Op::BatchNorm { x, gamma, beta },
            needs,
        ))
    }

    /// Row-wise L2 normalization. Zero rows map to zero; their indices are
    /// returned alongside the node.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<(Var, Vec<usize>)> {
        let [_, d] = self.dims(x, "l2_normalize_rows input")?;
        let mut zero_rows = Vec::new();
        let mut norms = Vec::new();
        let mut value = Vec::with_capacity(self.value(x).len());
        for (i, row) in self.value(x).chunks(d).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(norm);
            if norm > 0.0 {
                value.extend(row.iter().map(|v| v / norm));
            } else {
                zero_rows.push(i);
                value.extend(std::iter::repeat_n(0.0, d));
            }
        }
        let needs = self.needs(&[x]);
        let shape = self.shape(x).to_vec();
        let v = self.push_aux(shape, value, norms, Op::L2NormalizeRows(x), needs);
        Ok((v, zero_rows))
    }

    pub fn log_softmax_rows(&mut self, x: Var, exclude_diag: bool) -> Result<Var> {
        let [m, n] = self.dims(x, "log_softmax_rows input")?;
        if exclude_diag && (m != n || n < 2) {
            return Err(Error::shape(format!(
                "diagonal exclusion needs a square matrix of size >= 2, got {m}x{n}"
            )));
        }
        let mut value = vec![0.0; m * n];
        for (i, (row, out)) in self.value(x).chunks(n).zip(value.chunks_mut(n)).enumerate() {
            let keep = |j: usize| !(exclude_diag && i == j);
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..n)
                    .filter(|&j| keep(j))
                    .map(|j| (row[j] - max).exp())
                    .sum::<f64>()
                    .ln();
            for j in (0..n).filter(|&j| keep(j)) {
                out[j] = row[j] - lse;
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            vec![m, n],
            value,
            Op::LogSoftmaxRows { x, exclude_diag },
            needs,
        ))
    }

    /// Row-wise softmax, built as `exp(log_softmax)`.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let ls = self.log_softmax_rows(x, false)?;
        Ok(self.exp(ls))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ma, n] = self.dims(a, "concat lhs")?;
        let [mb, nb] = self.dims(b, "concat rhs")?;
        if n != nb {
            return Err(Error::shape(format!("concat widths {n} vs {nb}")));
        }
        let mut value = self.value(a).to_vec();
        value.extend_from_slice(self.value(b));
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![ma + mb, n], value, Op::ConcatRows(a, b), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let needs = self.needs(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(&[a]);
        self.push(vec![1], vec![s], Op::Mean(a), needs)
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        if targets.len() != self.value(logits).len() {
            return Err(Error::shape(format!(
                "{} targets for {} logits",
                targets.len(),
                self.value(logits).len()
            )));
        }
        let n = targets.len() as f64;
        let loss = self
            .value(logits)
            .iter()
            .zip(&targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let needs = self.needs(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceWithLogits { logits, targets },
            needs,
        ))
    }

    /// Reverse sweep from a one-element `loss`. Gradients from earlier sweeps
    /// are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads.iter_mut().for_each(Vec::clear);
        self.grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if self.grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut self.grads[i]);
            self.propagate(i, &g);
            self.grads[i] = g;
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        let g = &mut self.grads[v.0];
        if g.is_empty() {
            g.resize(len, 0.0);
        }
        Some(g)
    }

    fn acc_with(&mut self, v: Var, f: impl Fn(usize) -> f64) {
        if let Some(g) = self.acc(v) {
            g.iter_mut().enumerate().for_each(|(i, gi)| *gi += f(i));
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_with(a, |j| g[j]);
                self.acc_with(b, |j| g[j]);
            }
            Op::Sub(a, b) => {
                self.acc_with(a, |j| g[j]);
                self.acc_with(b, |j| -g[j]);
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                self.acc_with(a, |j| g[j] * bv[j]);
                self.acc_with(b, |j| g[j] * av[j]);
            }
            Op::Scale(a, c) => self.acc_with(a, |j| g[j] * c),
            Op::AddScalar(a) => self.acc_with(a, |j| g[j]),
            Op::Exp(a) => {
                let y = self.nodes[i].value.clone();
                self.acc_with(a, |j| g[j] * y[j]);
            }
            Op::Relu(a) => {
                let x = self.nodes[a.0].value.clone();
                self.acc_with(a, |j| if x[j] > 0.0 { g[j] } else { 0.0 });
            }
            Op::MatMulBt(a, b) => self.backward_matmul_bt(a, b, g),
            Op::AddRowBias(x, b) => {
                let n = self.nodes[b.0].value.len();
                self.acc_with(x, |j| g[j]);
                if let Some(gb) = self.acc(b) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(gb, r)| *gb += r);
                    }
                }
            }
            Op::AddChannelBias(x, b) => {
                let shape = self.nodes[x.0].shape.clone();
                let (c, l) = (shape[1], shape[2]);
                self.acc_with(x, |j| g[j]);
                if let Some(gb) = self.acc(b) {
                    for (r, row) in g.chunks(l).enumerate() {
                        gb[r % c] += row.iter().sum::<f64>();
                    }
                }
            }
            Op::Conv1d { x, w, stride, pad } => self.backward_conv1d(i, x, w, stride, pad, g),
            Op::MeanTime(x) => {
                let l = self.nodes[x.0].shape[2];
                self.acc_with(x, |j| g[j / l] / l as f64);
            }
            Op::BatchNorm { x, gamma, beta } => {
                let [b, d]: [usize; 2] = self.nodes[i].shape[..].try_into().unwrap();
                let aux = self.nodes[i].aux.clone();
                let (xhat, inv_std) = aux.split_at(b * d);
                let gv = self.nodes[gamma.0].value.clone();
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * xr[j];
                    }
                }
                self.acc_with(gamma, |j| sum_gx[j]);
                self.acc_with(beta, |j| sum_g[j]);
                let n = b as f64;
                self.acc_with(x, |k| {
                    let j = k % d;
                    gv[j] * inv_std[j] / n * (n * g[k] - sum_g[j] - xhat[k] * sum_gx[j])
                });
            }
            Op::L2NormalizeRows(x) => {
                let d = self.nodes[x.0].shape[1];
                let y = self.nodes[i].value.clone();
                let norms = self.nodes[i].aux.clone();
                if let Some(gx) = self.acc(x) {
                    for r in 0..norms.len() {
                        if norms[r] <= 0.0 {
                            continue;
                        }
                        let ys = &y[r * d..(r + 1) * d];
                        let gs = &g[r * d..(r + 1) * d];
                        let proj = dot(ys, gs);
                        for c in 0..d {
                            gx[r * d + c] += (gs[c] - ys[c] * proj) / norms[r];
                        }
                    }
                }
            }
            Op::LogSoftmaxRows { x, exclude_diag } => {
                let n = self.nodes[i].shape[1];
                let y = self.nodes[i].value.clone();
                if let Some(gx) = self.acc(x) {
                    for (r, (ys, gs)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                        let keep = |j: usize| !(exclude_diag && r == j);
                        let total: f64 = (0..n).filter(|&j| keep(j)).map(|j| gs[j]).sum();
                        for j in (0..n).filter(|&j| keep(j)) {
                            gx[r * n + j] += gs[j] - ys[j].exp() * total;
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let na = self.nodes[a.0].value.len();
                self.acc_with(a, |j| g[j]);
                self.acc_with(b, |j| g[na + j]);
            }
            Op::Sum(a) => self.acc_with(a, |_| g[0]),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                self.acc_with(a, |_| g[0] / n);
            }
            Op::BceWithLogits { logits, targets } => {
                let x = self.nodes[logits.0].value.clone();
                let n = x.len() as f64;
                self.acc_with(logits, |j| g[0] * (sigmoid(x[j]) - targets[j]) / n);
            }
        }
    }

    fn backward_matmul_bt(&mut self, a: Var, b: Var, g: &[f64]) {
        let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
        let n = self.nodes[b.0].shape[0];
        if self.nodes[a.0].needs_grad {
            let bv = self.nodes[b.0].value.clone();
            let mut da = vec![0.0; m * k];
            da.par_chunks_mut(k).enumerate().for_each(|(r, dr)| {
                for j in 0..n {
                    let gij = g[r * n + j];
                    if gij != 0.0 {
                        axpy(gij, &bv[j * k..(j + 1) * k], dr);
                    }
                }
            });
            self.acc_with(a, |j| da[j]);
        }
        if self.nodes[b.0].needs_grad {
            let av = self.nodes[a.0].value.clone();
            let mut db = vec![0.0; n * k];
            db.par_chunks_mut(k).enumerate().for_each(|(j, dr)| {
                for r in 0..m {
                    let gij = g[r * n + j];
                    if gij != 0.0 {
                        axpy(gij, &av[r * k..(r + 1) * k], dr);
                    }
                }
            });
            self.acc_with(b, |j| db[j]);
        }
    }

    fn backward_conv1d(
        &mut self,
        out: usize,
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        g: &[f64],
    ) {
        let [_, cin, len]: [usize; 3] = self.nodes[x.0].shape[..].try_into().unwrap();
        let [cout, _, k]: [usize; 3] = self.nodes[w.0].shape[..].try_into().unwrap();
        let lout = self.nodes[out].shape[2];
        let geo = ConvGeometry {
            cin,
            len,
            cout,
            k,
            lout,
            stride,
            pad,
        };
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;

        let dx = self.nodes[x.0].needs_grad.then(|| {
            let mut dx = vec![0.0; xv.len()];
            dx.par_chunks_mut(cin * len)
                .zip(g.par_chunks(cout * lout))
                .for_each(|(dxb, gb)| geo.backward_input(gb, wv, dxb));
            dx
        });
        let dw = self.nodes[w.0].needs_grad.then(|| {
            // per-sample partials summed in batch order keep the result
            // independent of thread scheduling
            let partials: Vec<Vec<f64>> = xv
                .par_chunks(cin * len)
                .zip(g.par_chunks(cout * lout))
                .map(|(xb, gb)| {
                    let mut dw = vec![0.0; wv.len()];
                    geo.backward_weight(xb, gb, &mut dw);
                    dw
                })
                .collect();
            let mut dw = vec![0.0; wv.len()];
            for p in &partials {
                dw.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
            dw
        });
        if let Some(dx) = dx {
            self.acc_with(x, |j| dx[j]);
        }
        if let Some(dw) = dw {
            self.acc_with(w, |j| dw[j]);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    cin: usize,
    len: usize,
    cout: usize,
    k: usize,
    lout: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    /// Output positions `t` whose tap `kk` lands inside the input.
    fn valid_range(&self, kk: usize) -> std::ops::Range<usize> {
        // t * stride + kk - pad in [0, len)
        let lo = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(self.stride)
        };
        let hi_excl = if self.len + self.pad > kk {
            ((self.len + self.pad - kk - 1) / self.stride + 1).min(self.lout)
        } else {
            0
        };
        lo..hi_excl.max(lo)
    }

    /// Column matrix `[(Cin * K) x Lout]`: row `c * K + kk` holds the input
    /// samples tap `kk` of channel `c` sees at every output position.
    fn im2col(&self, xb: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.cin * self.k * self.lout];
        for c in 0..self.cin {
            let xc = &xb[c * self.len..(c + 1) * self.len];
            for kk in 0..self.k {
                let row =
                    &mut cols[(c * self.k + kk) * self.lout..(c * self.k + kk + 1) * self.lout];
                for t in self.valid_range(kk) {
                    row[t] = xc[t * self.stride + kk - self.pad];
                }
            }
        }
        cols
    }

    fn forward(&self, xb: &[f64], w: &[f64], yb: &mut [f64]) {
        let cols = self.im2col(xb);
        let ck = self.cin * self.k;
        for o in 0..self.cout {
            let yo = &mut yb[o * self.lout..(o + 1) * self.lout];
            for (j, &wv) in w[o * ck..(o + 1) * ck].iter().enumerate() {
                if wv != 0.0 {
                    axpy(wv, &cols[j * self.lout..(j + 1) * self.lout], yo);
                }
            }
        }
    }

    fn backward_input(&self, gb: &[f64], w: &[f64], dxb: &mut [f64]) {
        let ck = self.cin * self.k;
        let mut dcols = vec![0.0; ck * self.lout];
        for o in 0..self.cout {
            let go = &gb[o * self.lout..(o + 1) * self.lout];
            for (j, &wv) in w[o * ck..(o + 1) * ck].iter().enumerate() {
                if wv != 0.0 {
                    axpy(wv, go, &mut dcols[j * self.lout..(j + 1) * self.lout]);
                }
            }
        }
        for c in 0..self.cin {
            let dxc = &mut dxb[c * self.len..(c + 1) * self.len];
            for kk in 0..self.k {
                let row = &dcols[(c * self.k + kk) * self.lout..(c * self.k + kk + 1) * self.lout];
                for t in self.valid_range(kk) {
                    dxc[t * self.stride + kk - self.pad] += row[t];
                }
            }
        }
    }

    fn backward_weight(&self, xb: &[f64], gb: &[f64], dw: &mut [f64]) {
        let cols = self.im2col(xb);
        let ck = self.cin * self.k;
        for o in 0..self.cout {
            let go = &gb[o * self.lout..(o + 1) * self.lout];
            for j in 0..ck {
                dw[o * ck + j] += dot(go, &cols[j * self.lout..(j + 1) * self.lout]);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
