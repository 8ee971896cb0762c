//! Reverse-mode automatic differentiation over f64 matrices.
//!
//! A `Graph` is a per-forward-pass tape: values are computed eagerly at
//! construction, `backward` walks the tape once and accumulates gradients
//! into named leaves. Everything is 64-bit so finite-difference checks
//! are meaningful. Vectors are 1×d matrices; scalars are 1×1.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use crate::ctc;
use crate::error::{Error, Result};

pub type VarId = usize;

enum Op {
    /// Trainable leaf (gradients reported under the name) or anonymous input.
    Leaf(Option<String>),
    /// Input that never needs a gradient.
    Constant,
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    /// Matrix plus a broadcast 1×d row (bias add).
    AddRow(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    /// Value already includes the added constant; gradient passes through.
    AddedConst(VarId),
    Relu(VarId),
    Swish(VarId),
    Sigmoid(VarId),
    Transpose(VarId),
    ConcatCols(Vec<VarId>),
    SliceCols {
        x: VarId,
        start: usize,
    },
    SoftmaxRows(VarId),
    LogSoftmaxRows(VarId),
    LayerNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: f64,
    },
    GatherRows {
        table: VarId,
        ids: Vec<usize>,
    },
    UnfoldRows {
        x: VarId,
        kernel: usize,
        stride: usize,
    },
    /// Per-channel 1-D convolution over rows with zero padding.
    DepthwiseConv {
        x: VarId,
        kernel: VarId,
        pad: usize,
    },
    /// Multiply each row i by mask[i] (0/1 padding masks).
    RowMask {
        x: VarId,
        mask: Vec<f64>,
    },
    /// Gated linear unit over a column split: a * sigmoid(b).
    Glu(VarId),
    Dropout {
        x: VarId,
        mask: Array2<f64>,
    },
    /// Label-smoothed cross-entropy, mean over rows; 1×1 output.
    SmoothedCe {
        logits: VarId,
        targets: Vec<usize>,
        eps: f64,
    },
    /// CTC negative log-likelihood of `label` given log-probs; 1×1 output.
    CtcLoss {
        log_probs: VarId,
        label: Vec<usize>,
    },
    /// Mean squared error against a constant target; 1×1 output.
    Mse {
        pred: VarId,
        target: Array2<f64>,
    },
    /// wa*a + wb*b elementwise.
    AddScaled {
        a: VarId,
        b: VarId,
        wa: f64,
        wb: f64,
    },
    /// Mean of 1×1 scalars.
    MeanOf(Vec<VarId>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every named leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    map: BTreeMap<String, Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|x| x * factor);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        row.mapv_inplace(|v| v - z);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: VarId) -> &Array2<f64> {
        &self.nodes[v].value
    }

    pub fn scalar(&self, v: VarId) -> f64 {
        self.nodes[v].value[(0, 0)]
    }

    pub fn leaf(&mut self, name: &str, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf(Some(name.to_string())))
    }

    pub fn input(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(value, Op::Add(a, b))
    }

    /// x (n×d) plus a broadcast row (1×d).
    pub fn add_row(&mut self, x: VarId, row: VarId) -> VarId {
        debug_assert_eq!(self.nodes[row].value.nrows(), 1);
        let value = &self.nodes[x].value + &self.nodes[row].value;
        self.push(value, Op::AddRow(x, row))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let value = &self.nodes[a].value * &self.nodes[b].value;
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: VarId, s: f64) -> VarId {
        let value = self.nodes[x].value.mapv(|v| v * s);
        self.push(value, Op::Scale(x, s))
    }

    pub fn add_const(&mut self, x: VarId, c: &Array2<f64>) -> VarId {
        let value = &self.nodes[x].value + c;
        self.push(value, Op::AddedConst(x))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let value = self.nodes[x].value.mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn swish(&mut self, x: VarId) -> VarId {
        let value = self.nodes[x].value.mapv(|v| v * sigmoid(v));
        self.push(value, Op::Swish(x))
    }

    pub fn sigmoid_op(&mut self, x: VarId) -> VarId {
        let value = self.nodes[x].value.mapv(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn transpose(&mut self, x: VarId) -> VarId {
        let value = self.nodes[x].value.t().to_owned();
        self.push(value, Op::Transpose(x))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        let rows = self.nodes[parts[0]].value.nrows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.ncols()).sum();
        let mut value = Array2::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            value
                .slice_mut(ndarray::s![.., at..at + v.ncols()])
                .assign(v);
            at += v.ncols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: VarId, start: usize, len: usize) -> VarId {
        let value = self.nodes[x]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        self.push(value, Op::SliceCols { x, start })
    }

    pub fn softmax_rows_op(&mut self, x: VarId) -> VarId {
        let value = softmax_rows(&self.nodes[x].value);
        self.push(value, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows_op(&mut self, x: VarId) -> VarId {
        let value = log_softmax_rows(&self.nodes[x].value);
        self.push(value, Op::LogSoftmaxRows(x))
    }

    pub fn layer_norm(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: f64) -> VarId {
        let xv = &self.nodes[x].value;
        let g = &self.nodes[gamma].value;
        let b = &self.nodes[beta].value;
        let d = xv.ncols() as f64;
        let mut value = xv.clone();
        for mut row in value.rows_mut() {
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[(0, j)] + b[(0, j)];
            }
        }
        self.push(value, Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn gather_rows(&mut self, table: VarId, ids: &[usize]) -> VarId {
        let t = &self.nodes[table].value;
        let mut value = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).assign(&t.row(id));
        }
        self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Sliding windows over rows: output row t is the concatenation of rows
    /// t*stride .. t*stride+kernel. Used to build strided time convolutions.
    pub fn unfold_rows(&mut self, x: VarId, kernel: usize, stride: usize) -> VarId {
        let xv = &self.nodes[x].value;
        let (t_in, d) = xv.dim();
        debug_assert!(t_in >= kernel);
        let t_out = (t_in - kernel) / stride + 1;
        let mut value = Array2::zeros((t_out, kernel * d));
        for t in 0..t_out {
            for j in 0..kernel {
                value
                    .slice_mut(ndarray::s![t, j * d..(j + 1) * d])
                    .assign(&xv.row(t * stride + j));
            }
        }
        self.push(value, Op::UnfoldRows { x, kernel, stride })
    }

    pub fn depthwise_conv(&mut self, x: VarId, kernel: VarId, pad: usize) -> VarId {
        let xv = &self.nodes[x].value;
        let kv = &self.nodes[kernel].value;
        let (t_len, d) = xv.dim();
        let k = kv.nrows();
        debug_assert_eq!(kv.ncols(), d);
        let mut value = Array2::zeros((t_len, d));
        for t in 0..t_len {
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..k {
                    let src = t as isize + j as isize - pad as isize;
                    if src >= 0 && (src as usize) < t_len {
                        acc += kv[(j, c)] * xv[(src as usize, c)];
                    }
                }
                value[(t, c)] = acc;
            }
        }
        self.push(value, Op::DepthwiseConv { x, kernel, pad })
    }

    pub fn row_mask(&mut self, x: VarId, mask: &[f64]) -> VarId {
        let xv = &self.nodes[x].value;
        debug_assert_eq!(xv.nrows(), mask.len());
        let mut value = xv.clone();
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v * mask[i]);
        }
        self.push(
            value,
            Op::RowMask {
                x,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn glu(&mut self, x: VarId) -> VarId {
        let xv = &self.nodes[x].value;
        let d = xv.ncols() / 2;
        debug_assert_eq!(xv.ncols(), 2 * d);
        let mut value = Array2::zeros((xv.nrows(), d));
        for i in 0..xv.nrows() {
            for j in 0..d {
                value[(i, j)] = xv[(i, j)] * sigmoid(xv[(i, j + d)]);
            }
        }
        self.push(value, Op::Glu(x))
    }

    pub fn dropout(&mut self, x: VarId, mask: Array2<f64>) -> VarId {
        let value = &self.nodes[x].value * &mask;
        self.push(value, Op::Dropout { x, mask })
    }

    /// Mean over positions of cross-entropy against the smoothed
    /// distribution q = (1-eps)*onehot + eps*uniform.
    pub fn smoothed_ce(&mut self, logits: VarId, targets: &[usize], eps: f64) -> VarId {
        let lv = &self.nodes[logits].value;
        debug_assert_eq!(lv.nrows(), targets.len());
        let v = lv.ncols() as f64;
        let logp = log_softmax_rows(lv);
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let mut row_loss = 0.0;
            for j in 0..lv.ncols() {
                let q = if j == t { 1.0 - eps + eps / v } else { eps / v };
                row_loss -= q * logp[(i, j)];
            }
            loss += row_loss;
        }
        loss /= targets.len() as f64;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SmoothedCe {
                logits,
                targets: targets.to_vec(),
                eps,
            },
        )
    }

    /// CTC loss of `label` given per-frame log-probabilities. Errors if the
    /// label is infeasible for the frame count (checked upstream by the
    /// batch builder).
    pub fn ctc_loss(&mut self, log_probs: VarId, label: &[usize]) -> Result<VarId> {
        let lp = &self.nodes[log_probs].value;
        match ctc::ctc_loss(lp, label)? {
            ctc::CtcOutcome::Finite(loss) => Ok(self.push(
                Array2::from_elem((1, 1), loss),
                Op::CtcLoss {
                    log_probs,
                    label: label.to_vec(),
                },
            )),
            ctc::CtcOutcome::Infeasible => Err(Error::Train(format!(
                "CTC label of length {} infeasible for {} frames",
                label.len(),
                lp.nrows()
            ))),
        }
    }

    pub fn mse(&mut self, pred: VarId, target: &Array2<f64>) -> VarId {
        let pv = &self.nodes[pred].value;
        debug_assert_eq!(pv.dim(), target.dim());
        let n = (pv.nrows() * pv.ncols()) as f64;
        let loss = pv
            .iter()
            .zip(target.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        )
    }

    pub fn add_scaled(&mut self, a: VarId, b: VarId, wa: f64, wb: f64) -> VarId {
        let value = self.nodes[a].value.mapv(|v| v * wa) + self.nodes[b].value.mapv(|v| v * wb);
        self.push(value, Op::AddScaled { a, b, wa, wb })
    }

    pub fn mean_of(&mut self, scalars: &[VarId]) -> VarId {
        let n = scalars.len() as f64;
        let sum: f64 = scalars.iter().map(|&s| self.scalar(s)).sum();
        self.push(
            Array2::from_elem((1, 1), sum / n),
            Op::MeanOf(scalars.to_vec()),
        )
    }

    /// Backpropagates from a scalar loss, returning gradients for named leaves.
    pub fn backward(&self, loss: VarId) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss] = Some(Array2::ones(self.nodes[loss].value.dim()));
        let mut out = Gradients::default();

        fn acc(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
            match slot {
                Some(g) => *g += &delta,
                None => *slot = Some(delta),
            }
        }

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf(Some(name)) => {
                    let entry = out
                        .map
                        .entry(name.clone())
                        .or_insert_with(|| Array2::zeros(g.dim()));
                    *entry += &g;
                }
                Op::Leaf(None) | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[*b].value.t());
                    let db = self.nodes[*a].value.t().dot(&g);
                    acc(&mut grads[*a], da);
                    acc(&mut grads[*b], db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*a], g.clone());
                    acc(&mut grads[*b], g);
                }
                Op::AddRow(x, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads[*x], g);
                    acc(&mut grads[*row], dr);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[*b].value;
                    let db = &g * &self.nodes[*a].value;
                    acc(&mut grads[*a], da);
                    acc(&mut grads[*b], db);
                }
                Op::Scale(x, s) => {
                    acc(&mut grads[*x], g.mapv(|v| v * s));
                }
                Op::AddedConst(x) => {
                    acc(&mut grads[*x], g);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[*x].value;
                    let dx = Array2::from_shape_fn(g.dim(), |(i, j)| {
                        if xv[(i, j)] > 0.0 {
                            g[(i, j)]
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads[*x], dx);
                }
                Op::Swish(x) => {
                    let xv = &self.nodes[*x].value;
                    let dx = Array2::from_shape_fn(g.dim(), |(i, j)| {
                        let s = sigmoid(xv[(i, j)]);
                        g[(i, j)] * (s + xv[(i, j)] * s * (1.0 - s))
                    });
                    acc(&mut grads[*x], dx);
                }
                Op::Sigmoid(x) => {
                    let sv = &self.nodes[id].value;
                    let dx = Array2::from_shape_fn(g.dim(), |(i, j)| {
                        g[(i, j)] * sv[(i, j)] * (1.0 - sv[(i, j)])
                    });
                    acc(&mut grads[*x], dx);
                }
                Op::Transpose(x) => {
                    acc(&mut grads[*x], g.t().to_owned());
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        let slice = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        acc(&mut grads[p], slice);
                        at += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Array2::zeros(xv.dim());
                    dx.slice_mut(ndarray::s![.., *start..*start + g.ncols()])
                        .assign(&g);
                    acc(&mut grads[*x], dx);
                }
                Op::SoftmaxRows(x) => {
                    let s = &self.nodes[id].value;
                    let mut dx = Array2::zeros(g.dim());
                    for i in 0..g.nrows() {
                        let dot: f64 = (0..g.ncols()).map(|j| g[(i, j)] * s[(i, j)]).sum();
                        for j in 0..g.ncols() {
                            dx[(i, j)] = s[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    acc(&mut grads[*x], dx);
                }
                Op::LogSoftmaxRows(x) => {
                    let logp = &self.nodes[id].value;
                    let mut dx = Array2::zeros(g.dim());
                    for i in 0..g.nrows() {
                        let gsum: f64 = g.row(i).iter().sum();
                        for j in 0..g.ncols() {
                            dx[(i, j)] = g[(i, j)] - logp[(i, j)].exp() * gsum;
                        }
                    }
                    acc(&mut grads[*x], dx);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let xv = &self.nodes[*x].value;
                    let gam = &self.nodes[*gamma].value;
                    let d = xv.ncols();
                    let df = d as f64;
                    let mut dx = Array2::zeros(xv.dim());
                    let mut dgamma = Array2::zeros((1, d));
                    let mut dbeta = Array2::zeros((1, d));
                    for i in 0..xv.nrows() {
                        let row = xv.row(i);
                        let mean = row.iter().sum::<f64>() / df;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                        let inv = 1.0 / (var + eps).sqrt();
                        // h = dy * gamma; dx = inv*(h - mean(h) - xhat*mean(h*xhat))
                        let mut h_mean = 0.0;
                        let mut hx_mean = 0.0;
                        for j in 0..d {
                            let xhat = (xv[(i, j)] - mean) * inv;
                            let h = g[(i, j)] * gam[(0, j)];
                            h_mean += h;
                            hx_mean += h * xhat;
                            dgamma[(0, j)] += g[(i, j)] * xhat;
                            dbeta[(0, j)] += g[(i, j)];
                        }
                        h_mean /= df;
                        hx_mean /= df;
                        for j in 0..d {
                            let xhat = (xv[(i, j)] - mean) * inv;
                            let h = g[(i, j)] * gam[(0, j)];
                            dx[(i, j)] = inv * (h - h_mean - xhat * hx_mean);
                        }
                    }
                    acc(&mut grads[*x], dx);
                    acc(&mut grads[*gamma], dgamma);
                    acc(&mut grads[*beta], dbeta);
                }
                Op::GatherRows { table, ids } => {
                    let tv = &self.nodes[*table].value;
                    let mut dt = Array2::zeros(tv.dim());
                    for (i, &idx) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(idx);
                        row += &g.row(i);
                    }
                    acc(&mut grads[*table], dt);
                }
                Op::UnfoldRows { x, kernel, stride } => {
                    let xv = &self.nodes[*x].value;
                    let d = xv.ncols();
                    let mut dx = Array2::zeros(xv.dim());
                    for t in 0..g.nrows() {
                        for j in 0..*kernel {
                            let mut row = dx.row_mut(t * stride + j);
                            row += &g.slice(ndarray::s![t, j * d..(j + 1) * d]);
                        }
                    }
                    acc(&mut grads[*x], dx);
                }
                Op::DepthwiseConv { x, kernel, pad } => {
                    let xv = &self.nodes[*x].value;
                    let kv = &self.nodes[*kernel].value;
                    let (t_len, d) = xv.dim();
                    let k = kv.nrows();
                    let mut dx = Array2::zeros((t_len, d));
                    let mut dk = Array2::zeros((k, d));
                    for t in 0..t_len {
                        for j in 0..k {
                            let src = t as isize + j as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t_len {
                                let src = src as usize;
                                for c in 0..d {
                                    dx[(src, c)] += kv[(j, c)] * g[(t, c)];
                                    dk[(j, c)] += xv[(src, c)] * g[(t, c)];
                                }
                            }
                        }
                    }
                    acc(&mut grads[*x], dx);
                    acc(&mut grads[*kernel], dk);
                }
                Op::RowMask { x, mask } => {
                    let mut dx = g.clone();
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        row.mapv_inplace(|v| v * mask[i]);
                    }
                    acc(&mut grads[*x], dx);
                }
                Op::Glu(x) => {
                    let xv = &self.nodes[*x].value;
                    let d = g.ncols();
                    let mut dx = Array2::zeros(xv.dim());
                    for i in 0..g.nrows() {
                        for j in 0..d {
                            let a = xv[(i, j)];
                            let s = sigmoid(xv[(i, j + d)]);
                            dx[(i, j)] = g[(i, j)] * s;
                            dx[(i, j + d)] = g[(i, j)] * a * s * (1.0 - s);
                        }
                    }
                    acc(&mut grads[*x], dx);
                }
                Op::Dropout { x, mask } => {
                    acc(&mut grads[*x], &g * mask);
                }
                Op::SmoothedCe { logits, targets, eps } => {
                    let lv = &self.nodes[*logits].value;
                    let v = lv.ncols() as f64;
                    let p = softmax_rows(lv);
                    let gs = g[(0, 0)] / targets.len() as f64;
                    let mut dl = Array2::zeros(lv.dim());
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..lv.ncols() {
                            let q = if j == t { 1.0 - eps + eps / v } else { eps / v };
                            dl[(i, j)] = gs * (p[(i, j)] - q);
                        }
                    }
                    acc(&mut grads[*logits], dl);
                }
                Op::CtcLoss { log_probs, label } => {
                    let lp = &self.nodes[*log_probs].value;
                    let (_, grad) = ctc::ctc_loss_with_grad(lp, label)
                        .expect("validated at construction")
                        .expect("validated at construction");
                    acc(&mut grads[*log_probs], grad.mapv(|v| v * g[(0, 0)]));
                }
                Op::Mse { pred, target } => {
                    let pv = &self.nodes[*pred].value;
                    let n = (pv.nrows() * pv.ncols()) as f64;
                    let gs = g[(0, 0)] * 2.0 / n;
                    let dp = (pv - target).mapv(|v| v * gs);
                    acc(&mut grads[*pred], dp);
                }
                Op::AddScaled { a, b, wa, wb } => {
                    acc(&mut grads[*a], g.mapv(|v| v * wa));
                    acc(&mut grads[*b], g.mapv(|v| v * wb));
                }
                Op::MeanOf(parts) => {
                    let share = g[(0, 0)] / parts.len() as f64;
                    for &p in parts {
                        acc(&mut grads[p], Array2::from_elem((1, 1), share));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of a scalar-valued graph builder with
    /// respect to one named leaf.
    fn fd_check<F>(build: F, leaf_value: &Array2<f64>, tol: f64)
    where
        F: Fn(&mut Graph, VarId) -> VarId,
    {
        let mut g = Graph::new();
        let x = g.leaf("x", leaf_value.clone());
        let loss = build(&mut g, x);
        let grads = g.backward(loss);
        let analytic = grads.get("x").expect("leaf participates").clone();

        let h = 1e-6;
        for i in 0..leaf_value.nrows() {
            for j in 0..leaf_value.ncols() {
                let mut plus = leaf_value.clone();
                plus[(i, j)] += h;
                let mut minus = leaf_value.clone();
                minus[(i, j)] -= h;
                let mut gp = Graph::new();
                let xp = gp.leaf("x", plus);
                let lp = build(&mut gp, xp);
                let mut gm = Graph::new();
                let xm = gm.leaf("x", minus);
                let lm = build(&mut gm, xm);
                let fd = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * h);
                let an = analytic[(i, j)];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < tol,
                    "grad mismatch at ({i},{j}): fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn fd_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_mat(&mut rng, 4, 3);
        let q = rand_mat(&mut rng, 3, 4);
        fd_check(
            move |g, x| {
                let wv = g.input(w.clone());
                let qv = g.input(q.clone());
                let y = g.matmul(x, wv);
                let y = g.swish(y);
                let y = g.matmul(y, qv);
                let sm = g.softmax_rows_op(y);
                let lsm = g.log_softmax_rows_op(y);
                let prod = g.mul(sm, lsm);
                let flat = g.mse(prod, &Array2::zeros((2, 4)));
                flat
            },
            &rand_mat(&mut ChaCha8Rng::seed_from_u64(2), 2, 4),
            1e-4,
        );
    }

    #[test]
    fn fd_layer_norm_and_glu() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gamma = rand_mat(&mut rng, 1, 6).mapv(|v| v + 1.5);
        let beta = rand_mat(&mut rng, 1, 6);
        fd_check(
            move |g, x| {
                let ga = g.input(gamma.clone());
                let be = g.input(beta.clone());
                let ln = g.layer_norm(x, ga, be, 1e-5);
                let gl = g.glu(ln);
                g.mse(gl, &Array2::from_elem((3, 3), 0.3))
            },
            &rand_mat(&mut ChaCha8Rng::seed_from_u64(4), 3, 6),
            1e-4,
        );
    }

    #[test]
    fn fd_depthwise_and_unfold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kernel = rand_mat(&mut rng, 3, 4);
        let proj = rand_mat(&mut rng, 8, 2);
        fd_check(
            move |g, x| {
                let k = g.input(kernel.clone());
                let dw = g.depthwise_conv(x, k, 1);
                let un = g.unfold_rows(dw, 2, 2);
                let p = g.input(proj.clone());
                let y = g.matmul(un, p);
                g.mse(y, &Array2::zeros((3, 2)))
            },
            &rand_mat(&mut ChaCha8Rng::seed_from_u64(6), 6, 4),
            1e-4,
        );
    }

    #[test]
    fn fd_smoothed_ce_and_gather() {
        fd_check(
            |g, x| {
                let ids = vec![0usize, 2, 1, 2];
                let rows = g.gather_rows(x, &ids);
                g.smoothed_ce(rows, &[1, 0, 2, 2], 0.1)
            },
            &rand_mat(&mut ChaCha8Rng::seed_from_u64(7), 3, 4),
            1e-4,
        );
    }

    #[test]
    fn fd_ctc_loss() {
        let logits = rand_mat(&mut ChaCha8Rng::seed_from_u64(8), 5, 4);
        fd_check(
            |g, x| {
                let lp = g.log_softmax_rows_op(x);
                g.ctc_loss(lp, &[1, 2, 1]).unwrap()
            },
            &logits,
            1e-4,
        );
    }

    #[test]
    fn grad_accumulates_over_shared_leaf() {
        let mut g = Graph::new();
        let x = g.leaf("x", Array2::from_elem((1, 1), 3.0));
        let a = g.scale(x, 2.0);
        let b = g.scale(x, 5.0);
        let s = g.add(a, b);
        let grads = g.backward(s);
        assert_eq!(grads.get("x").unwrap()[(0, 0)], 7.0);
    }
}
