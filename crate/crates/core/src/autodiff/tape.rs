//! Append-only computation tape with reverse-mode differentiation.
//!
//! Every operation pushes a node whose inputs all have smaller ids, so the
//! tape is topologically ordered by construction and `backward` is a single
//! reverse sweep.

use std::sync::Arc;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Selector for the generic element-wise entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Transpose(Var),
    Conv1dSame {
        seq: Var,
        kernel: Var,
        bias: Var,
        pad_left: usize,
    },
    MaxOverTime {
        seq: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    SoftmaxRows(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    LstmCell {
        pre: Var,
        c_prev: Var,
        gates: Vec<f64>,
    },
    Bce {
        pred: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
    },
    Nll {
        probs: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
    },
    SumSquares {
        x: Var,
        skip: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Lower clamp applied to every logarithm argument in the loss nodes.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    clamp_events: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    tracked: Vec<bool>,
}

impl Gradients {
    /// Gradient of a tracked node, `None` when the loss does not reach it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros for tracked nodes the loss never reached.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        if !self.tracked[v.0] {
            return None;
        }
        let shape = self.shapes[v.0].clone();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; len])
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of log arguments clamped at [`LOG_CLAMP`] so far.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf sharing storage with a parameter snapshot (no copy).
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_shared(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn elementwise(&mut self, kind: Elementwise, x: Var, y: Option<Var>) -> Result<Var> {
        let binary = |y: Option<Var>| y.ok_or(Error::Contract("binary op needs two inputs".into()));
        match kind {
            Elementwise::Add => self.add(x, binary(y)?),
            Elementwise::Sub => self.sub(x, binary(y)?),
            Elementwise::Mul => self.mul(x, binary(y)?),
            Elementwise::Relu => Ok(self.relu(x)),
            Elementwise::Sigmoid => Ok(self.sigmoid(x)),
        }
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::new(ta.shape().to_vec(), data).expect("shape preserved"))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.map(a, |x| x * factor);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::vector(vec![s]), Op::Sum(a), rg)
    }

    /// `[m×k] × [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = ad[i * k + p];
                if s == 0.0 {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += s * bv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `[m×k] × [k] -> [m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.shape().len() != 2 || tx.shape().len() != 1 || tw.shape()[1] != tx.shape()[0] {
            return Err(Error::dim("matvec", tw.shape(), tx.shape()));
        }
        let k = tw.shape()[1];
        let xd = tx.data();
        let out: Vec<f64> = tw
            .data()
            .chunks_exact(k)
            .map(|r| r.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(&[w, x]);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), rg))
    }

    /// Row-wise affine map `x Wᵀ + b`: `[n×k], [m×k], [m] -> [n×m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(Error::dim("linear", tx.shape(), tw.shape()));
        }
        if tb.shape() != [tw.shape()[0]] {
            return Err(Error::dim("linear bias", tw.shape(), tb.shape()));
        }
        let (n, k, m) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
        let mut out = Vec::with_capacity(n * m);
        for xr in tx.data().chunks_exact(k) {
            for (wr, &bias) in tw.data().chunks_exact(k).zip(tb.data()) {
                out.push(bias + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::dim("transpose", t.shape(), &[0, 0]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let d = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    /// Length-preserving 1-D convolution with zero padding
    /// (left `⌊(k−1)/2⌋`, right `⌈(k−1)/2⌉`).
    ///
    /// `seq: [L×d_in]`, `kernel: [k×d_in×d_out]`, `bias: [d_out]`.
    pub fn conv1d_same(&mut self, seq: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (ts, tk, tb) = (self.value(seq), self.value(kernel), self.value(bias));
        if ts.shape().len() != 2 {
            return Err(Error::Degenerate("conv1d_same expects an [L×d] sequence"));
        }
        if tk.shape().len() != 3 || tk.shape()[1] != ts.shape()[1] {
            return Err(Error::dim("conv1d_same", ts.shape(), tk.shape()));
        }
        if tb.shape() != [tk.shape()[2]] {
            return Err(Error::dim("conv1d_same bias", tk.shape(), tb.shape()));
        }
        let (len, d_in) = (ts.shape()[0], ts.shape()[1]);
        let (width, d_out) = (tk.shape()[0], tk.shape()[2]);
        let pad_left = (width - 1) / 2;
        let (sd, kd) = (ts.data(), tk.data());
        let mut out = Vec::with_capacity(len * d_out);
        for i in 0..len {
            let mut acc = tb.data().to_vec();
            for j in 0..width {
                // padded position i + j maps to input row i + j - pad_left
                let Some(src) = (i + j).checked_sub(pad_left).filter(|&s| s < len) else {
                    continue;
                };
                let xr = &sd[src * d_in..(src + 1) * d_in];
                for (e, &xv) in xr.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let kr = &kd[(j * d_in + e) * d_out..(j * d_in + e + 1) * d_out];
                    for (a, &kv) in acc.iter_mut().zip(kr) {
                        *a += xv * kv;
                    }
                }
            }
            out.extend(acc);
        }
        let rg = self.rg(&[seq, kernel, bias]);
        Ok(self.push(
            Tensor::new(vec![len, d_out], out)?,
            Op::Conv1dSame {
                seq,
                kernel,
                bias,
                pad_left,
            },
            rg,
        ))
    }

    /// Column-wise maximum of `[L×d]`; ties resolve to the first row.
    pub fn max_over_time(&mut self, seq: Var) -> Result<Var> {
        let t = self.value(seq);
        if t.shape().len() != 2 {
            return Err(Error::Degenerate("max_over_time expects an [L×d] sequence"));
        }
        let d = t.shape()[1];
        let mut best = t.row(0).to_vec();
        let mut argmax = vec![0; d];
        for (i, r) in t.data().chunks_exact(d).enumerate().skip(1) {
            for f in 0..d {
                if r[f] > best[f] {
                    best[f] = r[f];
                    argmax[f] = i;
                }
            }
        }
        let rg = self.rg(&[seq]);
        Ok(self.push(Tensor::vector(best), Op::MaxOverTime { seq, argmax }, rg))
    }

    /// Concatenates tensors end to end into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Degenerate("concat of zero parts"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks equal-length vectors as matrix rows.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::Degenerate("stack_rows of zero rows"));
        };
        let d = self.value(first).len();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            if t.len() != d {
                return Err(Error::dim("stack_rows", &[d], t.shape()));
            }
            out.extend_from_slice(t.data());
        }
        let rg = self.rg(rows);
        Ok(self.push(Tensor::new(vec![rows.len(), d], out)?, Op::StackRows(rows.to_vec()), rg))
    }

    /// Contiguous range of the flattened values, as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if len == 0 || start + len > t.len() {
            return Err(Error::Index {
                index: start + len,
                size: t.len(),
            });
        }
        let out = t.data()[start..start + len].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out), Op::Slice { x, start }, rg))
    }

    /// Row `r` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        let t = self.value(x);
        let w = t.cols();
        if r >= t.rows() {
            return Err(Error::Index {
                index: r,
                size: t.rows(),
            });
        }
        self.slice(x, r * w, w)
    }

    /// Numerically stable softmax over the last axis of `[n×k]`.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::dim("softmax_rows", t.shape(), &[0, 0]));
        }
        let k = t.shape()[1];
        let mut out = Vec::with_capacity(t.len());
        for r in t.data().chunks_exact(k) {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| v / z));
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::SoftmaxRows(x), rg))
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { x, mask }, rg))
    }

    /// Selects rows of `table` by id: `[V×d] -> [ids×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if ids.is_empty() {
            return Err(Error::Degenerate("gather with no ids"));
        }
        let (v, d) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index { index: id, size: v });
            }
            out.extend_from_slice(t.row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Gate nonlinearities of one LSTM step.
    ///
    /// `pre` holds the stacked pre-activations `[i, f, g, o]` (`4h`);
    /// the output is `h_t ⊕ c_t` (`2h`).
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Var) -> Result<Var> {
        let (tp, tc) = (self.value(pre), self.value(c_prev));
        let h = tc.len();
        if tp.len() != 4 * h {
            return Err(Error::dim("lstm_cell", tp.shape(), tc.shape()));
        }
        let p = tp.data();
        let mut gates = Vec::with_capacity(4 * h);
        gates.extend(p[..2 * h].iter().map(|&v| sigmoid(v)));
        gates.extend(p[2 * h..3 * h].iter().map(|&v| v.tanh()));
        gates.extend(p[3 * h..].iter().map(|&v| sigmoid(v)));
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let c = f * tc.data()[j] + i * g;
            out[j] = o * c.tanh();
            out[h + j] = c;
        }
        let rg = self.rg(&[pre, c_prev]);
        Ok(self.push(Tensor::vector(out), Op::LstmCell { pre, c_prev, gates }, rg))
    }

    /// Weighted binary cross-entropy, summed:
    /// `−Σ w·[y·ln max(p, ε) + (1−y)·ln max(1−p, ε)]`.
    pub fn bce_sum(&mut self, pred: Var, target: &[f64], weight: &[f64]) -> Result<Var> {
        let t = self.value(pred);
        if t.len() != target.len() || t.len() != weight.len() {
            return Err(Error::dim("bce_sum", t.shape(), &[target.len()]));
        }
        let mut loss = 0.0;
        let mut clamps = 0;
        for ((&p, &y), &w) in t.data().iter().zip(target).zip(weight) {
            if w == 0.0 {
                continue;
            }
            if y != 0.0 {
                clamps += usize::from(p < LOG_CLAMP);
                loss -= w * y * p.max(LOG_CLAMP).ln();
            }
            if y != 1.0 {
                clamps += usize::from(1.0 - p < LOG_CLAMP);
                loss -= w * (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln();
            }
        }
        self.clamp_events += clamps;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::vector(vec![loss]),
            Op::Bce {
                pred,
                target: target.to_vec(),
                weight: weight.to_vec(),
            },
            rg,
        ))
    }

    /// Summed negative log-likelihood of `[n×k]` distributions against
    /// one-hot `target`, with per-row weights.
    pub fn nll_sum(&mut self, probs: Var, target: &[f64], row_weight: &[f64]) -> Result<Var> {
        let t = self.value(probs);
        if t.shape().len() != 2 || t.len() != target.len() || t.rows() != row_weight.len() {
            return Err(Error::dim("nll_sum", t.shape(), &[target.len()]));
        }
        let k = t.cols();
        let mut loss = 0.0;
        let mut clamps = 0;
        let mut weight = vec![0.0; t.len()];
        for (r, &w) in row_weight.iter().enumerate() {
            for c in 0..k {
                let i = r * k + c;
                weight[i] = w;
                let y = target[i];
                if w != 0.0 && y != 0.0 {
                    clamps += usize::from(t.data()[i] < LOG_CLAMP);
                    loss -= w * y * t.data()[i].max(LOG_CLAMP).ln();
                }
            }
        }
        self.clamp_events += clamps;
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::vector(vec![loss]),
            Op::Nll {
                probs,
                target: target.to_vec(),
                weight,
            },
            rg,
        ))
    }

    /// `Σ x²` over all elements after the first `skip`.
    pub fn sum_squares(&mut self, x: Var, skip: usize) -> Var {
        let s = self.value(x).data().iter().skip(skip).map(|v| v * v).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::vector(vec![s]), Op::SumSquares { x, skip }, rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(Error::Index { index: loss.0, size: n });
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        // only leaves keep their gradients
        let tracked: Vec<bool> = self
            .nodes
            .iter()
            .map(|n| n.requires_grad && matches!(n.op, Op::Leaf))
            .collect();
        for (g, &t) in grads.iter_mut().zip(&tracked) {
            if !t {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            tracked,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    for (d, &gi) in accumulate(grads, a.0, g.len()).iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if wants(*b) {
                    for (d, &gi) in accumulate(grads, b.0, g.len()).iter_mut().zip(g) {
                        *d += sign * gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (x, y) in [(*a, *b), (*b, *a)] {
                    if wants(x) {
                        let other = val(y);
                        for ((d, &gi), &o) in accumulate(grads, x.0, g.len()).iter_mut().zip(g).zip(other) {
                            *d += gi * o;
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                for (d, &gi) in accumulate(grads, a.0, g.len()).iter_mut().zip(g) {
                    *d += gi * f;
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                for ((d, &gi), &xv) in accumulate(grads, a.0, g.len()).iter_mut().zip(g).zip(x) {
                    if xv > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Sigmoid(a) => {
                for ((d, &gi), &s) in accumulate(grads, a.0, g.len()).iter_mut().zip(g).zip(out) {
                    *d += gi * s * (1.0 - s);
                }
            }
            Op::Tanh(a) => {
                for ((d, &gi), &t) in accumulate(grads, a.0, g.len()).iter_mut().zip(g).zip(out) {
                    *d += gi * (1.0 - t * t);
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                for d in accumulate(grads, a.0, n).iter_mut() {
                    *d += g[0];
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(*a) {
                    let bd = tb.data();
                    let da = accumulate(grads, a.0, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            da[i * k + p] += (0..n).map(|j| g[i * n + j] * bd[p * n + j]).sum::<f64>();
                        }
                    }
                }
                if wants(*b) {
                    let ad = ta.data();
                    let db = accumulate(grads, b.0, k * n);
                    for i in 0..m {
                        for p in 0..k {
                            let s = ad[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += s * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::MatVec(w, x) => {
                let (tw, tx) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
                let k = tx.len();
                if wants(*w) {
                    let dw = accumulate(grads, w.0, tw.len());
                    for (r, &gi) in dw.chunks_exact_mut(k).zip(g) {
                        for (d, &xv) in r.iter_mut().zip(tx.data()) {
                            *d += gi * xv;
                        }
                    }
                }
                if wants(*x) {
                    let dx = accumulate(grads, x.0, k);
                    for (r, &gi) in tw.data().chunks_exact(k).zip(g) {
                        for (d, &wv) in dx.iter_mut().zip(r) {
                            *d += gi * wv;
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let (k, m) = (tx.shape()[1], tw.shape()[0]);
                if wants(*x) {
                    let dx = accumulate(grads, x.0, tx.len());
                    for (dxr, gr) in dx.chunks_exact_mut(k).zip(g.chunks_exact(m)) {
                        for (wr, &gi) in tw.data().chunks_exact(k).zip(gr) {
                            if gi == 0.0 {
                                continue;
                            }
                            for (d, &wv) in dxr.iter_mut().zip(wr) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
                if wants(*w) {
                    let dw = accumulate(grads, w.0, tw.len());
                    for (xr, gr) in tx.data().chunks_exact(k).zip(g.chunks_exact(m)) {
                        for (dwr, &gi) in dw.chunks_exact_mut(k).zip(gr) {
                            if gi == 0.0 {
                                continue;
                            }
                            for (d, &xv) in dwr.iter_mut().zip(xr) {
                                *d += gi * xv;
                            }
                        }
                    }
                }
                if wants(*b) {
                    let db = accumulate(grads, b.0, m);
                    for gr in g.chunks_exact(m) {
                        for (d, &gi) in db.iter_mut().zip(gr) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let t = &self.nodes[a.0].value;
                let (r, c) = (t.shape()[0], t.shape()[1]);
                let da = accumulate(grads, a.0, r * c);
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Conv1dSame {
                seq,
                kernel,
                bias,
                pad_left,
            } => {
                let (ts, tk) = (&self.nodes[seq.0].value, &self.nodes[kernel.0].value);
                let (len, d_in) = (ts.shape()[0], ts.shape()[1]);
                let (width, d_out) = (tk.shape()[0], tk.shape()[2]);
                let taps = |i: usize, j: usize| (i + j).checked_sub(*pad_left).filter(|&s| s < len);
                if wants(*kernel) {
                    let sd = ts.data();
                    let dk = accumulate(grads, kernel.0, tk.len());
                    for i in 0..len {
                        let gr = &g[i * d_out..(i + 1) * d_out];
                        for j in 0..width {
                            let Some(src) = taps(i, j) else { continue };
                            for e in 0..d_in {
                                let xv = sd[src * d_in + e];
                                if xv == 0.0 {
                                    continue;
                                }
                                let base = (j * d_in + e) * d_out;
                                for (d, &gi) in dk[base..base + d_out].iter_mut().zip(gr) {
                                    *d += xv * gi;
                                }
                            }
                        }
                    }
                }
                if wants(*seq) {
                    let kd = tk.data();
                    let ds = accumulate(grads, seq.0, ts.len());
                    for i in 0..len {
                        let gr = &g[i * d_out..(i + 1) * d_out];
                        for j in 0..width {
                            let Some(src) = taps(i, j) else { continue };
                            for e in 0..d_in {
                                let base = (j * d_in + e) * d_out;
                                ds[src * d_in + e] +=
                                    kd[base..base + d_out].iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
                if wants(*bias) {
                    let db = accumulate(grads, bias.0, d_out);
                    for gr in g.chunks_exact(d_out) {
                        for (d, &gi) in db.iter_mut().zip(gr) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::MaxOverTime { seq, argmax } => {
                let t = &self.nodes[seq.0].value;
                let d = t.shape()[1];
                let ds = accumulate(grads, seq.0, t.len());
                for (f, &row) in argmax.iter().enumerate() {
                    ds[row * d + f] += g[f];
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    if wants(p) {
                        for (d, &gi) in accumulate(grads, p.0, n).iter_mut().zip(&g[off..off + n]) {
                            *d += gi;
                        }
                    }
                    off += n;
                }
            }
            Op::StackRows(rows) => {
                let d = self.nodes[rows[0].0].value.len();
                for (r, &p) in rows.iter().enumerate() {
                    if wants(p) {
                        for (dv, &gi) in accumulate(grads, p.0, d).iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *dv += gi;
                        }
                    }
                }
            }
            Op::Slice { x, start } => {
                let n = self.nodes[x.0].value.len();
                for (d, &gi) in accumulate(grads, x.0, n)[*start..*start + g.len()].iter_mut().zip(g) {
                    *d += gi;
                }
            }
            Op::SoftmaxRows(x) => {
                let k = node.value.cols();
                let dx = accumulate(grads, x.0, g.len());
                for ((dr, gr), sr) in dx.chunks_exact_mut(k).zip(g.chunks_exact(k)).zip(out.chunks_exact(k)) {
                    let dot: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                    for ((d, &gi), &s) in dr.iter_mut().zip(gr).zip(sr) {
                        *d += s * (gi - dot);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                for ((d, &gi), &m) in accumulate(grads, x.0, g.len()).iter_mut().zip(g).zip(mask) {
                    *d += gi * m;
                }
            }
            Op::Gather { table, ids } => {
                let t = &self.nodes[table.0].value;
                let d = t.cols();
                let dt = accumulate(grads, table.0, t.len());
                for (r, &id) in ids.iter().enumerate() {
                    for (dv, &gi) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dv += gi;
                    }
                }
            }
            Op::LstmCell { pre, c_prev, gates } => {
                let cp = val(*c_prev);
                let h = cp.len();
                let mut dpre = vec![0.0; 4 * h];
                let mut dcp = vec![0.0; h];
                for j in 0..h {
                    let (i, f, gg, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let c = out[h + j];
                    let tc = c.tanh();
                    let dh = g[j];
                    let dc = g[h + j] + dh * o * (1.0 - tc * tc);
                    dpre[j] = dc * gg * i * (1.0 - i);
                    dpre[h + j] = dc * cp[j] * f * (1.0 - f);
                    dpre[2 * h + j] = dc * i * (1.0 - gg * gg);
                    dpre[3 * h + j] = dh * tc * o * (1.0 - o);
                    dcp[j] = dc * f;
                }
                if wants(*pre) {
                    for (d, v) in accumulate(grads, pre.0, 4 * h).iter_mut().zip(dpre) {
                        *d += v;
                    }
                }
                if wants(*c_prev) {
                    for (d, v) in accumulate(grads, c_prev.0, h).iter_mut().zip(dcp) {
                        *d += v;
                    }
                }
            }
            Op::Bce { pred, target, weight } => {
                let p = val(*pred);
                let dp = accumulate(grads, pred.0, p.len());
                for i in 0..p.len() {
                    let (w, y, pv) = (weight[i], target[i], p[i]);
                    if w == 0.0 {
                        continue;
                    }
                    // clamped branches are flat
                    let mut d = 0.0;
                    if y != 0.0 && pv >= LOG_CLAMP {
                        d -= y / pv;
                    }
                    if y != 1.0 && 1.0 - pv >= LOG_CLAMP {
                        d += (1.0 - y) / (1.0 - pv);
                    }
                    dp[i] += g[0] * w * d;
                }
            }
            Op::Nll { probs, target, weight } => {
                let p = val(*probs);
                let dp = accumulate(grads, probs.0, p.len());
                for i in 0..p.len() {
                    if weight[i] != 0.0 && target[i] != 0.0 && p[i] >= LOG_CLAMP {
                        dp[i] -= g[0] * weight[i] * target[i] / p[i];
                    }
                }
            }
            Op::SumSquares { x, skip } => {
                let xv = val(*x);
                let dx = accumulate(grads, x.0, xv.len());
                for (d, &v) in dx.iter_mut().zip(xv).skip(*skip) {
                    *d += 2.0 * g[0] * v;
                }
            }
        }
    }
}
