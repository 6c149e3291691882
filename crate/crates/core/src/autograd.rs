//! Reverse-mode automatic differentiation over dense `f64` buffers.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are stored in
//! creation order, so a single reverse sweep visits each node after all of its
//! consumers. Layouts are row-major; convolutional features are `[B, C, L]` and
//! recurrent sequences are `[B, L, D]`.

use alloc::vec;
use alloc::vec::Vec;
use core::mem;

use crate::linalg::gemm;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride, dilation and zero padding of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeometry {
    pub const fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            dilation: 1,
            pad_left: (kernel - 1) / 2,
            pad_right: (kernel - 1) / 2,
        }
    }

    pub const fn causal(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            pad_left: (kernel - 1) * dilation,
            pad_right: 0,
        }
    }

    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let padded = len + self.pad_left + self.pad_right;
        let span = self.dilation * (kernel.max(1) - 1) + 1;
        if padded < span || self.stride == 0 {
            None
        } else {
            Some((padded - span) / self.stride + 1)
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MeanTime(Var),
    ChannelGate {
        x: Var,
        gate: Var,
    },
    Reshape(Var),
    SwapLast2(Var),
    SelectStep {
        x: Var,
        t: usize,
    },
    LastStep(Var),
    Stack(Vec<Var>),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    Softmax(Var),
    WeightedSum {
        x: Var,
        w: Var,
    },
    LstmCell {
        gates: Var,
        c_prev: Var,
        acts: Vec<f64>,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<f64>,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Vec<f64>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
}

/// Per-channel statistics observed by a batch-statistics normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Splits `[d0, d1, ..., last]` into `(rows, last)`.
fn rows_last(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().expect("scalar shape");
    (shape.iter().product::<usize>() / last.max(1), last)
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { value, shape, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>, shape: &[usize]) -> Var {
        assert_eq!(value.len(), shape.iter().product::<usize>(), "leaf shape");
        self.push(value, shape.to_vec(), Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.leaf(vec![0.0; shape.iter().product()], shape)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(value, shape, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(value, shape, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(value, shape, Op::Mul(a, b))
    }

    /// Elementwise product with a constant (used for dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Var {
        assert_eq!(self.value(x).len(), mask.len());
        let value = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        self.push(value, shape, Op::MulConst(x, mask))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, libm::tanh, Op::Tanh(x))
    }

    /// `x [.., I] · wᵀ + b` with `w` stored `[O, I]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (rows, inp) = rows_last(self.shape(x));
        let ws = self.shape(w);
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[1], inp, "linear input width");
        let out = ws[0];
        let mut value = vec![0.0; rows * out];
        gemm(rows, inp, out, self.value(x), false, self.value(w), true, &mut value, false);
        if let Some(b) = b {
            let bias = self.value(b);
            for row in value.chunks_mut(out) {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = out;
        self.push(value, shape, Op::Linear { x, w, b })
    }

    /// Convolution of `x [B, Ci, L]` with `w [Co, Ci, K]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Var {
        let xs = self.shape(x);
        assert_eq!(xs.len(), 3, "conv1d expects [B, C, L]");
        let (batch, cin, len) = (xs[0], xs[1], xs[2]);
        let ws = self.shape(w);
        assert_eq!(ws[1], cin, "conv1d input channels");
        let (cout, kernel) = (ws[0], ws[2]);
        let lout = geom.output_len(len, kernel).expect("conv1d: kernel wider than padded input");
        let mut cols = vec![0.0; cin * kernel * lout];
        let mut value = vec![0.0; batch * cout * lout];
        for bi in 0..batch {
            let xb = &self.value(x)[bi * cin * len..(bi + 1) * cin * len];
            im2col(xb, cin, len, kernel, lout, geom, &mut cols);
            gemm(
                cout,
                cin * kernel,
                lout,
                self.value(w),
                false,
                &cols,
                false,
                &mut value[bi * cout * lout..(bi + 1) * cout * lout],
                false,
            );
        }
        if let Some(b) = b {
            let bias = self.value(b);
            for chunk in value.chunks_mut(lout).enumerate() {
                let c = chunk.0 % cout;
                chunk.1.iter_mut().for_each(|v| *v += bias[c]);
            }
        }
        self.push(value, vec![batch, cout, lout], Op::Conv1d { x, w, b, geom })
    }

    /// Per-channel normalization of `[B, C, L]` (or `[B, C]`).
    ///
    /// With `running = None` the batch statistics are used and returned;
    /// otherwise the supplied `(mean, var)` are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> (Var, Option<BatchStats>) {
        let shape = self.shape(x).to_vec();
        let (batch, ch) = (shape[0], shape[1]);
        let len = if shape.len() == 3 { shape[2] } else { 1 };
        let n = (batch * len) as f64;
        let xv = self.value(x);
        let (mean, var, batch_stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for b in 0..batch {
                    for c in 0..ch {
                        let s = &xv[(b * ch + c) * len..(b * ch + c + 1) * len];
                        mean[c] += s.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for b in 0..batch {
                    for c in 0..ch {
                        let s = &xv[(b * ch + c) * len..(b * ch + c + 1) * len];
                        var[c] += s.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let g = self.value(gamma);
        let be = self.value(beta);
        let mut xhat = vec![0.0; xv.len()];
        let mut value = vec![0.0; xv.len()];
        for b in 0..batch {
            for c in 0..ch {
                for t in 0..len {
                    let i = (b * ch + c) * len + t;
                    xhat[i] = (xv[i] - mean[c]) * inv_std[c];
                    value[i] = g[c] * xhat[i] + be[c];
                }
            }
        }
        let stats = batch_stats.then_some(BatchStats { mean, var });
        let v = self.push(value, shape, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats });
        (v, stats)
    }

    /// Mean over the trailing time axis: `[B, C, L] -> [B, C]`.
    pub fn mean_time(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let len = s[2];
        let value = self.value(x).chunks(len).map(|c| c.iter().sum::<f64>() / len as f64).collect();
        self.push(value, vec![s[0], s[1]], Op::MeanTime(x))
    }

    /// `x [B, C, L] * gate [B, C]` broadcast over time.
    pub fn channel_gate(&mut self, x: Var, gate: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(self.shape(gate), &s[..2], "channel gate shape");
        let len = s[2];
        let g = self.value(gate);
        let value = self
            .value(x)
            .chunks(len)
            .zip(g)
            .flat_map(|(c, gv)| c.iter().map(move |v| v * gv))
            .collect();
        self.push(value, s, Op::ChannelGate { x, gate })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.value(x).len(), "reshape size");
        let value = self.value(x).to_vec();
        self.push(value, shape.to_vec(), Op::Reshape(x))
    }

    /// `[B, A, C] -> [B, C, A]`.
    pub fn swap_last2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (b, a, c) = (s[0], s[1], s[2]);
        let xv = self.value(x);
        let mut value = vec![0.0; xv.len()];
        for bi in 0..b {
            for i in 0..a {
                for j in 0..c {
                    value[(bi * c + j) * a + i] = xv[(bi * a + i) * c + j];
                }
            }
        }
        self.push(value, vec![b, c, a], Op::SwapLast2(x))
    }

    /// `[B, L, D] -> [B, D]` at step `t`.
    pub fn select_step(&mut self, x: Var, t: usize) -> Var {
        let s = self.shape(x).to_vec();
        let (b, l, d) = (s[0], s[1], s[2]);
        assert!(t < l);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(b * d);
        for bi in 0..b {
            value.extend_from_slice(&xv[(bi * l + t) * d..(bi * l + t + 1) * d]);
        }
        self.push(value, vec![b, d], Op::SelectStep { x, t })
    }

    /// Last position of the time axis: `[B, C, L] -> [B, C]`.
    pub fn last_step(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let len = s[2];
        let value = self.value(x).chunks(len).map(|c| c[len - 1]).collect();
        self.push(value, vec![s[0], s[1]], Op::LastStep(x))
    }

    /// Stacks `L` tensors of shape `[B, D]` into `[B, L, D]`.
    pub fn stack(&mut self, steps: Vec<Var>) -> Var {
        let s = self.shape(steps[0]).to_vec();
        let (b, d, l) = (s[0], s[1], steps.len());
        let mut value = vec![0.0; b * l * d];
        for (t, &v) in steps.iter().enumerate() {
            assert_eq!(self.shape(v), &s[..]);
            let sv = self.value(v);
            for bi in 0..b {
                value[(bi * l + t) * d..(bi * l + t + 1) * d].copy_from_slice(&sv[bi * d..(bi + 1) * d]);
            }
        }
        self.push(value, vec![b, l, d], Op::Stack(steps))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        let lead = &self.shape(parts[0])[..self.shape(parts[0]).len() - 1];
        let mut shape = lead.to_vec();
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| *self.shape(p).last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut value = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            for r in 0..rows {
                value[r * total + off..r * total + off + w].copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            off += w;
        }
        shape.push(total);
        self.push(value, shape, Op::Concat(parts))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (rows, d) = rows_last(self.shape(x));
        assert!(start + len <= d);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&xv[r * d + start..r * d + start + len]);
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(value, shape, Op::Slice { x, start, len })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, d) = rows_last(self.shape(x));
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(d) {
            softmax_in_place(row);
        }
        let shape = self.shape(x).to_vec();
        self.push(value, shape, Op::Softmax(x))
    }

    /// `Σ_t w[b, t] · x[b, t, :]`: `[B, L, D] × [B, L] -> [B, D]`.
    pub fn weighted_sum(&mut self, x: Var, w: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (b, l, d) = (s[0], s[1], s[2]);
        assert_eq!(self.shape(w), &[b, l]);
        let (xv, wv) = (self.value(x), self.value(w));
        let mut value = vec![0.0; b * d];
        for bi in 0..b {
            for t in 0..l {
                let a = wv[bi * l + t];
                let row = &xv[(bi * l + t) * d..(bi * l + t + 1) * d];
                value[bi * d..(bi + 1) * d].iter_mut().zip(row).for_each(|(o, v)| *o += a * v);
            }
        }
        self.push(value, vec![b, d], Op::WeightedSum { x, w })
    }

    /// One LSTM cell update from pre-activation gates `[B, 4H]` (order
    /// input, forget, cell, output) and the previous cell state `[B, H]`.
    /// Returns `[B, 2H]` holding `h` then `c`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Var {
        let gs = self.shape(gates).to_vec();
        let (b, h4) = (gs[0], gs[1]);
        let h = h4 / 4;
        assert_eq!(self.shape(c_prev), &[b, h]);
        let (gv, cv) = (self.value(gates), self.value(c_prev));
        // acts per row: i, f, g, o, tanh(c)
        let mut acts = vec![0.0; b * 5 * h];
        let mut value = vec![0.0; b * 2 * h];
        for bi in 0..b {
            let g = &gv[bi * h4..(bi + 1) * h4];
            let a = &mut acts[bi * 5 * h..(bi + 1) * 5 * h];
            for j in 0..h {
                let i_g = sigmoid(g[j]);
                let f_g = sigmoid(g[h + j]);
                let g_g = libm::tanh(g[2 * h + j]);
                let o_g = sigmoid(g[3 * h + j]);
                let c = f_g * cv[bi * h + j] + i_g * g_g;
                let tc = libm::tanh(c);
                a[j] = i_g;
                a[h + j] = f_g;
                a[2 * h + j] = g_g;
                a[3 * h + j] = o_g;
                a[4 * h + j] = tc;
                value[bi * 2 * h + j] = o_g * tc;
                value[bi * 2 * h + h + j] = c;
            }
        }
        self.push(value, vec![b, 2 * h], Op::LstmCell { gates, c_prev, acts })
    }

    /// Weight normalization `w[o] = g[o] · v[o] / ‖v[o]‖` over the leading axis.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Var {
        let shape = self.shape(v).to_vec();
        let rows = shape[0];
        let per = self.value(v).len() / rows;
        assert_eq!(self.shape(g), &[rows]);
        let (vv, gv) = (self.value(v), self.value(g));
        let mut norms = vec![0.0; rows];
        let mut value = vec![0.0; vv.len()];
        for o in 0..rows {
            let row = &vv[o * per..(o + 1) * per];
            let n = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            norms[o] = n;
            for (out, x) in value[o * per..(o + 1) * per].iter_mut().zip(row) {
                *out = gv[o] * x / n;
            }
        }
        self.push(value, shape, Op::WeightNorm { v, g, norms })
    }

    /// Mean soft-label cross-entropy of `logits [B, K]` against `targets [B, K]`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let s = self.shape(logits).to_vec();
        let (b, k) = (s[0], s[1]);
        assert_eq!(targets.len(), b * k);
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        for (row, t) in probs.chunks_mut(k).zip(targets.chunks(k)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            loss -= row.iter().zip(t).map(|(z, ti)| ti * (z - lse)).sum::<f64>();
            softmax_in_place(row);
        }
        self.push(vec![loss / b as f64], vec![1], Op::SoftCrossEntropy { logits, targets, probs })
    }

    /// Reverse sweep from the scalar `loss`. Returns gradients for every node
    /// that influences it (empty vectors elsewhere).
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward from a scalar");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = g;
            }
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, nodes, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(acc!(*a), g);
                add_into(acc!(*b), g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc!(*a).iter_mut().zip(g.iter().zip(bv)).for_each(|(o, (g, y))| *o += g * y);
                acc!(*b).iter_mut().zip(g.iter().zip(av)).for_each(|(o, (g, x))| *o += g * x);
            }
            Op::MulConst(x, mask) => {
                acc!(*x).iter_mut().zip(g.iter().zip(mask)).for_each(|(o, (g, m))| *o += g * m);
            }
            Op::Relu(x) => {
                let out = &node.value;
                acc!(*x).iter_mut().zip(g.iter().zip(out)).for_each(|(o, (g, y))| {
                    if *y > 0.0 {
                        *o += g
                    }
                });
            }
            Op::Sigmoid(x) => {
                let out = &node.value;
                acc!(*x).iter_mut().zip(g.iter().zip(out)).for_each(|(o, (g, y))| *o += g * y * (1.0 - y));
            }
            Op::Tanh(x) => {
                let out = &node.value;
                acc!(*x).iter_mut().zip(g.iter().zip(out)).for_each(|(o, (g, y))| *o += g * (1.0 - y * y));
            }
            Op::Linear { x, w, b } => {
                let (rows, inp) = rows_last(&nodes[x.0].shape);
                let out = nodes[w.0].shape[0];
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                gemm(rows, out, inp, g, false, wv, false, acc!(*x), true);
                gemm(out, rows, inp, g, true, xv, false, acc!(*w), true);
                if let Some(b) = b {
                    let gb = acc!(*b);
                    for row in g.chunks(out) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let xs = &nodes[x.0].shape;
                let (batch, cin, len) = (xs[0], xs[1], xs[2]);
                let (cout, kernel) = (nodes[w.0].shape[0], nodes[w.0].shape[2]);
                let lout = node.shape[2];
                let ck = cin * kernel;
                let mut cols = vec![0.0; ck * lout];
                let mut dcols = vec![0.0; ck * lout];
                let xv = &nodes[x.0].value;
                let wv = &nodes[w.0].value;
                {
                    let gw = acc!(*w);
                    for bi in 0..batch {
                        im2col(&xv[bi * cin * len..(bi + 1) * cin * len], cin, len, kernel, lout, *geom, &mut cols);
                        let gb = &g[bi * cout * lout..(bi + 1) * cout * lout];
                        gemm(cout, lout, ck, gb, false, &cols, true, gw, true);
                    }
                }
                let gx = acc!(*x);
                for bi in 0..batch {
                    let gb = &g[bi * cout * lout..(bi + 1) * cout * lout];
                    gemm(ck, cout, lout, wv, true, gb, false, &mut dcols, false);
                    col2im(&dcols, cin, len, kernel, lout, *geom, &mut gx[bi * cin * len..(bi + 1) * cin * len]);
                }
                if let Some(b) = b {
                    let gbias = acc!(*b);
                    for (idx, chunk) in g.chunks(lout).enumerate() {
                        gbias[idx % cout] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let s = &node.shape;
                let (batch, ch) = (s[0], s[1]);
                let len = if s.len() == 3 { s[2] } else { 1 };
                let n = (batch * len) as f64;
                let mut sum_g = vec![0.0; ch];
                let mut sum_gx = vec![0.0; ch];
                for bi in 0..batch {
                    for c in 0..ch {
                        for t in 0..len {
                            let idx = (bi * ch + c) * len + t;
                            sum_g[c] += g[idx];
                            sum_gx[c] += g[idx] * xhat[idx];
                        }
                    }
                }
                add_into(acc!(*gamma), &sum_gx);
                add_into(acc!(*beta), &sum_g);
                let gam = &nodes[gamma.0].value;
                let gx = acc!(*x);
                for bi in 0..batch {
                    for c in 0..ch {
                        for t in 0..len {
                            let idx = (bi * ch + c) * len + t;
                            gx[idx] += if *batch_stats {
                                gam[c] * inv_std[c] / n * (n * g[idx] - sum_g[c] - xhat[idx] * sum_gx[c])
                            } else {
                                gam[c] * inv_std[c] * g[idx]
                            };
                        }
                    }
                }
            }
            Op::MeanTime(x) => {
                let len = nodes[x.0].shape[2];
                let gx = acc!(*x);
                for (chunk, gv) in gx.chunks_mut(len).zip(g) {
                    chunk.iter_mut().for_each(|o| *o += gv / len as f64);
                }
            }
            Op::ChannelGate { x, gate } => {
                let len = node.shape[2];
                let (xv, gtv) = (&nodes[x.0].value, &nodes[gate.0].value);
                {
                    let gx = acc!(*x);
                    for ((chunk, gc), gt) in gx.chunks_mut(len).zip(g.chunks(len)).zip(gtv) {
                        chunk.iter_mut().zip(gc).for_each(|(o, gv)| *o += gv * gt);
                    }
                }
                let gg = acc!(*gate);
                for (idx, (xc, gc)) in xv.chunks(len).zip(g.chunks(len)).enumerate() {
                    gg[idx] += xc.iter().zip(gc).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Op::Reshape(x) => add_into(acc!(*x), g),
            Op::SwapLast2(x) => {
                let s = &nodes[x.0].shape;
                let (b, a, c) = (s[0], s[1], s[2]);
                let gx = acc!(*x);
                for bi in 0..b {
                    for i in 0..a {
                        for j in 0..c {
                            gx[(bi * a + i) * c + j] += g[(bi * c + j) * a + i];
                        }
                    }
                }
            }
            Op::SelectStep { x, t } => {
                let s = &nodes[x.0].shape;
                let (b, l, d) = (s[0], s[1], s[2]);
                let gx = acc!(*x);
                for bi in 0..b {
                    add_into(&mut gx[(bi * l + t) * d..(bi * l + t + 1) * d], &g[bi * d..(bi + 1) * d]);
                }
            }
            Op::LastStep(x) => {
                let len = nodes[x.0].shape[2];
                let gx = acc!(*x);
                for (chunk, gv) in gx.chunks_mut(len).zip(g) {
                    chunk[len - 1] += gv;
                }
            }
            Op::Stack(steps) => {
                let (b, l, d) = (node.shape[0], node.shape[1], node.shape[2]);
                for (t, &v) in steps.iter().enumerate() {
                    let gv = acc!(v);
                    for bi in 0..b {
                        add_into(&mut gv[bi * d..(bi + 1) * d], &g[(bi * l + t) * d..(bi * l + t + 1) * d]);
                    }
                }
            }
            Op::Concat(parts) => {
                let total = *node.shape.last().unwrap();
                let rows = node.value.len() / total;
                let mut off = 0;
                for &p in parts {
                    let w = *nodes[p.0].shape.last().unwrap();
                    let gp = acc!(p);
                    for r in 0..rows {
                        add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                    }
                    off += w;
                }
            }
            Op::Slice { x, start, len } => {
                let d = *nodes[x.0].shape.last().unwrap();
                let rows = node.value.len() / len;
                let gx = acc!(*x);
                for r in 0..rows {
                    add_into(&mut gx[r * d + start..r * d + start + len], &g[r * len..(r + 1) * len]);
                }
            }
            Op::Softmax(x) => {
                let d = *node.shape.last().unwrap();
                let gx = acc!(*x);
                for ((o, y), gr) in gx.chunks_mut(d).zip(node.value.chunks(d)).zip(g.chunks(d)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    o.iter_mut().zip(y.iter().zip(gr)).for_each(|(o, (y, g))| *o += y * (g - dot));
                }
            }
            Op::WeightedSum { x, w } => {
                let s = &nodes[x.0].shape;
                let (b, l, d) = (s[0], s[1], s[2]);
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                {
                    let gx = acc!(*x);
                    for bi in 0..b {
                        for t in 0..l {
                            let a = wv[bi * l + t];
                            gx[(bi * l + t) * d..(bi * l + t + 1) * d]
                                .iter_mut()
                                .zip(&g[bi * d..(bi + 1) * d])
                                .for_each(|(o, gv)| *o += a * gv);
                        }
                    }
                }
                let gw = acc!(*w);
                for bi in 0..b {
                    for t in 0..l {
                        gw[bi * l + t] += xv[(bi * l + t) * d..(bi * l + t + 1) * d]
                            .iter()
                            .zip(&g[bi * d..(bi + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
            }
            Op::LstmCell { gates, c_prev, acts } => {
                let b = node.shape[0];
                let h = node.shape[1] / 2;
                let cv = &nodes[c_prev.0].value;
                let mut dgates = vec![0.0; b * 4 * h];
                let mut dcprev = vec![0.0; b * h];
                for bi in 0..b {
                    let a = &acts[bi * 5 * h..(bi + 1) * 5 * h];
                    for j in 0..h {
                        let (i_g, f_g, g_g, o_g, tc) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j], a[4 * h + j]);
                        let dh = g[bi * 2 * h + j];
                        let dc = g[bi * 2 * h + h + j] + dh * o_g * (1.0 - tc * tc);
                        let row = &mut dgates[bi * 4 * h..(bi + 1) * 4 * h];
                        row[j] = dc * g_g * i_g * (1.0 - i_g);
                        row[h + j] = dc * cv[bi * h + j] * f_g * (1.0 - f_g);
                        row[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                        row[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                        dcprev[bi * h + j] = dc * f_g;
                    }
                }
                add_into(acc!(*gates), &dgates);
                add_into(acc!(*c_prev), &dcprev);
            }
            Op::WeightNorm { v, g: gn, norms } => {
                let rows = node.shape[0];
                let per = node.value.len() / rows;
                let vv = &nodes[v.0].value;
                let gv = &nodes[gn.0].value;
                let mut dg = vec![0.0; rows];
                let mut dv = vec![0.0; vv.len()];
                for o in 0..rows {
                    let n = norms[o];
                    let vr = &vv[o * per..(o + 1) * per];
                    let gr = &g[o * per..(o + 1) * per];
                    let dot: f64 = vr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / n;
                    dg[o] = dot;
                    for ((out, x), gw) in dv[o * per..(o + 1) * per].iter_mut().zip(vr).zip(gr) {
                        *out = gv[o] / n * (gw - dot * x / n);
                    }
                }
                add_into(acc!(*gn), &dg);
                add_into(acc!(*v), &dv);
            }
            Op::SoftCrossEntropy { logits, targets, probs } => {
                let b = nodes[logits.0].shape[0] as f64;
                let gl = acc!(*logits);
                gl.iter_mut()
                    .zip(probs.iter().zip(targets))
                    .for_each(|(o, (p, t))| *o += g[0] * (p - t) / b);
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of a node; `None` when the node does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        let g = &self.grads[v.0];
        (!g.is_empty()).then_some(g.as_slice())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        let g = mem::take(&mut self.grads[v.0]);
        (!g.is_empty()).then_some(g)
    }
}

fn slot<'a>(grads: &'a mut [Vec<f64>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let g = &mut grads[v.0];
    if g.is_empty() {
        *g = vec![0.0; nodes[v.0].value.len()];
    }
    g
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn im2col(x: &[f64], cin: usize, len: usize, kernel: usize, lout: usize, geom: ConvGeometry, cols: &mut [f64]) {
    for c in 0..cin {
        let xr = &x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let row = &mut cols[(c * kernel + k) * lout..(c * kernel + k + 1) * lout];
            let shift = (k * geom.dilation) as isize - geom.pad_left as isize;
            for (o, dst) in row.iter_mut().enumerate() {
                let pos = (o * geom.stride) as isize + shift;
                *dst = if pos >= 0 && (pos as usize) < len { xr[pos as usize] } else { 0.0 };
            }
        }
    }
}

fn col2im(dcols: &[f64], cin: usize, len: usize, kernel: usize, lout: usize, geom: ConvGeometry, gx: &mut [f64]) {
    for c in 0..cin {
        for k in 0..kernel {
            let row = &dcols[(c * kernel + k) * lout..(c * kernel + k + 1) * lout];
            let shift = (k * geom.dilation) as isize - geom.pad_left as isize;
            for (o, v) in row.iter().enumerate() {
                let pos = (o * geom.stride) as isize + shift;
                if pos >= 0 && (pos as usize) < len {
                    gx[c * len + pos as usize] += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(loss)/d(leaf) for a graph builder.
    fn check(build: impl Fn(&mut Tape, &[Vec<f64>]) -> (Var, Vec<Var>), inputs: Vec<Vec<f64>>) {
        let run = |vals: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let (loss, leaves) = build(&mut tape, vals);
            (tape, loss, leaves)
        };
        let (tape, loss, leaves) = run(&inputs);
        let grads = tape.backward(loss);
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(*leaf).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[li].len()]);
            for j in 0..inputs[li].len() {
                let h = 1e-6;
                let mut plus = inputs.clone();
                plus[li][j] += h;
                let mut minus = inputs.clone();
                minus[li][j] -= h;
                let (tp, lp, _) = run(&plus);
                let (tm, lm, _) = run(&minus);
                let numeric = (tp.value(lp)[0] - tm.value(lm)[0]) / (2.0 * h);
                let diff = (numeric - analytic[j]).abs();
                assert!(diff <= 1e-5 * numeric.abs().max(analytic[j].abs()) + 1e-8, "leaf {li}[{j}]: analytic {} numeric {numeric}", analytic[j]);
            }
        }
    }

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| libm::sin(i as f64 * 1.37 + seed) * 0.8).collect()
    }

    #[test]
    fn conv_batchnorm_gate_gradients() {
        let inputs = vec![pseudo(42, 0.1), pseudo(36, 0.7), pseudo(4, 1.1), pseudo(4, 2.0), pseudo(4, 0.3)];
        check(
            |t, v| {
                let x = t.leaf(v[0].clone(), &[2, 3, 7]);
                let w = t.leaf(v[1].clone(), &[4, 3, 3]);
                let b = t.leaf(v[2].clone(), &[4]);
                let gam = t.leaf(v[3].clone(), &[4]);
                let bet = t.leaf(v[4].clone(), &[4]);
                let geom = ConvGeometry { stride: 2, dilation: 2, pad_left: 3, pad_right: 1 };
                let y = t.conv1d(x, w, Some(b), geom);
                let (y, _) = t.batch_norm(y, gam, bet, None, 1e-5);
                let y = t.tanh(y);
                let m = t.mean_time(y);
                let gate = t.sigmoid(m);
                let y = t.channel_gate(y, gate);
                let last = t.last_step(y);
                let loss = t.soft_cross_entropy(last, vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 1.0, 0.0]);
                (loss, vec![x, w, b, gam, bet])
            },
            inputs,
        );
    }

    #[test]
    fn lstm_attention_gradients() {
        let inputs = vec![pseudo(48, 0.4), pseudo(4, 1.5), pseudo(8, 0.9), pseudo(12, 0.2), pseudo(2, 2.2)];
        check(
            |t, v| {
                let gates_seq = t.leaf(v[0].clone(), &[2, 3, 8]);
                let c0 = t.leaf(v[1].clone(), &[2, 2]);
                let whh = t.leaf(v[2].clone(), &[4, 2]);
                let proj = t.leaf(v[3].clone(), &[2, 3, 2]);
                let score = t.leaf(v[4].clone(), &[2]);
                let mut c = c0;
                let mut hs = Vec::new();
                for step in 0..3 {
                    let g = t.select_step(gates_seq, step);
                    let out = t.lstm_cell(g, c);
                    let h = t.slice(out, 0, 2);
                    c = t.slice(out, 2, 2);
                    hs.push(h);
                }
                let seq = t.stack(hs);
                let seq2 = t.add(seq, proj);
                let s = t.reshape(score, &[1, 2]);
                let sc = t.linear(seq2, s, None);
                let sc = t.reshape(sc, &[2, 3]);
                let a = t.softmax(sc);
                let ctx = t.weighted_sum(seq2, a);
                let z = t.linear(ctx, whh, None);
                let z = t.relu(z);
                let both = t.concat(vec![z, ctx]);
                let sw = t.swap_last2(seq2);
                let pooled = t.mean_time(sw);
                let both = t.concat(vec![both, pooled]);
                let loss = t.soft_cross_entropy(both, vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
                (loss, vec![gates_seq, c0, whh, proj, score])
            },
            inputs,
        );
    }

    #[test]
    fn weight_norm_dropout_gradients() {
        let inputs = vec![pseudo(12, 0.3), vec![0.5, 1.5, -0.7], pseudo(20, 1.9)];
        check(
            |t, v| {
                let vv = t.leaf(v[0].clone(), &[3, 2, 2]);
                let g = t.leaf(v[1].clone(), &[3]);
                let x = t.leaf(v[2].clone(), &[2, 2, 5]);
                let w = t.weight_norm(vv, g);
                let y = t.conv1d(x, w, None, ConvGeometry::causal(2, 2));
                let y = t.mul_const(y, (0..30).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect());
                let y2 = t.mul(y, y);
                let m = t.mean_time(y2);
                let loss = t.soft_cross_entropy(m, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
                (loss, vec![vv, g, x])
            },
            inputs,
        );
    }

    #[test]
    fn conv_output_length_rules() {
        assert_eq!(ConvGeometry::causal(2, 4).output_len(10, 2), Some(10));
        assert_eq!(ConvGeometry::same(7).output_len(50, 7), Some(50));
        let g = ConvGeometry { stride: 2, dilation: 1, pad_left: 1, pad_right: 1 };
        assert_eq!(g.output_len(10, 3), Some(5));
        assert_eq!(ConvGeometry { stride: 1, dilation: 1, pad_left: 0, pad_right: 0 }.output_len(2, 3), None);
    }
}
