use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::autograd::{BatchStats, ConvGeometry, Tape, Var};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

/// Batch statistics to fold into running buffers after a training step.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub(crate) mean_buf: usize,
    pub(crate) var_buf: usize,
    pub(crate) count: usize,
    pub(crate) stats: BatchStats,
}

pub(crate) struct Ctx<'a> {
    pub tape: Tape,
    vars: Vec<Var>,
    store: &'a ParamStore,
    pub train: bool,
    rng: Option<&'a mut ChaCha8Rng>,
    pub bn_updates: Vec<BnUpdate>,
    pub bypass_eca: bool,
    pub attention: Option<Var>,
    pub features: Option<Var>,
    pub gates: Vec<Var>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, train: bool, rng: Option<&'a mut ChaCha8Rng>) -> Self {
        let mut tape = Tape::new();
        let vars = store.params.iter().map(|p| tape.leaf(p.value.clone(), &p.shape)).collect();
        Self {
            tape,
            vars,
            store,
            train,
            rng,
            bn_updates: Vec::new(),
            bypass_eca: false,
            attention: None,
            features: None,
            gates: Vec::new(),
        }
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    fn p(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return x;
        }
        let n = self.tape.value(x).len();
        let keep = 1.0 - p;
        let rng = self.rng.as_mut().expect("dropout in training mode needs an rng");
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.tape.mul_const(x, mask)
    }
}

pub(crate) struct Linear {
    w: usize,
    b: Option<usize>,
}

impl Linear {
    pub fn new(bld: &mut Builder, name: &str, inp: usize, out: usize, bias: bool) -> Self {
        let w = bld.store.uniform(format!("{name}.weight"), &[out, inp], inp, bld.rng);
        let b = bias.then(|| bld.store.constant(format!("{name}.bias"), &[out], 0.0));
        Self { w, b }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let (w, b) = (ctx.p(self.w), self.b.map(|b| ctx.p(b)));
        ctx.tape.linear(x, w, b)
    }
}

pub(crate) struct Conv {
    w: usize,
    b: Option<usize>,
    geom: ConvGeometry,
}

impl Conv {
    pub fn new(bld: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, geom: ConvGeometry, bias: bool) -> Self {
        let w = bld.store.uniform(format!("{name}.weight"), &[cout, cin, k], cin * k, bld.rng);
        let b = bias.then(|| bld.store.constant(format!("{name}.bias"), &[cout], 0.0));
        Self { w, b, geom }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let (w, b) = (ctx.p(self.w), self.b.map(|b| ctx.p(b)));
        ctx.tape.conv1d(x, w, b, self.geom)
    }
}

/// Weight-normalized convolution with bias.
pub(crate) struct WnConv {
    v: usize,
    g: usize,
    b: usize,
    geom: ConvGeometry,
}

impl WnConv {
    pub fn new(bld: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, geom: ConvGeometry) -> Self {
        let v = bld.store.uniform(format!("{name}.weight_v"), &[cout, cin, k], cin * k, bld.rng);
        let g = bld.store.row_norms(format!("{name}.weight_g"), v);
        let b = bld.store.constant(format!("{name}.bias"), &[cout], 0.0);
        Self { v, g, b, geom }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let (v, g, b) = (ctx.p(self.v), ctx.p(self.g), ctx.p(self.b));
        let w = ctx.tape.weight_norm(v, g);
        ctx.tape.conv1d(x, w, Some(b), self.geom)
    }
}

pub(crate) struct BatchNorm {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

impl BatchNorm {
    pub fn new(bld: &mut Builder, name: &str, ch: usize) -> Self {
        Self {
            gamma: bld.store.constant(format!("{name}.weight"), &[ch], 1.0),
            beta: bld.store.constant(format!("{name}.bias"), &[ch], 0.0),
            mean: bld.store.buffer(format!("{name}.running_mean"), ch, 0.0),
            var: bld.store.buffer(format!("{name}.running_var"), ch, 1.0),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        if ctx.train {
            let s = ctx.tape.shape(x);
            let count = s[0] * s.get(2).copied().unwrap_or(1);
            let (y, stats) = ctx.tape.batch_norm(x, g, b, None, BN_EPS);
            ctx.bn_updates.push(BnUpdate {
                mean_buf: self.mean,
                var_buf: self.var,
                count,
                stats: stats.expect("batch statistics"),
            });
            y
        } else {
            let store = ctx.store;
            let running = (&store.buffers[self.mean].value[..], &store.buffers[self.var].value[..]);
            ctx.tape.batch_norm(x, g, b, Some(running), BN_EPS).0
        }
    }
}

/// Folds batch statistics into running buffers (unbiased variance).
pub(crate) fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        let unbias = if u.count > 1 {
            u.count as f64 / (u.count - 1) as f64
        } else {
            1.0
        };
        for (r, m) in store.buffers[u.mean_buf].value.iter_mut().zip(&u.stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in store.buffers[u.var_buf].value.iter_mut().zip(&u.stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
}

/// ECA kernel size from the adaptive rule `|log2(C)/2 + 1/2|`, forced odd,
/// never below 3.
pub fn eca_kernel(channels: usize) -> usize {
    let t = libm::fabs((libm::log2(channels as f64) + 1.0) / 2.0) as usize;
    let k = if t % 2 == 1 { t } else { t + 1 };
    k.max(3)
}

pub(crate) struct Eca {
    w: usize,
    k: usize,
}

impl Eca {
    pub fn new(bld: &mut Builder, name: &str, ch: usize) -> Self {
        let k = eca_kernel(ch);
        let w = bld.store.uniform(format!("{name}.conv.weight"), &[1, 1, k], k, bld.rng);
        Self { w, k }
    }

    /// Gates `x [B, C, L]`; bypassed blocks pass through untouched.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        if ctx.bypass_eca {
            return x;
        }
        let s = ctx.tape.shape(x).to_vec();
        let (b, c) = (s[0], s[1]);
        let pooled = ctx.tape.mean_time(x);
        let seq = ctx.tape.reshape(pooled, &[b, 1, c]);
        let w = ctx.p(self.w);
        let mixed = ctx.tape.conv1d(seq, w, None, ConvGeometry::same(self.k));
        let flat = ctx.tape.reshape(mixed, &[b, c]);
        let gate = ctx.tape.sigmoid(flat);
        ctx.gates.push(gate);
        ctx.tape.channel_gate(x, gate)
    }
}

struct LstmDir {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

/// Stacked, optionally bidirectional LSTM over `[B, L, I]` (gate order i, f, g, o).
pub(crate) struct LstmStack {
    layers: Vec<Vec<LstmDir>>,
    hidden: usize,
    dropout: f64,
}

impl LstmStack {
    pub fn new(bld: &mut Builder, name: &str, input: usize, hidden: usize, layers: usize, bidirectional: bool, dropout: f64) -> Self {
        let dirs = if bidirectional { 2 } else { 1 };
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { dirs * hidden };
                (0..dirs)
                    .map(|d| {
                        let sfx = if d == 1 { "_reverse" } else { "" };
                        let w_ih = bld.store.uniform(format!("{name}.weight_ih_l{l}{sfx}"), &[4 * hidden, inp], inp, bld.rng);
                        let w_hh = bld.store.orthogonal_blocks(format!("{name}.weight_hh_l{l}{sfx}"), 4, hidden, bld.rng);
                        let b_ih = bld.store.constant(format!("{name}.bias_ih_l{l}{sfx}"), &[4 * hidden], 0.0);
                        let b_hh = bld.store.constant(format!("{name}.bias_hh_l{l}{sfx}"), &[4 * hidden], 0.0);
                        LstmDir { w_ih, w_hh, b_ih, b_hh }
                    })
                    .collect()
            })
            .collect();
        Self { layers, hidden, dropout }
    }

    /// Returns the top layer's outputs `[B, L, D·H]` and its final hidden
    /// states `[B, D·H]` (forward at the last step, backward at the first).
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> (Var, Var) {
        let h = self.hidden;
        let mut input = x;
        let mut finals = Vec::new();
        for (l, dirs) in self.layers.iter().enumerate() {
            let s = ctx.tape.shape(input).to_vec();
            let (b, len) = (s[0], s[1]);
            let mut outs = Vec::new();
            finals.clear();
            for (d, dir) in dirs.iter().enumerate() {
                let (w_ih, b_ih, w_hh, b_hh) = (ctx.p(dir.w_ih), ctx.p(dir.b_ih), ctx.p(dir.w_hh), ctx.p(dir.b_hh));
                let pre = ctx.tape.linear(input, w_ih, Some(b_ih));
                let mut hs = ctx.tape.zeros(&[b, h]);
                let mut cs = ctx.tape.zeros(&[b, h]);
                let mut steps = vec![hs; len];
                let order: Vec<usize> = if d == 0 { (0..len).collect() } else { (0..len).rev().collect() };
                for t in order {
                    let gx = ctx.tape.select_step(pre, t);
                    let gh = ctx.tape.linear(hs, w_hh, Some(b_hh));
                    let gates = ctx.tape.add(gx, gh);
                    let hc = ctx.tape.lstm_cell(gates, cs);
                    hs = ctx.tape.slice(hc, 0, h);
                    cs = ctx.tape.slice(hc, h, h);
                    steps[t] = hs;
                }
                finals.push(hs);
                outs.push(ctx.tape.stack(steps));
            }
            let out = if outs.len() == 1 { outs[0] } else { ctx.tape.concat(outs) };
            input = if l + 1 < self.layers.len() {
                ctx.dropout(out, self.dropout)
            } else {
                out
            };
        }
        let last = if finals.len() == 1 { finals[0] } else { ctx.tape.concat(finals) };
        (input, last)
    }
}

pub(crate) fn name(prefix: &str, part: &str) -> String {
    format!("{prefix}.{part}")
}
