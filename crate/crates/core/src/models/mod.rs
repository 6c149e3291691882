//! The eight gait-identification architectures on a shared autodiff tape.
//!
//! Every model consumes time-major windows `[B, L, C]` and returns logits
//! `[B, K]`.

mod config;
mod layers;
mod params;

pub use config::{Family, ModelConfig};
pub use layers::{eca_kernel, BnUpdate};
pub use params::{orthogonal, ParamStore, Tensor};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ConvGeometry, Var};
use crate::{Error, Result};
use layers::{apply_bn_updates, name, BatchNorm, Builder, Conv, Ctx, Eca, Linear, LstmStack, WnConv};

struct RecurrentNet {
    stem: Option<Conv>,
    channel_attn: Option<(Linear, Linear)>,
    lstm: LstmStack,
    score: Option<Linear>,
    head: Linear,
    dropout: f64,
}

struct BasicBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    eca: Option<Eca>,
    shortcut: Option<(Conv, BatchNorm)>,
}

struct ResNet {
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
    head: Linear,
}

struct TemporalBlock {
    conv1: WnConv,
    conv2: WnConv,
    down: Option<Conv>,
}

struct Tcn {
    blocks: Vec<TemporalBlock>,
    head: Linear,
    dropout: f64,
}

enum Arch {
    Recurrent(RecurrentNet),
    ResNet(ResNet),
    Tcn(Tcn),
}

/// Forward-pass switches used by tests and diagnostics.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Skip every ECA gate (gate ≡ 1).
    pub bypass_eca: bool,
}

/// Inference output with intermediate tensors.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub logits: Vec<f64>,
    /// Temporal attention weights `[B, L]` (CNN-BiLSTM families).
    pub attention: Option<Vec<f64>>,
    /// Features before the classifier read-out, with shape (TCN: `[B, C, L]`).
    pub features: Option<(Vec<f64>, Vec<usize>)>,
    /// ECA gate values `[B, C]` per block.
    pub eca_gates: Vec<Vec<f64>>,
}

/// Result of one training-mode forward/backward pass.
#[derive(Clone, Debug)]
pub struct Step {
    pub loss: f64,
    pub logits: Vec<f64>,
    /// One gradient per parameter, in store order.
    pub grads: Vec<Vec<f64>>,
    pub bn_updates: Vec<BnUpdate>,
}

pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    arch: Arch,
}

impl core::fmt::Debug for Model {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Model")
            .field("family", &self.cfg.family)
            .field("params", &self.count_params())
            .finish()
    }
}

pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    Model::build(cfg, seed)
}

pub fn count_params(m: &Model) -> usize {
    m.count_params()
}

impl Model {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bld = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let arch = match cfg.family {
            Family::LstmHumanfi | Family::CnnBilstmTemporalAttn | Family::CnnBilstmDualAttn => {
                Arch::Recurrent(build_recurrent(&mut bld, cfg))
            }
            Family::Tcn => Arch::Tcn(build_tcn(&mut bld, cfg)),
            _ => Arch::ResNet(build_resnet(&mut bld, cfg)),
        };
        Ok(Model {
            cfg: cfg.clone(),
            store,
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces every parameter and buffer; names and shapes must match.
    pub fn load_store(&mut self, store: ParamStore) -> Result<()> {
        let same = |a: &[Tensor], b: &[Tensor]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| x.name == y.name && x.shape == y.shape && y.value.len() == y.shape.iter().product::<usize>())
        };
        if !same(&self.store.params, &store.params) || !same(&self.store.buffers, &store.buffers) {
            return Err(Error::Dimension(format!(
                "stored tensors do not match a {} model",
                self.cfg.family.as_str()
            )));
        }
        self.store = store;
        Ok(())
    }

    /// Window length of a flat `[B, L, C]` input.
    fn input_len(&self, x: &[f64], batch: usize) -> Result<usize> {
        let c = self.cfg.input_channels;
        if batch == 0 || x.is_empty() || !x.len().is_multiple_of(batch * c) {
            return Err(Error::Dimension(format!(
                "input of {} values is not a [{batch}, L, {c}] batch",
                x.len()
            )));
        }
        let len = x.len() / (batch * c);
        self.cfg.check_window(len)?;
        Ok(len)
    }

    fn run(&self, ctx: &mut Ctx, x: &[f64], batch: usize) -> Result<Var> {
        let len = self.input_len(x, batch)?;
        let input = ctx.tape.leaf(x.to_vec(), &[batch, len, self.cfg.input_channels]);
        Ok(match &self.arch {
            Arch::Recurrent(net) => net.forward(ctx, input),
            Arch::ResNet(net) => net.forward(ctx, input),
            Arch::Tcn(net) => net.forward(ctx, input),
        })
    }

    /// Inference-mode logits `[B, K]`, row-major.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut ctx = Ctx::new(&self.store, false, None);
        let out = self.run(&mut ctx, x, batch)?;
        Ok(ctx.tape.value(out).to_vec())
    }

    pub fn forward_traced(&self, x: &[f64], batch: usize, opts: ForwardOptions) -> Result<Trace> {
        let mut ctx = Ctx::new(&self.store, false, None);
        ctx.bypass_eca = opts.bypass_eca;
        let out = self.run(&mut ctx, x, batch)?;
        let t = &ctx.tape;
        Ok(Trace {
            logits: t.value(out).to_vec(),
            attention: ctx.attention.map(|a| t.value(a).to_vec()),
            features: ctx.features.map(|f| (t.value(f).to_vec(), t.shape(f).to_vec())),
            eca_gates: ctx.gates.iter().map(|&g| t.value(g).to_vec()).collect(),
        })
    }

    /// Training-mode pass (batch statistics, dropout) with gradients of the
    /// mean soft cross-entropy against `targets [B, K]`. Running statistics
    /// are left untouched; see [`Model::commit`].
    pub fn step(&self, x: &[f64], batch: usize, targets: &[f64], rng: &mut ChaCha8Rng) -> Result<Step> {
        let k = self.cfg.num_classes;
        if targets.len() != batch * k {
            return Err(Error::Dimension(format!(
                "{} targets for a batch of {batch} over {k} classes",
                targets.len()
            )));
        }
        let mut ctx = Ctx::new(&self.store, true, Some(rng));
        let logits = self.run(&mut ctx, x, batch)?;
        let loss = ctx.tape.soft_cross_entropy(logits, targets.to_vec());
        let mut grads = ctx.tape.backward(loss);
        let grads = ctx
            .param_vars()
            .iter()
            .zip(&self.store.params)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| vec![0.0; p.value.len()]))
            .collect();
        Ok(Step {
            loss: ctx.tape.value(loss)[0],
            logits: ctx.tape.value(logits).to_vec(),
            grads,
            bn_updates: ctx.bn_updates,
        })
    }

    /// Folds a step's batch statistics into the running buffers.
    pub fn commit(&mut self, updates: &[BnUpdate]) {
        apply_bn_updates(&mut self.store, updates);
    }
}

/// Largest disagreement between analytic gradients and central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |a − n| / max(|a|, |n|, floor)` over every parameter entry.
    pub max_rel_error: f64,
    pub worst_param: alloc::string::String,
    pub checked: usize,
    /// Entries whose `±h` probe straddled a ReLU kink and were resolved with
    /// a smaller step.
    pub kinks: usize,
}

/// Errors above this trigger a retry with steps `h/10` and `h/100`.
const RETRY_ERROR: f64 = 1e-4;

/// Compares training-mode gradients of the loss with central differences
/// of step `h`. Dropout must be off for the comparison to be meaningful.
///
/// A piecewise-linear activation crossing zero inside `[−h, h]` spoils the
/// difference quotient, so large errors are re-measured with smaller steps
/// and the best agreement is kept. A wrong gradient disagrees at every step.
pub fn gradient_check(model: &Model, x: &[f64], batch: usize, targets: &[f64], h: f64, floor: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let step = model.step(x, batch, targets, &mut rng)?;
    let mut probe = Model::build(&model.cfg, 0)?;
    probe.store = model.store.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_param: alloc::string::String::new(),
        checked: 0,
        kinks: 0,
    };
    for (pi, g) in step.grads.iter().enumerate() {
        for (i, &gi) in g.iter().enumerate() {
            let orig = probe.store.params[pi].value[i];
            let mut err = f64::INFINITY;
            for (attempt, hh) in [h, h / 10.0, h / 100.0].into_iter().enumerate() {
                probe.store.params[pi].value[i] = orig + hh;
                let up = probe.step(x, batch, targets, &mut rng)?.loss;
                probe.store.params[pi].value[i] = orig - hh;
                let down = probe.step(x, batch, targets, &mut rng)?.loss;
                let numeric = (up - down) / (2.0 * hh);
                let denom = gi.abs().max(numeric.abs()).max(floor);
                let e = (gi - numeric).abs() / denom;
                if attempt > 0 && e * 10.0 < err {
                    out.kinks += 1;
                }
                err = err.min(e);
                if err <= RETRY_ERROR {
                    break;
                }
            }
            probe.store.params[pi].value[i] = orig;
            if err > out.max_rel_error {
                out.max_rel_error = err;
                out.worst_param = format!("{}[{i}]", probe.store.params[pi].name);
            }
            out.checked += 1;
        }
    }
    Ok(out)
}

fn build_recurrent(bld: &mut Builder, cfg: &ModelConfig) -> RecurrentNet {
    let h = cfg.hidden();
    let c = cfg.input_channels;
    let dirs = if cfg.is_bidirectional() { 2 } else { 1 };
    let conv = cfg.family != Family::LstmHumanfi;
    let stem = conv.then(|| Conv::new(bld, "conv", c, h, 3, ConvGeometry::same(3), true));
    let channel_attn = (cfg.family == Family::CnnBilstmDualAttn).then(|| {
        (
            Linear::new(bld, "channel_attn.fc1", h, h, true),
            Linear::new(bld, "channel_attn.fc2", h, h, true),
        )
    });
    let lstm_in = if conv { h } else { c };
    let lstm = LstmStack::new(bld, "lstm", lstm_in, h, cfg.lstm_layers(), cfg.is_bidirectional(), cfg.dropout);
    let score = conv.then(|| Linear::new(bld, "attn.score", dirs * h, 1, true));
    let head = Linear::new(bld, "fc", dirs * h, cfg.num_classes, true);
    RecurrentNet {
        stem,
        channel_attn,
        lstm,
        score,
        head,
        dropout: cfg.dropout,
    }
}

impl RecurrentNet {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let mut seq = x;
        if let Some(stem) = &self.stem {
            let xc = ctx.tape.swap_last2(x);
            let mut f = stem.forward(ctx, xc);
            f = ctx.tape.relu(f);
            if let Some((fc1, fc2)) = &self.channel_attn {
                let pooled = ctx.tape.mean_time(f);
                let a = fc1.forward(ctx, pooled);
                let a = ctx.tape.relu(a);
                let a = fc2.forward(ctx, a);
                let gate = ctx.tape.sigmoid(a);
                f = ctx.tape.channel_gate(f, gate);
            }
            seq = ctx.tape.swap_last2(f);
        }
        let (outs, last) = self.lstm.forward(ctx, seq);
        let summary = match &self.score {
            Some(score) => {
                let s = ctx.tape.shape(outs).to_vec();
                let e = score.forward(ctx, outs);
                let e = ctx.tape.reshape(e, &[s[0], s[1]]);
                let w = ctx.tape.softmax(e);
                ctx.attention = Some(w);
                ctx.tape.weighted_sum(outs, w)
            }
            None => last,
        };
        let summary = ctx.dropout(summary, self.dropout);
        self.head.forward(ctx, summary)
    }
}

fn build_resnet(bld: &mut Builder, cfg: &ModelConfig) -> ResNet {
    let w = cfg.width();
    let eca = cfg.family.has_eca();
    let stem = Conv::new(
        bld,
        "stem.conv",
        cfg.input_channels,
        w,
        7,
        ConvGeometry::same(7),
        false,
    );
    let stem_bn = BatchNorm::new(bld, "stem.bn", w);
    let mut blocks = Vec::new();
    let mut cin = w;
    for (stage, &count) in cfg.residual_layers().iter().enumerate() {
        let cout = w << stage;
        for i in 0..count {
            let stride = if cfg.family.strided_stages() && stage > 0 && i == 0 { 2 } else { 1 };
            let p = format!("layer{}.{i}", stage + 1);
            let geom3 = ConvGeometry {
                stride,
                ..ConvGeometry::same(3)
            };
            let conv1 = Conv::new(bld, &name(&p, "conv1"), cin, cout, 3, geom3, false);
            let bn1 = BatchNorm::new(bld, &name(&p, "bn1"), cout);
            let conv2 = Conv::new(bld, &name(&p, "conv2"), cout, cout, 3, ConvGeometry::same(3), false);
            let bn2 = BatchNorm::new(bld, &name(&p, "bn2"), cout);
            let eca = eca.then(|| Eca::new(bld, &name(&p, "eca"), cout));
            let shortcut = (cin != cout || stride != 1).then(|| {
                let geom1 = ConvGeometry {
                    stride,
                    ..ConvGeometry::same(1)
                };
                (
                    Conv::new(bld, &name(&p, "downsample.0"), cin, cout, 1, geom1, false),
                    BatchNorm::new(bld, &name(&p, "downsample.1"), cout),
                )
            });
            blocks.push(BasicBlock {
                conv1,
                bn1,
                conv2,
                bn2,
                eca,
                shortcut,
            });
            cin = cout;
        }
    }
    let head = Linear::new(bld, "fc", cin, cfg.num_classes, true);
    ResNet {
        stem,
        stem_bn,
        blocks,
        head,
    }
}

impl ResNet {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let xc = ctx.tape.swap_last2(x);
        let f = self.stem.forward(ctx, xc);
        let f = self.stem_bn.forward(ctx, f);
        let mut f = ctx.tape.relu(f);
        for b in &self.blocks {
            let o = b.conv1.forward(ctx, f);
            let o = b.bn1.forward(ctx, o);
            let o = ctx.tape.relu(o);
            let o = b.conv2.forward(ctx, o);
            let mut o = b.bn2.forward(ctx, o);
            if let Some(eca) = &b.eca {
                o = eca.forward(ctx, o);
            }
            let res = match &b.shortcut {
                Some((conv, bn)) => {
                    let r = conv.forward(ctx, f);
                    bn.forward(ctx, r)
                }
                None => f,
            };
            let sum = ctx.tape.add(o, res);
            f = ctx.tape.relu(sum);
        }
        ctx.features = Some(f);
        let pooled = ctx.tape.mean_time(f);
        self.head.forward(ctx, pooled)
    }
}

fn build_tcn(bld: &mut Builder, cfg: &ModelConfig) -> Tcn {
    let k = cfg.tcn_kernel();
    let mut cin = cfg.input_channels;
    let mut blocks = Vec::new();
    for (i, &cout) in cfg.tcn_channels().iter().enumerate() {
        let geom = ConvGeometry::causal(k, 1 << i);
        let p = format!("tcn.{i}");
        let conv1 = WnConv::new(bld, &name(&p, "conv1"), cin, cout, k, geom);
        let conv2 = WnConv::new(bld, &name(&p, "conv2"), cout, cout, k, geom);
        let down = (cin != cout).then(|| Conv::new(bld, &name(&p, "downsample"), cin, cout, 1, ConvGeometry::same(1), true));
        blocks.push(TemporalBlock { conv1, conv2, down });
        cin = cout;
    }
    let head = Linear::new(bld, "fc", cin, cfg.num_classes, true);
    Tcn {
        blocks,
        head,
        dropout: cfg.dropout,
    }
}

impl Tcn {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let mut f = ctx.tape.swap_last2(x);
        for b in &self.blocks {
            let o = b.conv1.forward(ctx, f);
            let o = ctx.tape.relu(o);
            let o = ctx.dropout(o, self.dropout);
            let o = b.conv2.forward(ctx, o);
            let o = ctx.tape.relu(o);
            let o = ctx.dropout(o, self.dropout);
            let res = match &b.down {
                Some(d) => d.forward(ctx, f),
                None => f,
            };
            let sum = ctx.tape.add(o, res);
            f = ctx.tape.relu(sum);
        }
        ctx.features = Some(f);
        let last = ctx.tape.last_step(f);
        self.head.forward(ctx, last)
    }
}
