//! Supervised training, evaluation and repeated-run statistics.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use crate::data::{SplitAssignment, Window};
use crate::linalg::{mean, pop_std};
use crate::models::{Model, ModelConfig, ParamStore};
use crate::preprocess::{mix_rows, one_hot, smooth_samples, ChannelStats, MixupParams, SmoothingParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub repeats: usize,
    /// Used for models whose config sets `smoothing`.
    pub smoothing: SmoothingParams,
    /// Used for models whose config sets `mixup`.
    pub mixup: MixupParams,
    /// Per-channel z-scoring with train-split statistics. Accepts `true`
    /// or `{"enabled": true}`.
    #[serde(deserialize_with = "toggle")]
    pub standardize: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Toggle {
    Flag(bool),
    Table(Enabled),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Enabled {
    enabled: bool,
}

fn toggle<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<bool, D::Error> {
    Ok(match Toggle::deserialize(d)? {
        Toggle::Flag(b) | Toggle::Table(Enabled { enabled: b }) => b,
    })
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            early_stop_patience: 15,
            seed: 0,
            repeats: 3,
            smoothing: SmoothingParams::default(),
            mixup: MixupParams::default(),
            standardize: true,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.repeats == 0 {
            return Err(Error::Config("epochs, batch_size and repeats must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.mixup_active(cfg) {
            self.mixup.validate()?;
            if self.batch_size < 2 {
                return Err(Error::Config("mixup needs batch_size >= 2".into()));
            }
        }
        if self.smoothing_active(cfg) {
            self.smoothing.validate()?;
        }
        Ok(())
    }

    pub fn mixup_active(&self, cfg: &ModelConfig) -> bool {
        cfg.mixup && self.mixup.enabled
    }

    pub fn smoothing_active(&self, cfg: &ModelConfig) -> bool {
        cfg.smoothing && self.smoothing.p > 0.0
    }
}

/// Windows plus their split assignment.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub windows: &'a [Window],
    pub split: &'a SplitAssignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    /// 1-based epoch of the selected checkpoint.
    pub epoch_of_best: usize,
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    pub val_history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl AccuracyStat {
    pub fn from_accuracies(acc: &[f64]) -> Result<AccuracyStat> {
        if acc.is_empty() {
            return Err(Error::Misuse("no accuracies to summarise".into()));
        }
        Ok(AccuracyStat {
            mean: mean(acc),
            std: pop_std(acc),
            n: acc.len(),
        })
    }
}

/// A model together with the input statistics it was trained under.
#[derive(Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub stats: ChannelStats,
}

const EVAL_BATCH: usize = 64;

impl TrainedModel {
    pub fn logits(&self, windows: &[&Window]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(windows.len() * self.model.config().num_classes);
        for chunk in windows.chunks(EVAL_BATCH) {
            let x = flatten(chunk, &self.stats, None)?;
            out.extend(self.model.forward(&x, chunk.len())?);
        }
        Ok(out)
    }

    pub fn predict(&self, windows: &[&Window]) -> Result<Vec<usize>> {
        let k = self.model.config().num_classes;
        Ok(self.logits(windows)?.chunks(k).map(argmax).collect())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_from_logits(logits: &[f64], k: usize, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Misuse("accuracy of an empty set".into()));
    }
    if logits.len() != labels.len() * k {
        return Err(Error::Dimension(format!("{} logits for {} labels", logits.len(), labels.len())));
    }
    let hits = logits.chunks(k).zip(labels).filter(|(row, &l)| argmax(row) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of windows whose argmax prediction equals the label.
pub fn evaluate(m: &TrainedModel, windows: &[&Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Misuse("evaluation set is empty".into()));
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    accuracy_from_logits(&m.logits(windows)?, m.model.config().num_classes, &labels)
}

fn flatten(windows: &[&Window], stats: &ChannelStats, smoothing: Option<(&SmoothingParams, &mut ChaCha8Rng)>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(windows.iter().map(|w| w.samples.len()).sum());
    let mut smoothing = smoothing;
    for w in windows {
        let start = out.len();
        let smooth = match smoothing.as_mut() {
            Some((p, rng)) => rand::Rng::random::<f64>(*rng) < p.p,
            None => false,
        };
        match smoothing.as_ref() {
            Some((p, _)) if smooth => out.extend(smooth_samples(w, p.k, p.sigma)?),
            _ => out.extend_from_slice(&w.samples),
        }
        stats.apply_in_place(&mut out[start..]);
    }
    Ok(out)
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::BETA2, self.t as f64);
        for ((p, g), (m, v)) in store.params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            for i in 0..g.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.value[i] -= self.lr * mh / (libm::sqrt(vh) + Self::EPS);
            }
        }
    }
}

fn check_data(cfg: &ModelConfig, data: &TrainData) -> Result<()> {
    let n = data.windows.len();
    for &i in data.split.train.iter().chain(&data.split.val).chain(&data.split.test) {
        let w = data
            .windows
            .get(i)
            .ok_or_else(|| Error::Dimension(format!("split index {i} outside {n} windows")))?;
        if w.channels != cfg.input_channels {
            return Err(Error::Dimension(format!(
                "window has {} channels, model expects {}",
                w.channels, cfg.input_channels
            )));
        }
        if w.label >= cfg.num_classes {
            return Err(Error::Dimension(format!("label {} outside {} classes", w.label, cfg.num_classes)));
        }
    }
    if data.split.train.is_empty() {
        return Err(Error::Misuse("training split is empty".into()));
    }
    if data.split.test.is_empty() {
        return Err(Error::Misuse("test split is empty".into()));
    }
    Ok(())
}

/// Trains one model from scratch with `settings.seed` and evaluates the
/// best-validation checkpoint once on the test split.
pub fn train(cfg: &ModelConfig, data: TrainData, settings: &TrainSettings) -> Result<(TrainedModel, RunRecord)> {
    settings.validate(cfg)?;
    check_data(cfg, &data)?;
    let pick = |idx: &[usize]| -> Vec<&Window> { idx.iter().map(|&i| &data.windows[i]).collect() };
    let train_set = pick(&data.split.train);
    let val_set = pick(&data.split.val);
    let test_set = pick(&data.split.test);
    let stats = if settings.standardize {
        ChannelStats::fit(train_set.iter().copied())?
    } else {
        ChannelStats::identity(cfg.input_channels)
    };
    let k = cfg.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut trained = TrainedModel {
        model: Model::build(cfg, settings.seed)?,
        stats,
    };
    let mut adam = Adam::new(trained.model.params(), settings.learning_rate);
    let mixup = settings.mixup_active(cfg);
    let smoothing = settings.smoothing_active(cfg);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    let mut loss_history = Vec::new();
    let mut val_history = Vec::new();
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let batch: Vec<&Window> = chunk.iter().map(|&i| train_set[i]).collect();
            let b = batch.len();
            let mut x = if smoothing {
                flatten(&batch, &trained.stats, Some((&settings.smoothing, &mut rng)))?
            } else {
                flatten(&batch, &trained.stats, None)?
            };
            let labels: Vec<usize> = batch.iter().map(|w| w.label).collect();
            let mut y = one_hot(&labels, k);
            if mixup && b >= 2 {
                let lambda = settings.mixup.sample_lambda(&mut rng)?;
                let mut perm: Vec<usize> = (0..b).collect();
                perm.shuffle(&mut rng);
                let row = x.len() / b;
                (x, y) = mix_rows(&x, row, &y, k, lambda, &perm);
            }
            let step = trained.model.step(&x, b, &y, &mut rng)?;
            if !step.loss.is_finite() || step.grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam.update(trained.model.params_mut(), &step.grads);
            trained.model.commit(&step.bn_updates);
            total += step.loss * b as f64;
        }
        loss_history.push(total / train_set.len() as f64);
        let score = if val_set.is_empty() {
            evaluate(&trained, &train_set)?
        } else {
            evaluate(&trained, &val_set)?
        };
        val_history.push(score);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, trained.model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= settings.early_stop_patience {
                break;
            }
        }
    }
    let epochs_run = loss_history.len();
    let (best_val_accuracy, epoch_of_best, store) = best.expect("at least one epoch");
    trained.model.load_store(store)?;
    let test_accuracy = evaluate(&trained, &test_set)?;
    let record = RunRecord {
        seed: settings.seed,
        best_val_accuracy,
        test_accuracy,
        epoch_of_best,
        epochs_run,
        loss_history,
        val_history,
    };
    Ok((trained, record))
}

/// `settings.repeats` runs with seeds `seed, seed+1, …`.
pub fn repeat_runs(cfg: &ModelConfig, data: TrainData, settings: &TrainSettings) -> Result<(AccuracyStat, Vec<RunRecord>)> {
    settings.validate(cfg)?;
    let mut records = Vec::with_capacity(settings.repeats);
    for i in 0..settings.repeats {
        let s = TrainSettings {
            seed: settings.seed + i as u64,
            ..settings.clone()
        };
        match train(cfg, data, &s) {
            Ok((_, r)) => records.push(r),
            Err(e) => {
                return Err(Error::RepeatAborted {
                    failed_run: i,
                    completed: records,
                    source: Box::new(e),
                })
            }
        }
    }
    let acc: Vec<f64> = records.iter().map(|r| r.test_accuracy).collect();
    Ok((AccuracyStat::from_accuracies(&acc)?, records))
}
