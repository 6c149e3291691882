//! Cross-band comparison tables, aggregate significance counts and the
//! learning curve.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{downsample, indices_by_class, make_splits, segment, Band, CsiRecording, Decimation, SplitAssignment, Window};
use crate::models::{Family, Model, ModelConfig};
use crate::preprocess::{compute_background, subtract_background, BackgroundProfile, BackgroundStat};
use crate::train::{repeat_runs, train, AccuracyStat, RunRecord, TrainData, TrainSettings};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandKind {
    #[serde(rename = "sub6_10hz")]
    Sub6Low,
    #[serde(rename = "sub6_200hz")]
    Sub6High,
    #[serde(rename = "mmwave_10hz")]
    Mmwave,
}

impl BandKind {
    pub const ALL: [BandKind; 3] = [BandKind::Sub6Low, BandKind::Sub6High, BandKind::Mmwave];

    pub fn as_str(self) -> &'static str {
        match self {
            BandKind::Sub6Low => "sub6_10hz",
            BandKind::Sub6High => "sub6_200hz",
            BandKind::Mmwave => "mmwave_10hz",
        }
    }

    pub fn band(self) -> Band {
        match self {
            BandKind::Mmwave => Band::Mmwave,
            _ => Band::Sub6,
        }
    }

    pub fn rate_hz(self) -> f64 {
        match self {
            BandKind::Sub6High => 200.0,
            _ => 10.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BandKind::Sub6Low => "5 GHz @10 Hz",
            BandKind::Sub6High => "5 GHz @200 Hz",
            BandKind::Mmwave => "60 GHz @10 Hz",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BandSetting {
    pub kind: BandKind,
    #[serde(default)]
    pub background_subtraction: bool,
}

/// Windows of one band setting with their frozen split.
#[derive(Clone, Debug)]
pub struct BandData {
    pub setting: BandSetting,
    pub windows: Vec<Window>,
    pub split: SplitAssignment,
    pub num_classes: usize,
}

impl BandData {
    pub fn channels(&self) -> usize {
        self.windows.first().map_or(0, |w| w.channels)
    }

    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            windows: &self.windows,
            split: &self.split,
        }
    }
}

/// Resamples a recording to the rate of `kind` (block-mean decimation).
pub fn to_band_rate(rec: &CsiRecording, kind: BandKind) -> Result<CsiRecording> {
    if rec.band() != kind.band() {
        return Err(Error::InvalidRecording(format!(
            "{} recording {} used for {}",
            rec.band().as_str(),
            rec.session_id(),
            kind.as_str()
        )));
    }
    if rec.rate_hz() == kind.rate_hz() {
        Ok(rec.clone())
    } else {
        downsample(rec, kind.rate_hz(), Decimation::BlockMean)
    }
}

/// Windows every labeled recording, optionally subtracting the mean
/// background profile, and freezes a stratified split.
pub fn prepare_band(
    setting: BandSetting,
    recordings: &[CsiRecording],
    backgrounds: &[CsiRecording],
    window_seconds: f64,
    ratios: [f64; 3],
    split_seed: u64,
) -> Result<BandData> {
    let profile = if setting.background_subtraction {
        if backgrounds.is_empty() {
            return Err(Error::Misuse(format!(
                "{} with background subtraction needs a background recording",
                setting.kind.as_str()
            )));
        }
        let mut parts = Vec::new();
        for b in backgrounds {
            let r = to_band_rate(b, setting.kind)?;
            parts.push((compute_background(&r, BackgroundStat::Mean)?, r.len()));
        }
        Some(BackgroundProfile::merge(&parts)?)
    } else {
        None
    };
    let mut windows = Vec::new();
    for rec in recordings {
        let r = to_band_rate(rec, setting.kind)?;
        for w in segment(&r, window_seconds)?.windows {
            windows.push(match &profile {
                Some(p) => subtract_background(&w, p)?,
                None => w,
            });
        }
    }
    if windows.is_empty() {
        return Err(Error::Misuse(format!("no windows for {}", setting.kind.as_str())));
    }
    let num_classes = windows.iter().map(|w| w.label).max().unwrap_or(0) + 1;
    let split = make_splits(&windows, ratios, split_seed)?;
    Ok(BandData {
        setting,
        windows,
        split,
        num_classes,
    })
}

/// Fills data-dependent sizes left at zero.
pub fn resolve_config(cfg: &ModelConfig, channels: usize, num_classes: usize) -> ModelConfig {
    let mut c = cfg.clone();
    if c.input_channels == 0 {
        c.input_channels = channels;
    }
    if c.num_classes == 0 {
        c.num_classes = num_classes;
    }
    c
}

/// `(a.μ − a.σ) > (b.μ + b.σ)`.
pub fn significantly_better(a: &AccuracyStat, b: &AccuracyStat) -> bool {
    a.mean - a.std > b.mean + b.std
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: Family,
    pub model: String,
    pub configuration: String,
    pub params: usize,
    pub background_subtraction: bool,
    pub sub6_10hz: Option<AccuracyStat>,
    pub sub6_200hz: Option<AccuracyStat>,
    pub mmwave_10hz: Option<AccuracyStat>,
    /// Better of the two 10 Hz bands by mean accuracy.
    pub flag: Option<BandKind>,
}

impl ComparisonRow {
    pub fn stat(&self, kind: BandKind) -> Option<&AccuracyStat> {
        match kind {
            BandKind::Sub6Low => self.sub6_10hz.as_ref(),
            BandKind::Sub6High => self.sub6_200hz.as_ref(),
            BandKind::Mmwave => self.mmwave_10hz.as_ref(),
        }
    }

    fn stat_mut(&mut self, kind: BandKind) -> &mut Option<AccuracyStat> {
        match kind {
            BandKind::Sub6Low => &mut self.sub6_10hz,
            BandKind::Sub6High => &mut self.sub6_200hz,
            BandKind::Mmwave => &mut self.mmwave_10hz,
        }
    }

    pub fn update_flag(&mut self) {
        self.flag = match (&self.sub6_10hz, &self.mmwave_10hz) {
            (Some(lo), Some(mm)) if mm.mean > lo.mean => Some(BandKind::Mmwave),
            (Some(_), _) => Some(BandKind::Sub6Low),
            (None, Some(_)) => Some(BandKind::Mmwave),
            (None, None) => None,
        };
    }
}

/// One training run: a model config on one band setting with one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Job {
    pub config: usize,
    pub band: usize,
    pub seed: u64,
}

pub fn plan_jobs(configs: usize, bands: usize, settings: &TrainSettings) -> Vec<Job> {
    let mut jobs = Vec::with_capacity(configs * bands * settings.repeats);
    for config in 0..configs {
        for band in 0..bands {
            for i in 0..settings.repeats {
                jobs.push(Job {
                    config,
                    band,
                    seed: settings.seed + i as u64,
                });
            }
        }
    }
    jobs
}

pub fn run_job(cfg: &ModelConfig, data: &BandData, settings: &TrainSettings, seed: u64) -> Result<RunRecord> {
    let cfg = resolve_config(cfg, data.channels(), data.num_classes);
    let s = TrainSettings {
        seed,
        ..settings.clone()
    };
    Ok(train(&cfg, data.train_data(), &s)?.1)
}

/// Parameter count reported for a row: the model as built for 5 GHz input
/// when that band is present, else for the first band.
pub fn row_params(cfg: &ModelConfig, bands: &[(BandSetting, usize, usize)]) -> Result<usize> {
    let (_, c, k) = bands
        .iter()
        .find(|(s, _, _)| s.kind.band() == Band::Sub6)
        .or(bands.first())
        .copied()
        .ok_or_else(|| Error::Misuse("no bands to size the model for".into()))?;
    Ok(Model::build(&resolve_config(cfg, c, k), 0)?.count_params())
}

/// Groups job results into one row per (config, background flag). Bands
/// are described by `(setting, channels, classes)`; records are reduced in
/// seed order so the result does not depend on completion order.
pub fn assemble_rows(
    configs: &[ModelConfig],
    bands: &[(BandSetting, usize, usize)],
    results: &[(Job, RunRecord)],
) -> Result<Vec<ComparisonRow>> {
    let mut flags: Vec<bool> = bands.iter().map(|b| b.0.background_subtraction).collect();
    flags.sort();
    flags.dedup();
    let mut rows = Vec::new();
    for (ci, cfg) in configs.iter().enumerate() {
        let params = row_params(cfg, bands)?;
        for &bg in &flags {
            let mut row = ComparisonRow {
                family: cfg.family,
                model: cfg.family.display_name().into(),
                configuration: cfg.describe(),
                params,
                background_subtraction: bg,
                sub6_10hz: None,
                sub6_200hz: None,
                mmwave_10hz: None,
                flag: None,
            };
            for (bi, (setting, _, _)) in bands.iter().enumerate() {
                if setting.background_subtraction != bg {
                    continue;
                }
                let mut recs: Vec<(u64, f64)> = results
                    .iter()
                    .filter(|(j, _)| j.config == ci && j.band == bi)
                    .map(|(j, r)| (j.seed, r.test_accuracy))
                    .collect();
                if recs.is_empty() {
                    continue;
                }
                recs.sort_by_key(|r| r.0);
                let acc: Vec<f64> = recs.iter().map(|r| r.1).collect();
                *row.stat_mut(setting.kind) = Some(AccuracyStat::from_accuracies(&acc)?);
            }
            row.update_flag();
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Serial comparison over every config and band.
pub fn run_comparison(configs: &[ModelConfig], data: &[BandData], settings: &TrainSettings) -> Result<Vec<ComparisonRow>> {
    let mut results = Vec::new();
    for job in plan_jobs(configs.len(), data.len(), settings) {
        let r = run_job(&configs[job.config], &data[job.band], settings, job.seed)?;
        results.push((job, r));
    }
    let bands: Vec<_> = data.iter().map(|d| (d.setting, d.channels(), d.num_classes)).collect();
    assemble_rows(configs, &bands, &results)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    ExclLstmHumanfi,
    ExclAllLstm,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::All, Scope::ExclLstmHumanfi, Scope::ExclAllLstm];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::ExclLstmHumanfi => "excl_lstm_humanfi",
            Scope::ExclAllLstm => "excl_all_lstm",
        }
    }

    pub fn includes(self, f: Family) -> bool {
        match self {
            Scope::All => true,
            Scope::ExclLstmHumanfi => f != Family::LstmHumanfi,
            Scope::ExclAllLstm => !f.is_lstm(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub scope: Scope,
    pub total: usize,
    pub avg_sub6_10hz: Option<f64>,
    pub avg_sub6_200hz: Option<f64>,
    pub avg_mmwave_10hz: Option<f64>,
    /// Rows where the mmWave mean beats the 5 GHz @10 Hz mean.
    pub count_better_than_low: usize,
    pub count_better_than_high: usize,
    pub count_sig_better_low: usize,
    pub count_sig_better_high: usize,
}

pub fn aggregate(rows: &[ComparisonRow], scope: Scope) -> AggregateSummary {
    let kept: Vec<&ComparisonRow> = rows.iter().filter(|r| scope.includes(r.family)).collect();
    let avg = |kind: BandKind| {
        let v: Vec<f64> = kept.iter().filter_map(|r| r.stat(kind)).map(|s| s.mean).collect();
        (!v.is_empty()).then(|| crate::linalg::mean(&v))
    };
    let count = |other: BandKind, sig: bool| {
        kept.iter()
            .filter(|r| match (r.stat(BandKind::Mmwave), r.stat(other)) {
                (Some(m), Some(o)) => {
                    if sig {
                        significantly_better(m, o)
                    } else {
                        m.mean > o.mean
                    }
                }
                _ => false,
            })
            .count()
    };
    AggregateSummary {
        scope,
        total: kept.len(),
        avg_sub6_10hz: avg(BandKind::Sub6Low),
        avg_sub6_200hz: avg(BandKind::Sub6High),
        avg_mmwave_10hz: avg(BandKind::Mmwave),
        count_better_than_low: count(BandKind::Sub6Low, false),
        count_better_than_high: count(BandKind::Sub6High, false),
        count_sig_better_low: count(BandKind::Sub6Low, true),
        count_sig_better_high: count(BandKind::Sub6High, true),
    }
}

pub const DEFAULT_FRACTIONS: [f64; 7] = [0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];

/// Stratified, nested subsample of the train split holding
/// `fraction / split.ratios[0]` of each class. One permutation per class is
/// drawn from `seed`, so smaller fractions take prefixes of larger ones.
pub fn subsample_train(windows: &[Window], split: &SplitAssignment, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let top = split.ratios[0];
    if !(fraction > 0.0 && fraction <= top + 1e-12) {
        return Err(Error::Parameter(format!("fraction {fraction} outside (0, {top}]")));
    }
    let labels: Vec<usize> = split.train.iter().map(|&i| windows[i].label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (class, members) in indices_by_class(&labels) {
        let mut pool: Vec<usize> = members.iter().map(|&m| split.train[m]).collect();
        pool.shuffle(&mut rng);
        let take = libm::floor(pool.len() as f64 * fraction / top + 1e-9) as usize;
        if take == 0 {
            return Err(Error::Stratification {
                class,
                count: 0,
                required: 1,
            });
        }
        out.extend_from_slice(&pool[..take.min(pool.len())]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub train_windows: usize,
    pub stat: AccuracyStat,
}

/// Split used at one learning-curve fraction: subsampled train, untouched
/// validation and test.
pub fn curve_split(data: &BandData, fraction: f64, seed: u64) -> Result<SplitAssignment> {
    Ok(SplitAssignment {
        train: subsample_train(&data.windows, &data.split, fraction, seed)?,
        ..data.split.clone()
    })
}

pub fn learning_curve(cfg: &ModelConfig, data: &BandData, fractions: &[f64], settings: &TrainSettings) -> Result<Vec<CurvePoint>> {
    let cfg = resolve_config(cfg, data.channels(), data.num_classes);
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let split = curve_split(data, f, settings.seed)?;
        let td = TrainData {
            windows: &data.windows,
            split: &split,
        };
        let (stat, _) = repeat_runs(&cfg, td, settings)?;
        out.push(CurvePoint {
            fraction: f,
            train_windows: split.train.len(),
            stat,
        });
    }
    Ok(out)
}

/// Reassembles curve points from per-seed records keyed by fraction index.
pub fn assemble_curve(fractions: &[f64], train_sizes: &[usize], results: &[(usize, u64, RunRecord)]) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for (fi, &f) in fractions.iter().enumerate() {
        let mut recs: Vec<(u64, f64)> = results
            .iter()
            .filter(|(i, _, _)| *i == fi)
            .map(|(_, s, r)| (*s, r.test_accuracy))
            .collect();
        recs.sort_by_key(|r| r.0);
        let acc: Vec<f64> = recs.iter().map(|r| r.1).collect();
        out.push(CurvePoint {
            fraction: f,
            train_windows: train_sizes[fi],
            stat: AccuracyStat::from_accuracies(&acc)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn stat(mean: f64, std: f64) -> AccuracyStat {
        AccuracyStat { mean, std, n: 3 }
    }

    fn row(family: Family, lo: f64, hi: f64, mm: f64, s: f64) -> ComparisonRow {
        let mut r = ComparisonRow {
            family,
            model: family.display_name().into(),
            configuration: String::new(),
            params: 0,
            background_subtraction: false,
            sub6_10hz: Some(stat(lo, s)),
            sub6_200hz: Some(stat(hi, s)),
            mmwave_10hz: Some(stat(mm, s)),
            flag: None,
        };
        r.update_flag();
        r
    }

    #[test]
    fn significance_rule() {
        assert!(significantly_better(&stat(0.963, 0.006), &stat(0.91, 0.017)));
        assert!(!significantly_better(&stat(0.9, 0.02), &stat(0.9, 0.02)));
        assert!(!significantly_better(&stat(0.9, 0.05), &stat(0.8, 0.05)));
    }

    pub(crate) fn six_rows() -> Vec<ComparisonRow> {
        vec![
            // mm > lo (sig), mm > hi (sig)
            row(Family::Tcn, 0.80, 0.85, 0.95, 0.01),
            // mm > lo (not sig), mm < hi
            row(Family::CustomResnet1d, 0.90, 0.95, 0.91, 0.01),
            // mm < both
            row(Family::LstmHumanfi, 0.70, 0.75, 0.60, 0.02),
            // mm > lo (sig), mm > hi (not sig)
            row(Family::LstmHumanfi, 0.80, 0.89, 0.90, 0.02),
            // mm > both, not sig
            row(Family::CnnBilstmDualAttn, 0.90, 0.90, 0.91, 0.02),
            // mm > lo (sig), mm == hi
            row(Family::OptEcaResnet1dJaril, 0.70, 0.85, 0.85, 0.01),
        ]
    }

    #[test]
    fn hand_counted_aggregates() {
        let rows = six_rows();
        let a = aggregate(&rows, Scope::All);
        assert_eq!(a.total, 6);
        assert_eq!((a.count_better_than_low, a.count_better_than_high), (5, 3));
        assert_eq!((a.count_sig_better_low, a.count_sig_better_high), (3, 1));
        assert!((a.avg_mmwave_10hz.unwrap() - (0.95 + 0.91 + 0.60 + 0.90 + 0.91 + 0.85) / 6.0).abs() < 1e-12);
        let a = aggregate(&rows, Scope::ExclLstmHumanfi);
        assert_eq!(a.total, 4);
        assert_eq!((a.count_better_than_low, a.count_better_than_high), (4, 2));
        assert_eq!((a.count_sig_better_low, a.count_sig_better_high), (2, 1));
        let a = aggregate(&rows, Scope::ExclAllLstm);
        assert_eq!(a.total, 3);
        assert_eq!((a.count_better_than_low, a.count_better_than_high), (3, 1));
        assert_eq!((a.count_sig_better_low, a.count_sig_better_high), (2, 1));
    }

    #[test]
    fn identical_bands_count_nothing() {
        let rows: Vec<_> = (0..4).map(|_| row(Family::Tcn, 0.9, 0.9, 0.9, 0.01)).collect();
        let a = aggregate(&rows, Scope::All);
        assert_eq!(
            (a.count_better_than_low, a.count_better_than_high, a.count_sig_better_low, a.count_sig_better_high),
            (0, 0, 0, 0)
        );
    }

    #[test]
    fn table_scope_sizes() {
        // 160 configurations: 64 non-LSTM, 32 CNN-BiLSTM, 64 LSTM-HumanFi.
        let mut rows = Vec::new();
        let fams = [
            (Family::Tcn, 16),
            (Family::CustomResnet1d, 12),
            (Family::CustomEcaResnet1d, 12),
            (Family::OptResnet1dJaril, 12),
            (Family::OptEcaResnet1dJaril, 12),
            (Family::CnnBilstmTemporalAttn, 16),
            (Family::CnnBilstmDualAttn, 16),
            (Family::LstmHumanfi, 64),
        ];
        for (f, n) in fams {
            rows.extend((0..n).map(|_| row(f, 0.8, 0.8, 0.9, 0.01)));
        }
        let totals: Vec<usize> = Scope::ALL.iter().map(|&s| aggregate(&rows, s).total).collect();
        assert_eq!(totals, vec![160, 96, 64]);
    }

    #[test]
    fn flag_follows_ten_hertz_maximum() {
        assert_eq!(row(Family::Tcn, 0.8, 0.99, 0.9, 0.0).flag, Some(BandKind::Mmwave));
        assert_eq!(row(Family::Tcn, 0.95, 0.99, 0.9, 0.0).flag, Some(BandKind::Sub6Low));
    }

    fn labeled(counts: &[usize]) -> Vec<Window> {
        let mut out = Vec::new();
        for (k, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push(Window {
                    samples: vec![0.0; 2],
                    len: 1,
                    channels: 2,
                    label: k,
                    source_session: format!("s{k}"),
                    start_index: i,
                });
            }
        }
        out
    }

    #[test]
    fn subsample_identity_at_top_and_errors_when_empty() {
        let w = labeled(&[40, 40, 40]);
        let split = make_splits(&w, [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!(subsample_train(&w, &split, 0.7, 9).unwrap(), split.train);
        let tiny = labeled(&[10, 4]);
        let split = make_splits(&tiny, [0.7, 0.15, 0.15], 1).unwrap();
        let e = subsample_train(&tiny, &split, 0.1, 9).unwrap_err();
        assert!(matches!(e, Error::Stratification { class: 1, .. }), "{e:?}");
        assert!(subsample_train(&w, &make_splits(&w, [0.7, 0.15, 0.15], 1).unwrap(), 0.8, 9).is_err());
    }

    #[test]
    fn assemble_is_order_independent() {
        let cfgs = vec![ModelConfig::toy(Family::Tcn, 30, 3)];
        let bands = vec![
            (BandSetting { kind: BandKind::Mmwave, background_subtraction: false }, 30, 3),
            (BandSetting { kind: BandKind::Sub6Low, background_subtraction: false }, 52, 3),
        ];
        let rec = |acc: f64| RunRecord {
            seed: 0,
            best_val_accuracy: acc,
            test_accuracy: acc,
            epoch_of_best: 1,
            epochs_run: 1,
            loss_history: vec![1.0],
            val_history: vec![acc],
        };
        let mut results: Vec<(Job, RunRecord)> = vec![
            (Job { config: 0, band: 0, seed: 0 }, rec(0.9)),
            (Job { config: 0, band: 0, seed: 1 }, rec(0.8)),
            (Job { config: 0, band: 1, seed: 0 }, rec(0.7)),
        ];
        let a = assemble_rows(&cfgs, &bands, &results).unwrap();
        results.reverse();
        let b = assemble_rows(&cfgs, &bands, &results).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].flag, Some(BandKind::Mmwave));
        assert!(a[0].sub6_200hz.is_none());
        let c52 = Model::build(&resolve_config(&cfgs[0], 52, 3), 0).unwrap().count_params();
        assert_eq!(a[0].params, c52);
    }

    proptest! {
        #[test]
        fn aggregate_ignores_row_order(seed in any::<u64>()) {
            let mut rows = six_rows();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<_> = Scope::ALL.iter().map(|&s| aggregate(&rows, s)).collect();
            rows.shuffle(&mut rng);
            for (i, &s) in Scope::ALL.iter().enumerate() {
                let a = aggregate(&rows, s);
                prop_assert_eq!(a.total, base[i].total);
                prop_assert_eq!(a.count_sig_better_low, base[i].count_sig_better_low);
                prop_assert_eq!(a.count_better_than_high, base[i].count_better_than_high);
                prop_assert!((a.avg_mmwave_10hz.unwrap() - base[i].avg_mmwave_10hz.unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn significance_implies_higher_mean(am in 0.0f64..1.0, asd in 0.0f64..0.3, bm in 0.0f64..1.0, bsd in 0.0f64..0.3) {
            if significantly_better(&stat(am, asd), &stat(bm, bsd)) {
                prop_assert!(am > bm);
            }
        }

        #[test]
        fn subsamples_are_nested(seed in any::<u64>(), n0 in 10usize..60, n1 in 10usize..60) {
            let w = labeled(&[n0, n1]);
            let split = make_splits(&w, [0.7, 0.15, 0.15], seed).unwrap();
            let mut prev: Option<Vec<usize>> = None;
            for f in DEFAULT_FRACTIONS {
                let s = match subsample_train(&w, &split, f, seed) {
                    Ok(s) => s,
                    Err(_) => break,
                };
                prop_assert!(s.iter().all(|i| split.train.contains(i)));
                if let Some(p) = &prev {
                    prop_assert!(s.iter().all(|i| p.contains(i)));
                }
                prev = Some(s);
            }
        }
    }
}
