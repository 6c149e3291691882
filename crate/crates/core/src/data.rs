//! CSI recordings, decimation, windowing and stratified splits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Sub6,
    Mmwave,
}

impl Band {
    pub const SUB6_NATIVE_RATE_HZ: f64 = 200.0;
    pub const SUB6_CHANNELS: usize = 52;
    pub const MMWAVE_RATE_HZ: f64 = 10.0;
    pub const MMWAVE_PAIR_CHANNELS: usize = 30;

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Sub6 => "sub6",
            Band::Mmwave => "mmwave",
        }
    }

    /// Checks the channel count and rate a recording of this band may have.
    pub fn check_shape(self, channels: usize, rate_hz: f64) -> Result<()> {
        match self {
            Band::Sub6 => {
                if channels != Self::SUB6_CHANNELS {
                    return Err(Error::InvalidRecording(format!(
                        "sub6 recordings carry 52 subcarriers, got {channels}"
                    )));
                }
                if integer_factor(Self::SUB6_NATIVE_RATE_HZ, rate_hz).is_none() {
                    return Err(Error::InvalidRecording(format!(
                        "sub6 rate {rate_hz} Hz is not an integer decimation of 200 Hz"
                    )));
                }
            }
            Band::Mmwave => {
                if channels != Self::MMWAVE_PAIR_CHANNELS && channels != 2 * Self::MMWAVE_PAIR_CHANNELS {
                    return Err(Error::InvalidRecording(format!(
                        "mmwave recordings carry 30 or 60 antenna elements, got {channels}"
                    )));
                }
                if (rate_hz - Self::MMWAVE_RATE_HZ).abs() > 1e-9 {
                    return Err(Error::InvalidRecording(format!("mmwave rate must be 10 Hz, got {rate_hz}")));
                }
            }
        }
        Ok(())
    }
}

/// Amplitude-only CSI capture: `t × c` samples, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiRecording {
    samples: Vec<f32>,
    t: usize,
    c: usize,
    rate_hz: f64,
    band: Band,
    session_id: String,
    person_label: Option<usize>,
}

impl CsiRecording {
    pub fn new(
        samples: Vec<f32>,
        t: usize,
        c: usize,
        rate_hz: f64,
        band: Band,
        session_id: impl Into<String>,
        person_label: Option<usize>,
    ) -> Result<Self> {
        if t == 0 || c == 0 {
            return Err(Error::InvalidRecording(format!("empty shape {t}x{c}")));
        }
        if samples.len() != t * c {
            return Err(Error::InvalidRecording(format!(
                "{} samples for declared shape {t}x{c}",
                samples.len()
            )));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidRecording(format!("rate {rate_hz} Hz")));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidRecording(format!(
                "amplitude {} at flat index {pos} is not finite and non-negative",
                samples[pos]
            )));
        }
        band.check_shape(c, rate_hz)?;
        Ok(Self {
            samples,
            t,
            c,
            rate_hz,
            band,
            session_id: session_id.into(),
            person_label,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn person_label(&self) -> Option<usize> {
        self.person_label
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.samples[t * self.c..(t + 1) * self.c]
    }

    /// Channel-wise concatenation of synchronized captures (e.g. two 60 GHz
    /// device pairs). The shortest length wins.
    pub fn concat_channels(parts: &[CsiRecording], session_id: impl Into<String>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Misuse("no recordings to concatenate".into()))?;
        if parts.iter().any(|p| p.band != first.band || p.rate_hz != first.rate_hz || p.person_label != first.person_label) {
            return Err(Error::Dimension("concatenated recordings differ in band, rate or label".into()));
        }
        let t = parts.iter().map(|p| p.t).min().unwrap();
        let c: usize = parts.iter().map(|p| p.c).sum();
        let mut samples = Vec::with_capacity(t * c);
        for ti in 0..t {
            for p in parts {
                samples.extend_from_slice(p.row(ti));
            }
        }
        Self::new(samples, t, c, first.rate_hz, first.band, session_id, first.person_label)
    }
}

/// Fixed-length model input cut from a labeled recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    pub len: usize,
    pub channels: usize,
    pub label: usize,
    pub source_session: String,
    pub start_index: usize,
}

impl Window {
    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.samples[t * self.channels + c]
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Window {
        debug_assert_eq!(samples.len(), self.samples.len());
        Window {
            samples,
            ..self.clone()
        }
    }

    /// Block-mean decimation of the window by `factor`.
    pub fn decimate(&self, factor: usize) -> Window {
        let out_len = self.len / factor;
        Window {
            samples: block_mean(&self.samples, self.channels, factor, out_len),
            len: out_len,
            start_index: self.start_index / factor,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decimation {
    /// Mean of each run of `factor` samples.
    #[default]
    BlockMean,
    /// Keep every `factor`-th sample.
    Stride,
}

fn integer_factor(from: f64, to: f64) -> Option<usize> {
    if !(to > 0.0 && from >= to) {
        return None;
    }
    let f = from / to;
    let r = libm::round(f);
    ((f - r).abs() < 1e-9).then_some(r as usize)
}

fn block_mean<T: Copy + Into<f64>>(samples: &[T], channels: usize, factor: usize, out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_len * channels];
    for o in 0..out_len {
        let dst = &mut out[o * channels..(o + 1) * channels];
        for i in 0..factor {
            let src = &samples[(o * factor + i) * channels..(o * factor + i + 1) * channels];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += (*s).into());
        }
        dst.iter_mut().for_each(|d| *d /= factor as f64);
    }
    out
}

/// Integer-factor decimation to `target_hz`; the trailing partial block is dropped.
pub fn downsample(rec: &CsiRecording, target_hz: f64, mode: Decimation) -> Result<CsiRecording> {
    let factor = integer_factor(rec.rate_hz, target_hz).ok_or(Error::UnsupportedRate {
        from: rec.rate_hz,
        to: target_hz,
    })?;
    let out_len = rec.t / factor;
    if out_len == 0 {
        return Err(Error::Dimension(format!(
            "{} samples cannot be decimated by {factor}",
            rec.t
        )));
    }
    let samples: Vec<f32> = match mode {
        Decimation::BlockMean => block_mean(&rec.samples, rec.c, factor, out_len)
            .into_iter()
            .map(|v| v as f32)
            .collect(),
        Decimation::Stride => (0..out_len).flat_map(|o| rec.row(o * factor).iter().copied()).collect(),
    };
    CsiRecording::new(
        samples,
        out_len,
        rec.c,
        target_hz,
        rec.band,
        rec.session_id.clone(),
        rec.person_label,
    )
}

/// Result of cutting a recording into windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub windows: Vec<Window>,
    /// Trailing samples that did not fill a window.
    pub dropped_samples: usize,
    /// Set when the recording is shorter than one window.
    pub too_short: bool,
}

pub fn window_len(window_seconds: f64, rate_hz: f64) -> usize {
    libm::round(window_seconds * rate_hz) as usize
}

/// Non-overlapping consecutive windows of `window_seconds`.
pub fn segment(rec: &CsiRecording, window_seconds: f64) -> Result<Segmentation> {
    let label = rec
        .person_label
        .ok_or_else(|| Error::Misuse(format!("recording {} has no person label", rec.session_id)))?;
    let len = window_len(window_seconds, rec.rate_hz);
    if len == 0 {
        return Err(Error::Parameter(format!(
            "{window_seconds} s at {} Hz is shorter than one sample",
            rec.rate_hz
        )));
    }
    let count = rec.t / len;
    let windows = (0..count)
        .map(|i| Window {
            samples: rec.samples[i * len * rec.c..(i + 1) * len * rec.c]
                .iter()
                .map(|&v| v as f64)
                .collect(),
            len,
            channels: rec.c,
            label,
            source_session: rec.session_id.clone(),
            start_index: i * len,
        })
        .collect();
    Ok(Segmentation {
        windows,
        dropped_samples: rec.t - count * len,
        too_short: count == 0,
    })
}

/// Disjoint train/validation/test index lists over a window set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

/// Windows per class in ascending class order (absent classes are skipped).
pub(crate) fn indices_by_class(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        buckets[l].push(i);
    }
    buckets.into_iter().enumerate().filter(|(_, b)| !b.is_empty()).collect()
}

/// Per-class stratified split: each class is shuffled with a generator seeded
/// by `seed`, then cut into `floor(n·train)`, `floor(n·val)` and the remainder.
pub fn make_splits(windows: &[Window], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    split_labels(&labels, ratios, seed)
}

pub fn split_labels(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("split ratios {ratios:?} must be fractions summing to 1")));
    }
    if labels.is_empty() {
        return Err(Error::Misuse("no windows to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut idx) in indices_by_class(labels) {
        let n = idx.len();
        if n < 3 {
            return Err(Error::Stratification {
                class,
                count: n,
                required: 3,
            });
        }
        idx.shuffle(&mut rng);
        let n_train = libm::floor(n as f64 * ratios[0] + 1e-9) as usize;
        let n_val = libm::floor(n as f64 * ratios[1] + 1e-9) as usize;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment {
        train,
        val,
        test,
        seed,
        ratios,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub band: Band,
    pub rate_hz: f64,
    pub person_label: Option<usize>,
    #[serde(default)]
    pub is_background: bool,
    /// Entries sharing a group are synchronized captures whose channels are
    /// concatenated when device pairs are fed jointly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_group: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub num_classes: usize,
}

impl DatasetManifest {
    /// Checks label ranges and, for each band in `background_bands`, the
    /// presence of a background capture.
    pub fn validate(&self, background_bands: &[Band]) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Parameter("num_classes must be positive".into()));
        }
        for e in &self.entries {
            match (e.is_background, e.person_label) {
                (true, Some(_)) => {
                    return Err(Error::Parameter(format!("background entry {} carries a label", e.path)))
                }
                (false, None) => return Err(Error::Parameter(format!("entry {} has no label", e.path))),
                (false, Some(l)) if l >= self.num_classes => {
                    return Err(Error::Parameter(format!(
                        "entry {} has label {l} >= num_classes {}",
                        e.path, self.num_classes
                    )))
                }
                _ => {}
            }
        }
        for band in background_bands {
            if !self.entries.iter().any(|e| e.is_background && e.band == *band) {
                return Err(Error::Parameter(format!("no background recording for band {}", band.as_str())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: usize, c: usize, rate: f64, band: Band, f: impl Fn(usize, usize) -> f32) -> CsiRecording {
        let samples = (0..t * c).map(|i| f(i / c, i % c)).collect();
        CsiRecording::new(samples, t, c, rate, band, "s0", Some(1)).unwrap()
    }

    #[test]
    fn recording_invariants_are_enforced() {
        assert!(CsiRecording::new(vec![], 0, 30, 10.0, Band::Mmwave, "x", None).is_err());
        assert!(CsiRecording::new(vec![-1.0; 30], 1, 30, 10.0, Band::Mmwave, "x", None).is_err());
        assert!(CsiRecording::new(vec![f32::NAN; 30], 1, 30, 10.0, Band::Mmwave, "x", None).is_err());
        assert!(CsiRecording::new(vec![1.0; 31], 1, 31, 10.0, Band::Mmwave, "x", None).is_err());
        assert!(CsiRecording::new(vec![1.0; 52], 1, 52, 30.0, Band::Sub6, "x", None).is_err());
        assert!(CsiRecording::new(vec![1.0; 60], 1, 60, 10.0, Band::Mmwave, "x", None).is_ok());
        assert!(CsiRecording::new(vec![1.0; 52], 1, 52, 10.0, Band::Sub6, "x", None).is_ok());
    }

    #[test]
    fn sub6_session_downsamples_to_mmwave_rate() {
        let r = rec(520_000, 52, 200.0, Band::Sub6, |t, c| ((t + c) % 7) as f32);
        let d = downsample(&r, 10.0, Decimation::BlockMean).unwrap();
        assert_eq!((d.len(), d.channels(), d.rate_hz()), (26_000, 52, 10.0));
    }

    #[test]
    fn constant_signal_survives_decimation() {
        let r = rec(400, 52, 200.0, Band::Sub6, |_, _| 3.5);
        for mode in [Decimation::BlockMean, Decimation::Stride] {
            let d = downsample(&r, 10.0, mode).unwrap();
            assert!(d.samples().iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn decimation_drops_partial_block() {
        let r = rec(205, 52, 200.0, Band::Sub6, |t, _| t as f32);
        let d = downsample(&r, 10.0, Decimation::BlockMean).unwrap();
        assert_eq!(d.len(), 10);
        // mean of 180..=199
        assert_eq!(d.row(9)[0], 189.5);
        let s = downsample(&r, 10.0, Decimation::Stride).unwrap();
        assert_eq!(s.row(9)[0], 180.0);
    }

    #[test]
    fn non_integer_factor_is_rejected() {
        let r = rec(100, 52, 200.0, Band::Sub6, |_, _| 1.0);
        assert!(matches!(
            downsample(&r, 30.0, Decimation::BlockMean),
            Err(Error::UnsupportedRate { .. })
        ));
        assert!(downsample(&r, 400.0, Decimation::BlockMean).is_err());
    }

    #[test]
    fn segmentation_counts() {
        let r = rec(26_000, 30, 10.0, Band::Mmwave, |_, _| 1.0);
        let s = segment(&r, 5.0).unwrap();
        assert_eq!(s.windows.len(), 520);
        assert_eq!((s.windows[0].len, s.windows[0].channels), (50, 30));
        assert_eq!(s.windows[519].start_index, 519 * 50);

        let r = rec(26_049, 30, 10.0, Band::Mmwave, |_, _| 1.0);
        let s = segment(&r, 5.0).unwrap();
        assert_eq!((s.windows.len(), s.dropped_samples), (520, 49));

        let r = rec(40, 30, 10.0, Band::Mmwave, |_, _| 1.0);
        let s = segment(&r, 5.0).unwrap();
        assert!(s.windows.is_empty() && s.too_short);
    }

    #[test]
    fn unlabeled_recordings_cannot_be_segmented() {
        let r = CsiRecording::new(vec![1.0; 3000], 100, 30, 10.0, Band::Mmwave, "bg", None).unwrap();
        assert!(matches!(segment(&r, 5.0), Err(Error::Misuse(_))));
    }

    #[test]
    fn decimate_then_segment_commutes_with_segment_then_decimate() {
        let r = rec(4_321, 52, 200.0, Band::Sub6, |t, c| ((t * 31 + c * 7) % 101) as f32 * 0.25);
        let a = segment(&downsample(&r, 10.0, Decimation::BlockMean).unwrap(), 5.0).unwrap();
        let b = segment(&r, 5.0).unwrap();
        assert_eq!(a.windows.len(), b.windows.len());
        for (wa, wb) in a.windows.iter().zip(&b.windows) {
            let wb = wb.decimate(20);
            assert_eq!((wa.len, wa.start_index), (wb.len, wb.start_index));
            for (x, y) in wa.samples.iter().zip(&wb.samples) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn splits_follow_floor_then_remainder() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let s = split_labels(&labels, DEFAULT_RATIOS, 7).unwrap();
        for class in 0..3 {
            let count = |v: &[usize]| v.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (70, 15, 15));
        }
        let small = vec![4usize; 10];
        let s = split_labels(&small, DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert_eq!(split_labels(&labels, DEFAULT_RATIOS, 7).unwrap(), split_labels(&labels, DEFAULT_RATIOS, 7).unwrap());
    }

    #[test]
    fn tiny_class_fails_stratification() {
        let labels = vec![0, 0, 0, 1, 1];
        assert!(matches!(
            split_labels(&labels, DEFAULT_RATIOS, 0),
            Err(Error::Stratification { class: 1, count: 2, .. })
        ));
        assert!(split_labels(&labels, [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn manifest_validation() {
        let entry = |l: Option<usize>, bg: bool| ManifestEntry {
            path: "a".into(),
            band: Band::Mmwave,
            rate_hz: 10.0,
            person_label: l,
            is_background: bg,
            pair_group: None,
        };
        let m = DatasetManifest {
            entries: vec![entry(Some(0), false), entry(Some(1), false)],
            num_classes: 2,
        };
        assert!(m.validate(&[]).is_ok());
        assert!(m.validate(&[Band::Mmwave]).is_err());
        let bad = DatasetManifest {
            entries: vec![entry(Some(2), false)],
            num_classes: 2,
        };
        assert!(bad.validate(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn splits_partition_every_manifest(
            counts in proptest::collection::vec(3usize..40, 1..8),
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| core::iter::repeat_n(c, n)).collect();
            let s = split_labels(&labels, DEFAULT_RATIOS, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (class, &n) in counts.iter().enumerate() {
                let count = |v: &[usize]| v.iter().filter(|&&i| labels[i] == class).count() as f64;
                prop_assert!((count(&s.train) - n as f64 * 0.7).abs() < 1.0);
                prop_assert!((count(&s.val) - n as f64 * 0.15).abs() < 1.0);
            }
        }
    }
}
