//! Background subtraction, standardization and the two training-time
//! augmentations (temporal Gaussian smoothing and Mixup).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{Band, CsiRecording, Window};
use crate::{Error, Result};

/// Static per-channel baseline captured without a person present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundProfile {
    pub mean_amplitude: Vec<f64>,
    pub band: Band,
    pub source_session: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundStat {
    #[default]
    Mean,
    Median,
}

pub fn compute_background(rec: &CsiRecording, stat: BackgroundStat) -> Result<BackgroundProfile> {
    if rec.person_label().is_some() {
        return Err(Error::Misuse(format!(
            "recording {} is labeled; a background profile needs a person-free capture",
            rec.session_id()
        )));
    }
    let (t, c) = (rec.len(), rec.channels());
    let samples = rec.samples();
    let mean_amplitude = (0..c)
        .map(|ch| {
            let column = (0..t).map(|ti| samples[ti * c + ch] as f64);
            match stat {
                BackgroundStat::Mean => column.sum::<f64>() / t as f64,
                BackgroundStat::Median => {
                    let mut v: Vec<f64> = column.collect();
                    v.sort_by(f64::total_cmp);
                    if t % 2 == 1 {
                        v[t / 2]
                    } else {
                        0.5 * (v[t / 2 - 1] + v[t / 2])
                    }
                }
            }
        })
        .collect();
    Ok(BackgroundProfile {
        mean_amplitude,
        band: rec.band(),
        source_session: rec.session_id().into(),
    })
}

impl BackgroundProfile {
    /// Length-weighted combination of several profiles of the same band.
    pub fn merge(profiles: &[(BackgroundProfile, usize)]) -> Result<BackgroundProfile> {
        let (first, _) = profiles.first().ok_or_else(|| Error::Misuse("no background profiles".into()))?;
        let c = first.mean_amplitude.len();
        let total: usize = profiles.iter().map(|(_, n)| n).sum();
        let mut mean = vec![0.0; c];
        for (p, n) in profiles {
            if p.mean_amplitude.len() != c {
                return Err(Error::Dimension("background profiles differ in channel count".into()));
            }
            mean.iter_mut().zip(&p.mean_amplitude).for_each(|(m, v)| *m += v * *n as f64 / total as f64);
        }
        Ok(BackgroundProfile {
            mean_amplitude: mean,
            band: first.band,
            source_session: first.source_session.clone(),
        })
    }
}

fn check_channels(w: &Window, c: usize) -> Result<()> {
    if w.channels != c {
        return Err(Error::Dimension(format!("window has {} channels, profile has {c}", w.channels)));
    }
    Ok(())
}

pub fn subtract_background(w: &Window, bg: &BackgroundProfile) -> Result<Window> {
    check_channels(w, bg.mean_amplitude.len())?;
    let out = w
        .samples
        .chunks(w.channels)
        .flat_map(|row| row.iter().zip(&bg.mean_amplitude).map(|(x, b)| x - b))
        .collect();
    Ok(w.with_samples(out))
}

/// Inverse of [`subtract_background`].
pub fn add_background(w: &Window, bg: &BackgroundProfile) -> Result<Window> {
    check_channels(w, bg.mean_amplitude.len())?;
    let out = w
        .samples
        .chunks(w.channels)
        .flat_map(|row| row.iter().zip(&bg.mean_amplitude).map(|(x, b)| x + b))
        .collect();
    Ok(w.with_samples(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub k: usize,
    pub sigma: f64,
    pub p: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self { k: 5, sigma: 1.0, p: 0.5 }
    }
}

impl SmoothingParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(Error::Parameter(format!("smoothing kernel size {} must be odd", self.k)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("smoothing sigma {} must be positive", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Parameter(format!("smoothing probability {} outside [0, 1]", self.p)));
        }
        Ok(())
    }
}

/// Normalized Gaussian weights for offsets `-(k-1)/2 ..= (k-1)/2`.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Result<Vec<f64>> {
    SmoothingParams { k, sigma, p: 1.0 }.validate()?;
    let half = (k / 2) as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

/// Reflect (edge excluded) index into `0..len`.
fn reflect(i: isize, len: usize) -> usize {
    let last = len as isize - 1;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j > last {
        j = 2 * last - j;
    }
    j.clamp(0, last) as usize
}

/// Smooths every channel along time; the window is returned unchanged when
/// the single per-window draw exceeds `params.p`.
pub fn gaussian_smooth<R: Rng + ?Sized>(w: &Window, params: &SmoothingParams, rng: &mut R) -> Result<Window> {
    params.validate()?;
    if params.k > w.len {
        return Err(Error::Parameter(format!(
            "smoothing kernel {} exceeds window length {}",
            params.k, w.len
        )));
    }
    let draw: f64 = rng.random();
    if draw >= params.p {
        return Ok(w.clone());
    }
    smooth_samples(w, params.k, params.sigma).map(|s| w.with_samples(s))
}

pub(crate) fn smooth_samples(w: &Window, k: usize, sigma: f64) -> Result<Vec<f64>> {
    let kernel = gaussian_kernel(k, sigma)?;
    let half = (k / 2) as isize;
    let (len, c) = (w.len, w.channels);
    let mut out = vec![0.0; w.samples.len()];
    for t in 0..len {
        for (j, weight) in kernel.iter().enumerate() {
            let src = reflect(t as isize + j as isize - half, len);
            let (dst_row, src_row) = (t * c, src * c);
            for ch in 0..c {
                out[dst_row + ch] += weight * w.samples[src_row + ch];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixupParams {
    pub alpha: f64,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl Default for MixupParams {
    fn default() -> Self {
        Self { alpha: 0.2, enabled: true }
    }
}

impl MixupParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("mixup alpha {} must be positive", self.alpha)));
        }
        Ok(())
    }

    /// One Beta(α, α) draw.
    pub fn sample_lambda<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.validate()?;
        let beta = Beta::new(self.alpha, self.alpha).map_err(|e| Error::Parameter(format!("{e}")))?;
        Ok(beta.sample(rng))
    }
}

/// Convex combination of flat rows: row `i` mixes with row `perm[i]`.
pub fn mix_rows(rows: &[f64], row_len: usize, labels: &[f64], k: usize, lambda: f64, perm: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let b = perm.len();
    debug_assert_eq!(rows.len(), b * row_len);
    debug_assert_eq!(labels.len(), b * k);
    let mix = |src: &[f64], width: usize| -> Vec<f64> {
        let mut out = vec![0.0; b * width];
        for (i, &j) in perm.iter().enumerate() {
            for d in 0..width {
                out[i * width + d] = lambda * src[i * width + d] + (1.0 - lambda) * src[j * width + d];
            }
        }
        out
    };
    (mix(rows, row_len), mix(labels, k))
}

pub fn one_hot(labels: &[usize], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        out[i * k + l] = 1.0;
    }
    out
}

/// Mixup of a batch of windows with one-hot labels `ys` (`B × K`, row-major).
/// Returns the mixed windows and their soft labels.
pub fn mixup_batch<R: Rng + ?Sized>(
    xs: &[Window],
    ys: &[f64],
    params: &MixupParams,
    rng: &mut R,
) -> Result<(Vec<Window>, Vec<f64>)> {
    let lambda = params.sample_lambda(rng)?;
    let mut perm: Vec<usize> = (0..xs.len()).collect();
    perm.shuffle(rng);
    mixup_with(xs, ys, lambda, &perm)
}

/// [`mixup_batch`] with an explicit mixing weight and pairing.
pub fn mixup_with(xs: &[Window], ys: &[f64], lambda: f64, perm: &[usize]) -> Result<(Vec<Window>, Vec<f64>)> {
    if xs.len() < 2 {
        return Err(Error::Parameter("mixup needs a batch of at least 2".into()));
    }
    if perm.len() != xs.len() || !ys.len().is_multiple_of(xs.len()) {
        return Err(Error::Dimension("mixup batch, labels and pairing disagree".into()));
    }
    let row_len = xs[0].samples.len();
    if xs.iter().any(|w| w.samples.len() != row_len) {
        return Err(Error::Dimension("mixup windows differ in shape".into()));
    }
    let k = ys.len() / xs.len();
    let flat: Vec<f64> = xs.iter().flat_map(|w| w.samples.iter().copied()).collect();
    let (mixed, labels) = mix_rows(&flat, row_len, ys, k, lambda, perm);
    let windows = xs
        .iter()
        .zip(mixed.chunks(row_len))
        .map(|(w, s)| w.with_samples(s.to_vec()))
        .collect();
    Ok((windows, labels))
}

/// Per-channel mean and standard deviation fitted on training windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const MIN_STD: f64 = 1e-8;

impl ChannelStats {
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a Window>) -> Result<ChannelStats> {
        let windows: Vec<&Window> = windows.into_iter().collect();
        let first = windows.first().ok_or_else(|| Error::Misuse("no windows to fit statistics on".into()))?;
        let c = first.channels;
        let mut sum = vec![0.0; c];
        let mut n = 0usize;
        for w in &windows {
            check_channels(w, c)?;
            for row in w.samples.chunks(c) {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            n += w.len;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; c];
        for w in &windows {
            for row in w.samples.chunks(c) {
                for ch in 0..c {
                    sq[ch] += (row[ch] - mean[ch]) * (row[ch] - mean[ch]);
                }
            }
        }
        let std = sq.iter().map(|s| libm::sqrt(s / n as f64)).collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn identity(c: usize) -> ChannelStats {
        ChannelStats {
            mean: vec![0.0; c],
            std: vec![1.0; c],
        }
    }

    pub(crate) fn apply_in_place(&self, samples: &mut [f64]) {
        let c = self.mean.len();
        for row in samples.chunks_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s.max(MIN_STD);
            }
        }
    }
}

/// Per-channel z-score; standard deviations below `1e-8` are clamped.
pub fn standardize(w: &Window, stats: &ChannelStats) -> Result<Window> {
    check_channels(w, stats.mean.len())?;
    let mut s = w.samples.clone();
    stats.apply_in_place(&mut s);
    Ok(w.with_samples(s))
}
