//! Deterministic synthetic gait CSI and a nearest-template spectral oracle.
//!
//! Each class walks at its own cadence `f_k`; every channel sees a harmonic
//! series of that cadence with a per-class amplitude/phase profile, on top of
//! a static per-channel background and white Gaussian noise.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{window_len, Band, CsiRecording, Window};
use crate::{Error, Result};

pub const MIN_FREQ_GAP_HZ: f64 = 0.05;
pub const MAX_CLIPPED_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub sessions_per_class: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub channels: usize,
    pub band: Band,
    /// One `(min, max)` cadence range per class, in Hz.
    #[serde(rename = "gait_freq_range")]
    pub gait_freq_ranges: Vec<(f64, f64)>,
    pub harmonic_count: usize,
    /// Scale of the per-channel harmonic amplitudes.
    #[serde(default = "unit")]
    pub signal_amplitude: f64,
    pub noise_std: f64,
    /// Per-channel base amplitudes; a single value is broadcast.
    pub background_level: Vec<f64>,
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl SynthSpec {
    /// `K` classes with cadences evenly spread over `[lo, hi]` Hz, each class
    /// owning a narrow sub-range.
    pub fn evenly_spaced(num_classes: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        if num_classes == 1 {
            return vec![(lo, lo)];
        }
        let step = (hi - lo) / (num_classes - 1) as f64;
        let half = (step - MIN_FREQ_GAP_HZ).max(0.0) * 0.1;
        (0..num_classes)
            .map(|k| {
                let centre = lo + step * k as f64;
                (centre - half, centre + half)
            })
            .collect()
    }

    pub fn samples_per_session(&self) -> usize {
        libm::round(self.duration_s * self.rate_hz) as usize
    }

    fn background_at(&self, c: usize) -> f64 {
        if self.background_level.len() == 1 {
            self.background_level[0]
        } else {
            self.background_level[c]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes {} < 2", self.num_classes));
        }
        if self.sessions_per_class == 0 {
            return fail("sessions_per_class must be positive".into());
        }
        if self.gait_freq_ranges.len() != self.num_classes {
            return fail(format!(
                "{} cadence ranges for {} classes",
                self.gait_freq_ranges.len(),
                self.num_classes
            ));
        }
        for (k, &(lo, hi)) in self.gait_freq_ranges.iter().enumerate() {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return fail(format!("class {k} cadence range ({lo}, {hi}) is invalid"));
            }
            if hi * self.harmonic_count.max(1) as f64 >= self.rate_hz / 2.0 {
                return fail(format!("class {k} harmonics exceed the Nyquist rate"));
            }
        }
        for a in 0..self.num_classes {
            for b in a + 1..self.num_classes {
                let (la, ha) = self.gait_freq_ranges[a];
                let (lb, hb) = self.gait_freq_ranges[b];
                let gap = (lb - ha).max(la - hb);
                if gap < MIN_FREQ_GAP_HZ {
                    return fail(format!(
                        "cadence ranges of classes {a} and {b} are closer than {MIN_FREQ_GAP_HZ} Hz"
                    ));
                }
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std {} must be non-negative", self.noise_std));
        }
        if !(self.signal_amplitude >= 0.0 && self.signal_amplitude.is_finite()) {
            return fail(format!("signal_amplitude {} must be non-negative", self.signal_amplitude));
        }
        if self.background_level.len() != 1 && self.background_level.len() != self.channels {
            return fail(format!(
                "{} background levels for {} channels",
                self.background_level.len(),
                self.channels
            ));
        }
        if self.background_level.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("background levels must be finite and non-negative".into());
        }
        if self.samples_per_session() == 0 {
            return fail("sessions are shorter than one sample".into());
        }
        self.band
            .check_shape(self.channels, self.rate_hz)
            .map_err(|e| Error::Spec(format!("{e}")))
    }
}

/// Class signatures drawn from the spec seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub gait_freq_hz: Vec<f64>,
    /// `[class][channel][harmonic]`
    pub amplitude: Vec<Vec<Vec<f64>>>,
    pub phase: Vec<Vec<Vec<f64>>>,
    pub background_level: Vec<f64>,
    pub rate_hz: f64,
}

impl SynthTruth {
    /// Noiseless, background-free class signal, `len × C` time-major.
    pub fn class_signal(&self, class: usize, len: usize) -> Vec<f64> {
        let c = self.background_level.len();
        let f = self.gait_freq_hz[class];
        let mut out = vec![0.0; len * c];
        for t in 0..len {
            for ch in 0..c {
                let mut v = 0.0;
                for (h, (a, p)) in self.amplitude[class][ch].iter().zip(&self.phase[class][ch]).enumerate() {
                    let harmonic = (h + 1) as f64;
                    v += a * libm::sin(2.0 * PI * harmonic * f * t as f64 / self.rate_hz + p);
                }
                out[t * c + ch] = v;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SynthWarning {
    /// More than 1% of samples were clipped at zero.
    ExcessiveClipping { fraction: f64 },
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    /// Labeled sessions, class-major then session order.
    pub recordings: Vec<CsiRecording>,
    pub background: CsiRecording,
    pub truth: SynthTruth,
    pub clipped_fraction: f64,
    pub warnings: Vec<SynthWarning>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let c = spec.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gait_freq_hz = Vec::with_capacity(spec.num_classes);
    let mut amplitude = Vec::with_capacity(spec.num_classes);
    let mut phase = Vec::with_capacity(spec.num_classes);
    for &(lo, hi) in &spec.gait_freq_ranges {
        gait_freq_hz.push(if hi > lo { rng.random_range(lo..hi) } else { lo });
        let mut amps = Vec::with_capacity(c);
        let mut phis = Vec::with_capacity(c);
        for _ in 0..c {
            let mut a = Vec::with_capacity(spec.harmonic_count);
            let mut p = Vec::with_capacity(spec.harmonic_count);
            for h in 1..=spec.harmonic_count {
                a.push(spec.signal_amplitude * rng.random_range(0.2..1.0) / h as f64);
                p.push(rng.random_range(0.0..2.0 * PI));
            }
            amps.push(a);
            phis.push(p);
        }
        amplitude.push(amps);
        phase.push(phis);
    }
    let truth = SynthTruth {
        gait_freq_hz,
        amplitude,
        phase,
        background_level: (0..c).map(|ch| spec.background_at(ch)).collect(),
        rate_hz: spec.rate_hz,
    };

    let t = spec.samples_per_session();
    let mut clipped = 0usize;
    let mut total = 0usize;
    let mut render = |signal: Option<&[f64]>, stream: u64| -> Vec<f32> {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        noise_rng.set_stream(stream);
        let mut out = Vec::with_capacity(t * c);
        for i in 0..t * c {
            let mut v = truth.background_level[i % c] + signal.map_or(0.0, |s| s[i]);
            if spec.noise_std > 0.0 {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                v += spec.noise_std * z;
            }
            if v < 0.0 {
                clipped += 1;
                v = 0.0;
            }
            out.push(v as f32);
        }
        total += t * c;
        out
    };

    let mut recordings = Vec::with_capacity(spec.num_classes * spec.sessions_per_class);
    for k in 0..spec.num_classes {
        let signal = truth.class_signal(k, t);
        for s in 0..spec.sessions_per_class {
            let stream = 1 + (k * spec.sessions_per_class + s) as u64;
            let samples = render(Some(&signal), stream);
            recordings.push(CsiRecording::new(
                samples,
                t,
                c,
                spec.rate_hz,
                spec.band,
                format!("{}-p{k}-s{s}", spec.band.as_str()),
                Some(k),
            )?);
        }
    }
    let bg_samples = render(None, 0);
    let background = CsiRecording::new(
        bg_samples,
        t,
        c,
        spec.rate_hz,
        spec.band,
        format!("{}-background", spec.band.as_str()),
        None,
    )?;
    let clipped_fraction = clipped as f64 / total as f64;
    let mut warnings = Vec::new();
    if clipped_fraction > MAX_CLIPPED_FRACTION {
        warnings.push(SynthWarning::ExcessiveClipping {
            fraction: clipped_fraction,
        });
    }
    Ok(SynthDataset {
        recordings,
        background,
        truth,
        clipped_fraction,
        warnings,
    })
}

/// Magnitudes of DFT bins `0..=n/2` with precomputed twiddles.
#[derive(Clone, Debug)]
pub struct Spectrum {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Spectrum {
    pub fn new(n: usize) -> Self {
        let cos = (0..n).map(|i| libm::cos(2.0 * PI * i as f64 / n as f64)).collect();
        let sin = (0..n).map(|i| libm::sin(2.0 * PI * i as f64 / n as f64)).collect();
        Self { n, cos, sin }
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Power `|X_j|²` of a strided series (`x[offset + i·stride]`).
    fn power_into(&self, x: &[f64], offset: usize, stride: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.bins()) {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..self.n {
                let v = x[offset + i * stride];
                let idx = (i * j) % self.n;
                re += v * self.cos[idx];
                im -= v * self.sin[idx];
            }
            *o = re * re + im * im;
        }
    }

    /// Channel-averaged magnitude spectrum of a `n × c` time-major block.
    pub fn channel_mean_magnitude(&self, samples: &[f64], channels: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.bins()];
        let mut p = vec![0.0; self.bins()];
        for ch in 0..channels {
            self.power_into(samples, ch, channels, &mut p);
            acc.iter_mut().zip(&p).for_each(|(a, v)| *a += libm::sqrt(*v));
        }
        acc.iter_mut().for_each(|a| *a /= channels as f64);
        acc
    }
}

/// Per-class mean window spectra of the noiseless class signals.
#[derive(Clone, Debug)]
pub struct OracleTemplates {
    pub templates: Vec<Vec<f64>>,
    spectrum: Spectrum,
}

impl OracleTemplates {
    pub fn from_truth(truth: &SynthTruth, session_len: usize, window_len: usize) -> Result<Self> {
        if window_len == 0 || window_len > session_len {
            return Err(Error::Parameter(format!(
                "window length {window_len} does not fit a {session_len}-sample session"
            )));
        }
        let c = truth.background_level.len();
        let spectrum = Spectrum::new(window_len);
        let count = session_len / window_len;
        let templates = (0..truth.gait_freq_hz.len())
            .map(|k| {
                let signal = truth.class_signal(k, count * window_len);
                let mut mean = vec![0.0; spectrum.bins()];
                for w in signal.chunks(window_len * c) {
                    let m = spectrum.channel_mean_magnitude(w, c);
                    mean.iter_mut().zip(&m).for_each(|(a, v)| *a += v / count as f64);
                }
                mean
            })
            .collect();
        Ok(Self { templates, spectrum })
    }

    pub fn for_spec(spec: &SynthSpec, truth: &SynthTruth, window_seconds: f64) -> Result<Self> {
        Self::from_truth(truth, spec.samples_per_session(), window_len(window_seconds, spec.rate_hz))
    }
}

/// Nearest template (Euclidean) to the channel-averaged magnitude spectrum of
/// a background-subtracted window; ties go to the lowest class.
pub fn oracle_classify(w: &Window, templates: &OracleTemplates) -> usize {
    let m = templates.spectrum.channel_mean_magnitude(&w.samples, w.channels);
    let mut best = (0, f64::INFINITY);
    for (k, t) in templates.templates.iter().enumerate() {
        let d: f64 = t.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Ratio of the dominant to the median non-DC power bin of a recording,
/// averaged over channels and consecutive `segment_len` segments.
pub fn periodicity_ratio(rec: &CsiRecording, segment_len: usize) -> f64 {
    let c = rec.channels();
    let segments = rec.len() / segment_len;
    if segments == 0 || segment_len < 4 {
        return 0.0;
    }
    let spectrum = Spectrum::new(segment_len);
    let mut power = vec![0.0; spectrum.bins()];
    let mut p = vec![0.0; spectrum.bins()];
    let mut block = vec![0.0; segment_len];
    for s in 0..segments {
        for ch in 0..c {
            for (i, b) in block.iter_mut().enumerate() {
                *b = rec.samples()[(s * segment_len + i) * c + ch] as f64;
            }
            let m = block.iter().sum::<f64>() / segment_len as f64;
            block.iter_mut().for_each(|b| *b -= m);
            spectrum.power_into(&block, 0, 1, &mut p);
            power.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
        }
    }
    let mut bins: Vec<f64> = power[1..].to_vec();
    let max = bins.iter().cloned().fold(0.0, f64::max);
    bins.sort_by(f64::total_cmp);
    let median = bins[bins.len() / 2];
    if max == 0.0 {
        0.0
    } else if median == 0.0 {
        f64::INFINITY
    } else {
        max / median
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::segment;
    use crate::preprocess::{compute_background, subtract_background, BackgroundStat};

    pub(crate) fn spec(noise_std: f64) -> SynthSpec {
        SynthSpec {
            num_classes: 5,
            sessions_per_class: 2,
            duration_s: 60.0,
            rate_hz: 10.0,
            channels: 30,
            band: Band::Mmwave,
            gait_freq_ranges: SynthSpec::evenly_spaced(5, 0.5, 2.0),
            harmonic_count: 2,
            signal_amplitude: 1.0,
            noise_std,
            background_level: vec![5.0],
            seed: 11,
        }
    }

    fn oracle_accuracy(spec: &SynthSpec) -> f64 {
        let data = generate(spec).unwrap();
        let templates = OracleTemplates::for_spec(spec, &data.truth, 5.0).unwrap();
        let bg = compute_background(&data.background, BackgroundStat::Mean).unwrap();
        let (mut hit, mut n) = (0, 0);
        for r in &data.recordings {
            for w in segment(r, 5.0).unwrap().windows {
                let w = subtract_background(&w, &bg).unwrap();
                hit += (oracle_classify(&w, &templates) == w.label) as usize;
                n += 1;
            }
        }
        hit as f64 / n as f64
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec(0.1)).unwrap();
        let b = generate(&spec(0.1)).unwrap();
        assert_eq!(a.recordings, b.recordings);
        assert_eq!(a.background, b.background);
        assert_eq!(a.recordings.len(), 10);
        assert!(a.recordings.iter().all(|r| r.samples().iter().all(|v| v.is_finite() && *v >= 0.0)));
    }

    #[test]
    fn degenerate_spec_reproduces_background() {
        let mut s = spec(0.0);
        s.signal_amplitude = 0.0;
        s.background_level = (0..30).map(|c| c as f64 * 0.5 + 1.0).collect();
        let d = generate(&s).unwrap();
        for r in d.recordings.iter().chain(core::iter::once(&d.background)) {
            for row in r.samples().chunks(30) {
                for (c, v) in row.iter().enumerate() {
                    assert_eq!(*v, (c as f64 * 0.5 + 1.0) as f32);
                }
            }
        }
    }

    #[test]
    fn background_profile_recovers_generator_levels() {
        let mut s = spec(0.0);
        s.background_level = (0..30).map(|c| 2.0 + c as f64 * 0.125).collect();
        let d = generate(&s).unwrap();
        let p = compute_background(&d.background, BackgroundStat::Mean).unwrap();
        for (a, b) in p.mean_amplitude.iter().zip(&s.background_level) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn subtraction_isolates_the_motion_component() {
        let s = spec(0.0);
        let d = generate(&s).unwrap();
        let p = compute_background(&d.background, BackgroundStat::Mean).unwrap();
        let signal = d.truth.class_signal(2, s.samples_per_session());
        let w = &segment(&d.recordings[4], 5.0).unwrap().windows[3];
        let delta = subtract_background(w, &p).unwrap();
        for (i, v) in delta.samples.iter().enumerate() {
            let expected = signal[150 * 30 + i];
            // f32 storage of background + delta
            assert!((v - expected).abs() < 1e-5, "{v} vs {expected}");
        }
    }

    #[test]
    fn spec_errors() {
        let mut s = spec(0.1);
        s.gait_freq_ranges[1] = s.gait_freq_ranges[0];
        assert!(matches!(generate(&s), Err(Error::Spec(_))));
        let mut s = spec(0.1);
        s.gait_freq_ranges[1] = (s.gait_freq_ranges[0].1 + 0.01, s.gait_freq_ranges[0].1 + 0.02);
        assert!(generate(&s).is_err());
        let mut s = spec(0.1);
        s.num_classes = 1;
        s.gait_freq_ranges.truncate(1);
        assert!(generate(&s).is_err());
        let mut s = spec(-0.1);
        s.noise_std = -0.1;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn clipping_is_reported() {
        let mut s = spec(1.0);
        s.background_level = vec![0.0];
        let d = generate(&s).unwrap();
        assert!(d.clipped_fraction > 0.3);
        assert!(matches!(d.warnings[0], SynthWarning::ExcessiveClipping { .. }));
        assert!(generate(&spec(0.1)).unwrap().warnings.is_empty());
    }

    #[test]
    fn noiseless_windows_match_their_own_template() {
        assert_eq!(oracle_accuracy(&spec(0.0)), 1.0);
    }

    #[test]
    fn oracle_separates_ten_percent_noise() {
        assert!(oracle_accuracy(&spec(0.1)) >= 0.99);
    }

    #[test]
    fn oracle_accuracy_is_monotone_in_noise() {
        let accs: Vec<f64> = [0.1, 1.0, 4.0].iter().map(|&n| oracle_accuracy(&spec(n))).collect();
        assert!(accs[0] >= accs[1] && accs[1] >= accs[2], "{accs:?}");
    }

    #[test]
    fn pure_noise_is_at_chance() {
        // 1000+ noise windows with balanced labels: accuracy ~ 1/K within 3σ.
        let s = spec(0.0);
        let d = generate(&s).unwrap();
        let templates = OracleTemplates::for_spec(&s, &d.truth, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1200;
        let mut hits = 0;
        for i in 0..n {
            let samples = (0..50 * 30).map(|_| StandardNormal.sample(&mut rng)).collect();
            let w = Window {
                samples,
                len: 50,
                channels: 30,
                label: i % 5,
                source_session: "noise".into(),
                start_index: 0,
            };
            hits += (oracle_classify(&w, &templates) == w.label) as usize;
        }
        let acc = hits as f64 / n as f64;
        let sigma = libm::sqrt(0.2 * 0.8 / n as f64);
        assert!((acc - 0.2).abs() <= 3.0 * sigma, "{acc}");
    }

    #[test]
    fn background_has_no_class_periodicity() {
        let d = generate(&spec(0.1)).unwrap();
        assert!(periodicity_ratio(&d.background, 50) < 2.0);
        assert!(periodicity_ratio(&d.recordings[0], 50) > 2.0);
        let quiet = generate(&SynthSpec { noise_std: 0.0, ..spec(0.0) }).unwrap();
        assert!(periodicity_ratio(&quiet.background, 50) < 2.0);
    }
}
