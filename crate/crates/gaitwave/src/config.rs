//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use gaitwave_core::data::DEFAULT_RATIOS;
use gaitwave_core::experiments::{resolve_config, BandKind, BandSetting, DEFAULT_FRACTIONS};
use gaitwave_core::models::{Model, ModelConfig};
use gaitwave_core::synth::SynthSpec;
use gaitwave_core::train::TrainSettings;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::synth_io::validate_specs;

pub const OUT_ENV: &str = "GAITWAVE_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated into `<output_dir>/data` before training.
    Synth(Vec<SynthSpec>),
    /// Relative paths resolve against the config file's directory.
    Manifest(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS,
            seed: 0,
        }
    }
}

fn default_curve_band() -> BandSetting {
    BandSetting {
        kind: BandKind::Mmwave,
        background_subtraction: true,
    }
}

fn default_fractions() -> Vec<f64> {
    DEFAULT_FRACTIONS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub model: ModelConfig,
    #[serde(default = "default_curve_band")]
    pub band: BandSetting,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
}

fn default_window_seconds() -> f64 {
    5.0
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub bands: Vec<BandSetting>,
    #[serde(default = "default_window_seconds")]
    pub window_seconds: f64,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "default_true")]
    pub comparison: bool,
    #[serde(default)]
    pub learning_curve: Option<CurveConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub save_checkpoints: bool,
}

impl ExperimentConfig {
    /// Parses and validates a config file. A relative manifest path is
    /// anchored at the config's directory; `GAITWAVE_OUT` replaces
    /// `output_dir` when set.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if let DatasetSource::Manifest(m) = &mut cfg.dataset {
            if m.is_relative() {
                *m = path.parent().unwrap_or(Path::new("")).join(&*m);
            }
        }
        if let Some(out) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            cfg.output_dir = PathBuf::from(out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.split.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        match &self.dataset {
            DatasetSource::Synth(specs) => validate_specs(specs)?,
            DatasetSource::Manifest(p) => {
                if !p.is_file() {
                    return bad(format!("manifest {} does not exist", p.display()));
                }
            }
        }
        if !self.comparison && self.learning_curve.is_none() {
            return bad("nothing to run: comparison is off and no learning_curve is given".into());
        }
        if self.comparison {
            if self.models.is_empty() {
                return bad("at least one model config is required".into());
            }
            if self.bands.is_empty() {
                return bad("at least one band setting is required".into());
            }
        }
        for (i, b) in self.bands.iter().enumerate() {
            if self.bands[..i].contains(b) {
                return bad(format!("band setting {} listed twice", b.kind.as_str()));
            }
        }
        if !(self.window_seconds > 0.0 && self.window_seconds.is_finite()) {
            return bad(format!("window_seconds must be positive, got {}", self.window_seconds));
        }
        let r = self.split.ratios;
        if r.iter().any(|v| v.is_nan() || *v < 0.0) || r[0] <= 0.0 || (r.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad(format!("split ratios {r:?} must be non-negative with positive train and sum to 1"));
        }
        let mut models: Vec<&ModelConfig> = self.models.iter().collect();
        if let Some(c) = &self.learning_curve {
            models.push(&c.model);
            if c.fractions.is_empty() {
                return bad("learning_curve.fractions is empty".into());
            }
            if let Some(f) = c.fractions.iter().find(|f| !(**f > 0.0 && **f <= r[0] + 1e-12)) {
                return bad(format!("learning-curve fraction {f} outside (0, {}]", r[0]));
            }
        }
        for m in models {
            // Placeholder sizes only matter when the config leaves them at zero.
            let probe = resolve_config(m, 30, 2);
            probe.validate().map_err(|e| CliError::Validation(format!("{}: {e}", m.family.as_str())))?;
            self.train
                .validate(&probe)
                .map_err(|e| CliError::Validation(format!("{}: {e}", m.family.as_str())))?;
            Model::build(&probe, 0).map_err(|e| CliError::Validation(format!("{}: {e}", m.family.as_str())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("c.json");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn missing_manifest_is_a_validation_error() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            r#"{"dataset":{"manifest":"nope/manifest.json"},"bands":[{"kind":"mmwave_10hz"}],
                "models":[{"family":"tcn","channels":[4,8],"kernel_size":2}]}"#,
        );
        let e = ExperimentConfig::load(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("manifest"), "{e}");
    }

    #[test]
    fn unknown_keys_and_empty_models_rejected() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("m.json"), "{}").unwrap();
        let p = write(d.path(), r#"{"dataset":{"manifest":"m.json"},"bands":[{"kind":"mmwave_10hz"}],"colour":1}"#);
        assert_eq!(ExperimentConfig::load(&p).unwrap_err().exit_code(), 2);
        let p = write(d.path(), r#"{"dataset":{"manifest":"m.json"},"bands":[{"kind":"mmwave_10hz"}]}"#);
        let e = ExperimentConfig::load(&p).unwrap_err();
        assert!(e.to_string().contains("model"), "{e}");
    }

    #[test]
    fn defaults_fill_in() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("m.json"), "{}").unwrap();
        let p = write(
            d.path(),
            r#"{"dataset":{"manifest":"m.json"},"bands":[{"kind":"sub6_10hz","background_subtraction":true}],
                "models":[{"family":"lstm_humanfi","hidden_dim":8}],
                "learning_curve":{"model":{"family":"tcn","channels":[4,8],"kernel_size":2}},
                "train":{"epochs":3,"standardize":false}}"#,
        );
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.window_seconds, 5.0);
        assert_eq!(c.split.ratios, DEFAULT_RATIOS);
        assert_eq!(c.train.epochs, 3);
        assert!(!c.train.standardize);
        assert_eq!(c.train.batch_size, 32);
        let curve = c.learning_curve.unwrap();
        assert_eq!(curve.fractions.len(), 7);
        assert_eq!(curve.band, default_curve_band());
    }

    #[test]
    fn standardize_accepts_flag_or_table() {
        let t: TrainSettings = serde_json::from_str(r#"{"standardize":{"enabled":false}}"#).unwrap();
        assert!(!t.standardize);
        let t: TrainSettings = serde_json::from_str(r#"{"standardize":true,"mixup":{"alpha":0.4}}"#).unwrap();
        assert!(t.standardize);
        assert_eq!(t.mixup.alpha, 0.4);
        assert!(serde_json::from_str::<TrainSettings>(r#"{"standardize":{"on":true}}"#).is_err());
    }

    #[test]
    fn curve_fraction_above_train_ratio_rejected() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("m.json"), "{}").unwrap();
        let p = write(
            d.path(),
            r#"{"dataset":{"manifest":"m.json"},"bands":[],"comparison":false,
                "learning_curve":{"model":{"family":"tcn","channels":[4],"kernel_size":2},"fractions":[0.8]}}"#,
        );
        assert!(ExperimentConfig::load(&p).unwrap_err().to_string().contains("0.8"));
    }
}
