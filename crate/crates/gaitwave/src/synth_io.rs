//! Writes synthetic datasets as canonical recordings plus a manifest.

use std::fs;
use std::path::Path;

use gaitwave_core::data::{segment, DatasetManifest, ManifestEntry};
use gaitwave_core::synth::{generate, SynthDataset, SynthSpec, SynthWarning};
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::format::{save_manifest, write_recording, MANIFEST_FILE, RECORDING_EXT};

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    One(SynthSpec),
    Many(Vec<SynthSpec>),
}

/// Reads a spec file holding one spec or a list (one per band).
pub fn load_specs(path: &Path) -> Result<Vec<SynthSpec>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read spec {}: {e}", path.display())))?;
    let specs = match serde_json::from_str::<SpecFile>(&text) {
        Ok(SpecFile::One(s)) => vec![s],
        Ok(SpecFile::Many(v)) => v,
        Err(_) => {
            // Re-parse as a single spec for a field-level message.
            let e = serde_json::from_str::<SynthSpec>(&text).err();
            let msg = e.map_or_else(|| "not a spec or list of specs".to_string(), |e| e.to_string());
            return Err(CliError::Validation(format!("{}: {msg}", path.display())));
        }
    };
    validate_specs(&specs)?;
    Ok(specs)
}

pub fn validate_specs(specs: &[SynthSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(CliError::Validation("no synthetic specs given".into()));
    }
    for s in specs {
        s.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let k = specs[0].num_classes;
    let sessions = specs[0].sessions_per_class;
    if specs.iter().any(|s| s.num_classes != k || s.sessions_per_class != sessions) {
        return Err(CliError::Validation(
            "synthetic specs must agree on num_classes and sessions_per_class".into(),
        ));
    }
    for (i, a) in specs.iter().enumerate() {
        if specs[..i].iter().any(|b| b.band == a.band) {
            return Err(CliError::Validation(format!("two synthetic specs for band {}", a.band.as_str())));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandSummary {
    pub band: String,
    pub windows_per_class: Vec<usize>,
    pub clipped_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub num_classes: usize,
    pub recordings: usize,
    pub bands: Vec<BandSummary>,
}

impl std::fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "classes: {}, recordings: {}", self.num_classes, self.recordings)?;
        for b in &self.bands {
            let w: Vec<String> = b.windows_per_class.iter().map(|n| n.to_string()).collect();
            writeln!(
                f,
                "  {}: windows per class [{}], clipped {:.4}%",
                b.band,
                w.join(", "),
                100.0 * b.clipped_fraction
            )?;
        }
        Ok(())
    }
}

/// Generates every spec and writes `<out>/<band>/<session>.csi` files and
/// `<out>/manifest.json`. An existing manifest is only replaced with `force`.
pub fn write_synth(specs: &[SynthSpec], out_dir: &Path, window_seconds: f64, force: bool) -> Result<(DatasetManifest, SynthSummary)> {
    validate_specs(specs)?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(CliError::Refused(manifest_path));
    }
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let mut entries = Vec::new();
    let mut bands = Vec::new();
    let mut count = 0;
    for spec in specs {
        let data: SynthDataset = generate(spec)?;
        for w in &data.warnings {
            match w {
                SynthWarning::ExcessiveClipping { fraction } => log::warn!(
                    "{}: {:.2}% of samples clipped at zero",
                    spec.band.as_str(),
                    100.0 * fraction
                ),
            }
        }
        let mut per_class = vec![0; spec.num_classes];
        for rec in data.recordings.iter().chain(std::iter::once(&data.background)) {
            let rel = format!("{}/{}.{RECORDING_EXT}", spec.band.as_str(), rec.session_id());
            write_recording(&out_dir.join(&rel), rec)?;
            if let Some(l) = rec.person_label() {
                per_class[l] += segment(rec, window_seconds)?.windows.len();
            }
            entries.push(ManifestEntry {
                path: rel,
                band: spec.band,
                rate_hz: spec.rate_hz,
                person_label: rec.person_label(),
                is_background: rec.person_label().is_none(),
                pair_group: None,
            });
            count += 1;
        }
        bands.push(BandSummary {
            band: spec.band.as_str().into(),
            windows_per_class: per_class,
            clipped_fraction: data.clipped_fraction,
        });
    }
    let manifest = DatasetManifest {
        entries,
        num_classes: specs[0].num_classes,
    };
    save_manifest(&manifest_path, &manifest)?;
    Ok((
        manifest,
        SynthSummary {
            num_classes: specs[0].num_classes,
            recordings: count,
            bands,
        },
    ))
}
