//! Canonical recording files and dataset manifests.
//!
//! A recording file is one JSON header line followed by `t × c`
//! little-endian `f32` amplitudes in time-major order.

use std::fs;
use std::path::{Path, PathBuf};

use gaitwave_core::data::{Band, CsiRecording, DatasetManifest};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const RECORDING_EXT: &str = "csi";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingHeader {
    pub version: u32,
    pub t: usize,
    pub c: usize,
    pub rate_hz: f64,
    pub band: Band,
    pub session_id: String,
    pub person_label: Option<usize>,
}

pub fn encode_recording(rec: &CsiRecording) -> Vec<u8> {
    let header = RecordingHeader {
        version: FORMAT_VERSION,
        t: rec.len(),
        c: rec.channels(),
        rate_hz: rec.rate_hz(),
        band: rec.band(),
        session_id: rec.session_id().to_string(),
        person_label: rec.person_label(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(rec.samples().len() * 4);
    for v in rec.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_recording(bytes: &[u8], path: &Path) -> Result<CsiRecording> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::format(path, "missing header line"))?;
    let header: RecordingHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| CliError::format(path, format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(CliError::format(path, format!("unsupported version {}", header.version)));
    }
    let payload = &bytes[nl + 1..];
    let expected = header
        .t
        .checked_mul(header.c)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CliError::format(path, "header dimensions overflow"))?;
    if payload.len() != expected {
        return Err(CliError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let samples = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    CsiRecording::new(
        samples,
        header.t,
        header.c,
        header.rate_hz,
        header.band,
        header.session_id,
        header.person_label,
    )
    .map_err(|e| CliError::format(path, e))
}

pub fn write_recording(path: &Path, rec: &CsiRecording) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, encode_recording(rec)).map_err(CliError::io(path))
}

pub fn read_recording(path: &Path) -> Result<CsiRecording> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode_recording(&bytes, path)
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

/// Reads and validates a manifest; the returned directory anchors entry paths.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read manifest {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| CliError::format(path, e))?;
    manifest
        .validate(&[])
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

/// Labeled and background recordings of one band.
#[derive(Clone, Debug, Default)]
pub struct BandRecordings {
    pub labeled: Vec<CsiRecording>,
    pub background: Vec<CsiRecording>,
}

/// Loads every entry of `band`. mmWave entries sharing a `pair_group` are
/// joined channel-wise (two 30-element pairs give one 60-channel capture).
pub fn load_band(manifest: &DatasetManifest, base: &Path, band: Band) -> Result<BandRecordings> {
    let mut out = BandRecordings::default();
    let mut groups: Vec<(String, bool, Vec<CsiRecording>)> = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.band == band) {
        let path = base.join(&e.path);
        let rec = read_recording(&path)?;
        if rec.band() != e.band || rec.rate_hz() != e.rate_hz || rec.person_label() != e.person_label {
            return Err(CliError::Validation(format!(
                "{}: header disagrees with its manifest entry",
                path.display()
            )));
        }
        match (&e.pair_group, band) {
            (Some(g), Band::Mmwave) => match groups.iter_mut().find(|(k, bg, _)| k == g && *bg == e.is_background) {
                Some((_, _, members)) => members.push(rec),
                None => groups.push((g.clone(), e.is_background, vec![rec])),
            },
            _ => {
                if e.is_background {
                    out.background.push(rec);
                } else {
                    out.labeled.push(rec);
                }
            }
        }
    }
    for (g, bg, members) in groups {
        let rec = if members.len() == 1 {
            members.into_iter().next().expect("one member")
        } else {
            CsiRecording::concat_channels(&members, g)?
        };
        if bg {
            out.background.push(rec);
        } else {
            out.labeled.push(rec);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec() -> CsiRecording {
        let samples: Vec<f32> = (0..30 * 7).map(|i| (i as f32 * 0.37).sin().abs() * 4.0 + f32::EPSILON).collect();
        CsiRecording::new(samples, 7, 30, 10.0, Band::Mmwave, "p1-s0", Some(1)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let r = rec();
        let bytes = encode_recording(&r);
        let back = decode_recording(&bytes, Path::new("x.csi")).unwrap();
        assert_eq!(back, r);
        let bits = |r: &CsiRecording| r.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&r));
    }

    #[test]
    fn truncation_and_header_errors() {
        let bytes = encode_recording(&rec());
        let e = decode_recording(&bytes[..bytes.len() - 3], Path::new("t.csi")).unwrap_err();
        assert!(matches!(e, CliError::Truncated { expected: 840, found: 837, .. }), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = decode_recording(b"{\"version\":1}\n", Path::new("h.csi")).unwrap_err();
        assert!(matches!(e, CliError::Format { .. }));
        assert!(e.to_string().contains("h.csi"));
        assert!(matches!(decode_recording(b"no header", Path::new("n.csi")), Err(CliError::Format { .. })));
    }

    #[test]
    fn paired_mmwave_entries_join_channels() {
        use gaitwave_core::data::ManifestEntry;
        let dir = tempfile::tempdir().unwrap();
        let a = rec();
        let b = CsiRecording::new(a.samples().to_vec(), 7, 30, 10.0, Band::Mmwave, "p1-s0-b", Some(1)).unwrap();
        write_recording(&dir.path().join("a.csi"), &a).unwrap();
        write_recording(&dir.path().join("b.csi"), &b).unwrap();
        let entry = |p: &str| ManifestEntry {
            path: p.into(),
            band: Band::Mmwave,
            rate_hz: 10.0,
            person_label: Some(1),
            is_background: false,
            pair_group: Some("g1".into()),
        };
        let m = DatasetManifest {
            entries: vec![entry("a.csi"), entry("b.csi")],
            num_classes: 2,
        };
        let path = dir.path().join(MANIFEST_FILE);
        save_manifest(&path, &m).unwrap();
        let (loaded, base) = load_manifest(&path).unwrap();
        assert_eq!(loaded, m);
        let band = load_band(&loaded, &base, Band::Mmwave).unwrap();
        assert_eq!(band.labeled.len(), 1);
        assert_eq!(band.labeled[0].channels(), 60);
    }
}
