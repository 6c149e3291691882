//! Trained-model archives: a JSON index line naming every tensor with its
//! shape, dtype and byte offset, then a little-endian `f32` payload.

use std::fs;
use std::path::Path;

use gaitwave_core::models::{Model, ModelConfig, ParamStore, Tensor};
use gaitwave_core::preprocess::ChannelStats;
use gaitwave_core::train::TrainedModel;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    /// Running statistics are stored but not trained.
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub config: ModelConfig,
    pub stats: ChannelStats,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(m: &TrainedModel) -> Vec<u8> {
    let store = m.model.params();
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    let mut add = |t: &Tensor, trainable: bool| {
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "f32".into(),
            offset: payload.len(),
            trainable,
        });
        for v in &t.value {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    };
    store.params.iter().for_each(|t| add(t, true));
    store.buffers.iter().for_each(|t| add(t, false));
    let index = CheckpointIndex {
        config: m.model.config().clone(),
        stats: m.stats.clone(),
        tensors,
    };
    let mut out = serde_json::to_vec(&index).expect("index serializes");
    out.push(b'\n');
    out.extend(payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::format(path, "missing index line"))?;
    let index: CheckpointIndex = serde_json::from_slice(&bytes[..nl]).map_err(|e| CliError::format(path, e))?;
    let payload = &bytes[nl + 1..];
    let mut store = ParamStore::default();
    for e in &index.tensors {
        if e.dtype != "f32" {
            return Err(CliError::format(path, format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if end > payload.len() {
            return Err(CliError::Truncated {
                path: path.to_path_buf(),
                expected: end,
                found: payload.len(),
            });
        }
        let value = payload[e.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let t = Tensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            value,
        };
        if e.trainable {
            store.params.push(t);
        } else {
            store.buffers.push(t);
        }
    }
    let mut model = Model::build(&index.config, 0)?;
    model.load_store(store).map_err(|e| CliError::format(path, e))?;
    Ok(TrainedModel {
        model,
        stats: index.stats,
    })
}

pub fn save_checkpoint(path: &Path, m: &TrainedModel) -> Result<()> {
    fs::write(path, encode_checkpoint(m)).map_err(CliError::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gaitwave_core::models::Family;

    #[test]
    fn round_trip_preserves_predictions() {
        let cfg = ModelConfig::toy(Family::CustomEcaResnet1d, 4, 3);
        let m = TrainedModel {
            model: Model::build(&cfg, 5).unwrap(),
            stats: ChannelStats::identity(4),
        };
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes, Path::new("m.ckpt")).unwrap();
        let x: Vec<f64> = (0..2 * 12 * 4).map(|i| (i as f64 * 0.1).sin()).collect();
        let a = m.model.forward(&x, 2).unwrap();
        let b = back.model.forward(&x, 2).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-4);
        }
        assert_eq!(back.model.params().buffers.len(), m.model.params().buffers.len());
        let e = decode_checkpoint(&bytes[..bytes.len() - 1], Path::new("m.ckpt")).unwrap_err();
        assert!(matches!(e, CliError::Truncated { .. }));
    }
}
