//! Binary checkpoint: `RFKT`, format version, F/H/layers/classes as u32,
//! then every parameter tensor in declared order as little-endian f32.
//! A JSON sidecar holds the training configuration and seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LstmClassifier, ModelDims, Params};
use super::TrainConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFKT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub seed: u64,
    pub dims: ModelDims,
}

pub fn save_checkpoint(model: &LstmClassifier, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let d = model.dims();
    let mut buf = Vec::with_capacity(24 + 4 * model.params.n_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [CHECKPOINT_VERSION, d.n_features as u32, d.hidden as u32, d.layers as u32, d.n_classes as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for t in model.params.tensors() {
        for &v in t.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let meta = CheckpointMeta {
        config: cfg.clone(),
        seed: cfg.seed,
        dims: d,
    };
    let sidecar = path.with_extension("json");
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&sidecar, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(LstmClassifier, TrainConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    if word(0) != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {}", word(0))));
    }
    let dims = ModelDims {
        n_features: word(1) as usize,
        hidden: word(2) as usize,
        layers: word(3) as usize,
        n_classes: word(4) as usize,
    };
    let mut params = Params::zeros(dims);
    let expected = 24 + 4 * params.n_params();
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut pos = 24;
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as f64;
            pos += 4;
        }
    }
    let sidecar = path.with_extension("json");
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?)?;
    if meta.dims != dims {
        return Err(Error::format(&sidecar, "dimensions disagree with the binary checkpoint"));
    }
    let model = LstmClassifier {
        params,
        dropout: meta.config.dropout,
        dropout_after_last: meta.config.dropout_after_last,
    };
    Ok((model, meta.config))
}
