//! `SSCK` checkpoints.
//!
//! Layout: magic `SSCK`, version `u16`, a length-prefixed JSON block with the
//! configuration, then one entry per parameter until the end of the file:
//! `name_len u16, name, rank u8, dims u32[rank], f32[product of dims]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use zoomnet_core::train::TrainConfig;
use zoomnet_core::{Model, PipelineConfig, Tensor};

use crate::error::{Error, Result};
use crate::wire::{len_u16, len_u32, put_f32s, put_json, write_file, Reader};

pub const MAGIC: &[u8; 4] = b"SSCK";
pub const VERSION: u16 = 1;
const KIND: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub pipeline: PipelineConfig,
    /// False for the identity-grid baseline.
    pub sampler: bool,
    pub train: Option<TrainConfig>,
    /// Number of completed epochs.
    pub epochs_done: usize,
}

pub fn encode(model: &Model, train: Option<&TrainConfig>, epochs_done: usize) -> Result<Vec<u8>> {
    let config = CheckpointConfig {
        pipeline: model.config.clone(),
        sampler: model.saliency.is_some(),
        train: train.cloned(),
        epochs_done,
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_json(&mut out, &config)?;
    for (name, t) in model.param_names().iter().zip(model.params()) {
        out.extend_from_slice(&len_u16(name.len(), "tensor name")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.rank()).map_err(|_| Error::format(KIND, "rank above 255"))?);
        for &d in t.shape() {
            out.extend_from_slice(&len_u32(d, "tensor dimension")?.to_le_bytes());
        }
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

/// Rebuilds the model described by the configuration block and fills in every
/// parameter. Missing, unknown, duplicated or misshapen tensors are errors.
pub fn decode(bytes: &[u8]) -> Result<(CheckpointConfig, Model)> {
    let mut r = Reader::new(bytes, KIND);
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::format(KIND, "bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(KIND, format!("unsupported version {version}")));
    }
    let config: CheckpointConfig = r.json()?;
    let mut model = Model::new(config.pipeline.clone(), 0, config.sampler)?;
    let names = model.param_names();
    let mut seen = vec![false; names.len()];
    while !r.is_empty() {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.vec(len)?).map_err(|_| Error::format(KIND, "tensor name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let idx = names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::format(KIND, format!("unknown tensor {name}")))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::format(KIND, format!("tensor {name} appears twice")));
        }
        let mut params = model.params_mut();
        if params[idx].shape() != dims.as_slice() {
            return Err(Error::format(
                KIND,
                format!("tensor {name} has shape {dims:?}, expected {:?}", params[idx].shape()),
            ));
        }
        let count = dims.iter().product();
        *params[idx] = Tensor::new(&dims, r.f32s(count)?)?;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::format(KIND, format!("missing tensor {}", names[i])));
    }
    Ok((config, model))
}

pub fn save(path: &Path, model: &Model, train: Option<&TrainConfig>, epochs_done: usize) -> Result<()> {
    write_file(path, &encode(model, train, epochs_done)?)
}

pub fn load(path: &Path) -> Result<(CheckpointConfig, Model)> {
    decode(&fs::read(path).map_err(Error::io(path))?)
}
