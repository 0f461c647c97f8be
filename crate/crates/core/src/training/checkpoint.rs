//! Checkpoint file layout: the magic bytes `TQCK`, a little-endian `u32`
//! format version, a `u64` header length, a JSON header and the raw
//! little-endian tensor data the header indexes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::Adam;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::instrument::{hex_digest, vocabulary_hash, InstrumentTable};
use crate::nn::{Model, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TQCK";

/// Progress of a training run at the moment it was saved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// First epoch not yet run.
    pub next_epoch: usize,
    pub best_validation: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    train: TrainConfig,
    dtype: String,
    vocabulary: Vec<String>,
    vocabulary_hash: String,
    config_hash: String,
    has_inferrer: bool,
    state: TrainState,
    adam_t: Option<u64>,
    tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub state: TrainState,
    pub optimizer: Option<Adam>,
}

pub fn config_hash(cfg: &ModelConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(cfg).expect("config serializes").as_bytes());
    hex_digest(h)
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Config(format!("unsupported parameter dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        other => return Err(Error::Config(format!("unsupported parameter dtype {other:?}"))),
    }
    Ok(())
}

fn tensor_from(bytes: &[u8], shape: &[usize], dtype: DType) -> Result<Tensor> {
    let t = match dtype {
        DType::F32 => {
            let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        _ => {
            let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
    };
    Ok(t)
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    train: &TrainConfig,
    table: &InstrumentTable,
    state: &TrainState,
    optimizer: Option<&Adam>,
) -> Result<()> {
    let mut data = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, t: &Tensor, data: &mut Vec<u8>| -> Result<()> {
        tensors.push(TensorEntry {
            name,
            shape: t.dims().to_vec(),
            offset: data.len(),
        });
        tensor_bytes(t, data)
    };
    for (name, var) in model.params.iter() {
        push(name.clone(), var.as_tensor(), &mut data)?;
    }
    if let Some(opt) = optimizer {
        for (name, (m, v)) in &opt.moments {
            push(format!("adam.m.{name}"), m, &mut data)?;
            push(format!("adam.v.{name}"), v, &mut data)?;
        }
    }
    let vocabulary = table.names();
    let header = Header {
        train: TrainConfig {
            model: model.config.clone(),
            ..train.clone()
        },
        dtype: dtype_name(model.dtype())?.into(),
        vocabulary_hash: vocabulary_hash(&vocabulary),
        vocabulary,
        config_hash: config_hash(&model.config),
        has_inferrer: model.inferrer.is_some(),
        state: state.clone(),
        adam_t: optimizer.map(|o| o.t),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn incompatible(msg: impl Into<String>) -> Error {
    Error::IncompatibleCheckpoint(msg.into())
}

/// Loads a checkpoint, refusing files written for another instrument
/// vocabulary, another format version or with an inconsistent config hash.
pub fn load_checkpoint(path: &Path, table: &InstrumentTable) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(incompatible(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| incompatible("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let data = &bytes[16 + hlen..];

    if config_hash(&header.train.model) != header.config_hash {
        return Err(incompatible("config hash does not match the stored configuration"));
    }
    if vocabulary_hash(&header.vocabulary) != header.vocabulary_hash {
        return Err(incompatible("vocabulary hash does not match the stored vocabulary"));
    }
    if header.vocabulary != table.names() {
        return Err(incompatible(format!(
            "instrument vocabulary differs ({} stored classes, {} expected)",
            header.vocabulary.len(),
            table.len()
        )));
    }
    let dtype = match header.dtype.as_str() {
        "f32" => DType::F32,
        "f64" => DType::F64,
        other => return Err(incompatible(format!("unknown dtype {other}"))),
    };
    let width = if dtype == DType::F32 { 4 } else { 8 };

    let mut model = Model::new(header.train.model.clone(), table.len(), dtype, 0)?;
    if header.has_inferrer {
        model.attach_inferrer(0)?;
    }
    let mut moments: BTreeMap<String, (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
    let mut loaded = 0usize;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let raw = data
            .get(e.offset..e.offset + n * width)
            .ok_or_else(|| incompatible(format!("tensor {} is truncated", e.name)))?;
        let t = tensor_from(raw, &e.shape, dtype)?;
        if let Some(rest) = e.name.strip_prefix("adam.m.") {
            moments.entry(rest.to_string()).or_default().0 = Some(t);
        } else if let Some(rest) = e.name.strip_prefix("adam.v.") {
            moments.entry(rest.to_string()).or_default().1 = Some(t);
        } else {
            if model.params.get(&e.name).is_none() {
                return Err(incompatible(format!("unexpected parameter {}", e.name)));
            }
            model
                .params
                .assign(&e.name, &t)
                .map_err(|err| incompatible(format!("{}: {err}", e.name)))?;
            loaded += 1;
        }
    }
    if loaded != model.params.iter().count() {
        return Err(incompatible("checkpoint is missing parameters"));
    }
    let optimizer = header.adam_t.map(|t| {
        let mut opt = Adam::new(header.train.adam);
        opt.t = t;
        opt.moments = moments
            .into_iter()
            .filter_map(|(k, (m, v))| Some((k, (m?, v?))))
            .collect();
        opt
    });
    Ok(Checkpoint {
        model,
        train: header.train,
        state: header.state,
        optimizer,
    })
}
