use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::model::config::{EncoderConfig, ModelConfig};
use crate::model::params::ParamStore;
use crate::model::Model;

const MAGIC: &[u8; 4] = b"AMCK";

#[derive(Serialize, Deserialize)]
struct CkptParam {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the f32 payload.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    kind: String,
    config: Value,
    params: Vec<CkptParam>,
}

pub struct CkptEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub entries: Vec<CkptEntry>,
}

/// Binary layout: magic, u32 LE header length, JSON header, then all selected
/// parameters as little-endian f32 in registration order.
pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: &Value,
    store: &ParamStore<f32>,
    mut include: impl FnMut(&str) -> bool,
) -> Result<()> {
    let mut params = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0u64;
    for (_, e) in store.iter() {
        if !include(&e.name) {
            continue;
        }
        params.push(CkptParam { name: e.name.clone(), shape: e.shape.clone(), offset });
        offset += e.data.len() as u64;
        payload.extend_from_slice(&e.data);
    }
    if params.is_empty() {
        return Err(Error::Contract("checkpoint would contain no parameters".into()));
    }
    let header = CkptHeader { kind: kind.to_string(), config: config.clone(), params };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(8 + header_json.len() + 4 * payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for x in &payload {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: "truncated checkpoint header".into(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {:?}", &bytes[0..4]) });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("header claims {header_len} bytes, file ends early"),
        });
    }
    let header: CkptHeader = serde_json::from_slice(&bytes[8..8 + header_len])?;
    let payload = &bytes[8 + header_len..];
    if payload.len() % 4 != 0 {
        return Err(Error::Format {
            offset: (8 + header_len) as u64,
            msg: "payload is not a whole number of f32 values".into(),
        });
    }
    let n_values = payload.len() / 4;
    let mut entries = Vec::with_capacity(header.params.len());
    let mut expected_offset = 0u64;
    for p in &header.params {
        let len: usize = p.shape.iter().product();
        if p.offset != expected_offset {
            return Err(Error::Format {
                offset: (8 + header_len) as u64 + 4 * p.offset,
                msg: format!("parameter '{}' offset {} is not contiguous", p.name, p.offset),
            });
        }
        if p.offset as usize + len > n_values {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                msg: format!("parameter '{}' overruns the payload", p.name),
            });
        }
        let start = p.offset as usize;
        let data = (0..len)
            .map(|i| {
                let b = 4 * (start + i);
                f32::from_le_bytes(payload[b..b + 4].try_into().unwrap())
            })
            .collect();
        entries.push(CkptEntry { name: p.name.clone(), shape: p.shape.clone(), data });
        expected_offset += len as u64;
    }
    if expected_offset as usize != n_values {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("payload has {n_values} values, header accounts for {expected_offset}"),
        });
    }
    Ok(Checkpoint { kind: header.kind, config: header.config, entries })
}

impl Checkpoint {
    /// Copy every stored entry into the registry; names and shapes must match
    /// exactly. With `require_complete`, the registry must also be covered in
    /// full.
    pub fn apply(&self, store: &mut ParamStore<f32>, require_complete: bool) -> Result<usize> {
        for e in &self.entries {
            let pid = store.find(&e.name).ok_or_else(|| {
                Error::Validation(format!("checkpoint parameter '{}' is not in the model", e.name))
            })?;
            let entry = store.entry(pid);
            if entry.shape != e.shape {
                return Err(Error::Shape(format!(
                    "parameter '{}': checkpoint shape {:?} vs model shape {:?}",
                    e.name, e.shape, entry.shape
                )));
            }
        }
        if require_complete && self.entries.len() != store.len() {
            return Err(Error::Validation(format!(
                "checkpoint covers {} of {} model parameters",
                self.entries.len(),
                store.len()
            )));
        }
        for e in &self.entries {
            let pid = store.find(&e.name).unwrap();
            store.data_mut(pid).copy_from_slice(&e.data);
        }
        Ok(self.entries.len())
    }
}

impl Model<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config)?;
        save_checkpoint(path, "model", &config, &self.store, |_| true)
    }

    pub fn load(path: &Path) -> Result<Model<f32>> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.kind != "model" {
            return Err(Error::Validation(format!(
                "expected a full-model checkpoint, found kind '{}'",
                ckpt.kind
            )));
        }
        let config: ModelConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut model = Model::new(config, 0)?;
        ckpt.apply(&mut model.store, true)?;
        Ok(model)
    }

    /// Persist only the volume-encoder weights (the pretraining artifact).
    pub fn save_encoder(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config.encoder)?;
        save_checkpoint(path, "encoder", &config, &self.store, |n| n.starts_with("enc."))
    }

    /// Load pretrained encoder weights into this model; geometry must match.
    pub fn load_encoder_from(&mut self, path: &Path) -> Result<usize> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.kind != "encoder" {
            return Err(Error::Validation(format!(
                "expected an encoder checkpoint, found kind '{}'",
                ckpt.kind
            )));
        }
        let config: EncoderConfig = serde_json::from_value(ckpt.config.clone())?;
        if config != self.config.encoder {
            return Err(Error::Config(format!(
                "encoder checkpoint geometry {config:?} does not match model {:?}",
                self.config.encoder
            )));
        }
        ckpt.apply(&mut self.store, false)
    }
}
