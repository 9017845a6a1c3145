//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header,
//! then every tensor value (and Adam moment) as little-endian `f64`. The
//! header records names, shapes, trainable flags, payload offsets and a
//! SHA-256 of the payload. Serializing the same state twice yields the same
//! bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, ParameterStore, Tensor};
use crate::textkit::Vocab;
use crate::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BSTCKPT\0";
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
    optimizer: Vec<OptimizerEntry>,
    extra: Option<serde_json::Value>,
    payload_values: u64,
    payload_sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: u64,
}

/// `m` at `offset`, `v` right after it.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerEntry {
    name: String,
    step: u64,
    offset: u64,
}

/// Everything needed to rebuild a model and resume training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParameterStore,
    /// Caller-defined state (training progress, RNG seeds).
    pub extra: Option<serde_json::Value>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_array<const N: usize>(bytes: &[u8], at: usize, field: &str) -> Result<[u8; N]> {
    bytes
        .get(at..at + N)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::load(field, "file truncated"))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload: Vec<f64> = Vec::new();
        let mut tensors = Vec::with_capacity(self.store.len());
        for (name, t) in self.store.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                trainable: self.store.is_trainable(name),
                offset: payload.len() as u64,
            });
            payload.extend(t.data().iter().map(|&v| v as f64));
        }
        let mut optimizer = Vec::new();
        for (name, st) in self.store.optimizer_states() {
            optimizer.push(OptimizerEntry {
                name: name.to_string(),
                step: st.step,
                offset: payload.len() as u64,
            });
            payload.extend(st.m.iter().map(|&v| v as f64));
            payload.extend(st.v.iter().map(|&v| v as f64));
        }
        let payload_bytes: Vec<u8> = payload.iter().flat_map(|v| v.to_le_bytes()).collect();
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors,
            optimizer,
            extra: self.extra.clone(),
            payload_values: payload.len() as u64,
            payload_sha256: sha256_hex(&payload_bytes),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREAMBLE + header_bytes.len() + payload_bytes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload_bytes);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if read_array::<8>(bytes, 0, "magic")? != *MAGIC {
            return Err(Error::load("magic", "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(read_array(bytes, 8, "version")?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::load(
                "version",
                format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let header_len = u64::from_le_bytes(read_array(bytes, 12, "header_len")?) as usize;
        let header_bytes = bytes
            .get(PREAMBLE..PREAMBLE.saturating_add(header_len))
            .ok_or_else(|| Error::load("header", "file truncated"))?;
        let header: Header = serde_json::from_slice(header_bytes).map_err(|e| Error::load("header", e.to_string()))?;
        let payload_bytes = &bytes[PREAMBLE + header_len..];
        let expected = header.payload_values as usize * 8;
        if payload_bytes.len() != expected {
            return Err(Error::load(
                "payload",
                format!("{} bytes, expected {expected}", payload_bytes.len()),
            ));
        }
        if sha256_hex(payload_bytes) != header.payload_sha256 {
            return Err(Error::load("payload_sha256", "checksum mismatch"));
        }
        let payload: Vec<f64> = payload_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let slice = |offset: u64, n: usize, field: &str| -> Result<Vec<Real>> {
            payload
                .get(offset as usize..offset as usize + n)
                .map(|s| s.iter().map(|&v| v as Real).collect())
                .ok_or_else(|| Error::load(field, "offset out of range"))
        };

        let mut store = ParameterStore::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let field = format!("tensors.{}", e.name);
            let t = Tensor::new(e.shape.clone(), slice(e.offset, n, &field)?)
                .map_err(|err| Error::load(&field, err.to_string()))?;
            store
                .insert(e.name.clone(), t, e.trainable)
                .map_err(|err| Error::load(&field, err.to_string()))?;
        }
        for e in &header.optimizer {
            let field = format!("optimizer.{}", e.name);
            let n = store
                .get(&e.name)
                .map_err(|err| Error::load(&field, err.to_string()))?
                .numel();
            let state = AdamState {
                m: slice(e.offset, n, &field)?,
                v: slice(e.offset + n as u64, n, &field)?,
                step: e.step,
            };
            store
                .restore_optimizer_state(&e.name, state)
                .map_err(|err| Error::load(&field, err.to_string()))?;
        }
        if header.config.decoder.vocab_size != header.vocab.len() {
            return Err(Error::load("vocab", "size does not match decoder config"));
        }
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            store,
            extra: header.extra,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
