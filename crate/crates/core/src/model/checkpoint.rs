//! Self-describing checkpoint container.
//!
//! Layout: 8-byte magic `PMQCKPT1`, little-endian `u32` format version,
//! `u64` header length, JSON header, raw little-endian tensor payload in
//! header order, and a SHA-256 digest of everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Tensor, UNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"PMQCKPT1";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    /// Model parameters.
    Param,
    /// Auxiliary state such as optimizer moments.
    State,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    section: Section,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Everything stored in a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: Vec<Tensor<T>>,
    pub state: Vec<Tensor<T>>,
    pub metadata: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &UNet<T>, metadata: serde_json::Value) -> Self {
        Self { config: model.config().clone(), params: model.params().to_vec(), state: Vec::new(), metadata }
    }

    pub fn into_model(self) -> Result<(UNet<T>, Vec<Tensor<T>>, serde_json::Value)> {
        let mut model = UNet::build(&self.config, 0)?;
        model.load_params(self.params)?;
        Ok((model, self.state, self.metadata))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tensors = self.params.iter().map(|t| (t, Section::Param)).chain(self.state.iter().map(|t| (t, Section::State)));
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        for (t, section) in tensors {
            entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), section });
            payload.reserve(t.data.len() * T::BYTES);
            for v in &t.data {
                v.write_le(&mut payload);
            }
        }
        let header = Header { dtype: T::DTYPE.to_string(), config: self.config.clone(), metadata: self.metadata.clone(), tensors: entries };
        let header = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;

        let mut buf = Vec::with_capacity(24 + header.len() + payload.len() + DIGEST_LEN);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&payload);
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);

        // Write beside the target and rename so readers never see a partial file.
        let tmp = path.with_extension("partial");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::format(path, reason);
        if buf.len() < 20 + DIGEST_LEN || &buf[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!("format version {version}, this build reads {FORMAT_VERSION}")));
        }
        let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupt)"));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| bad("header overruns file"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end]).map_err(|e| Error::format(path, format!("header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(Error::IncompatibleCheckpoint(format!("checkpoint stores {} parameters, requested {}", header.dtype, T::DTYPE)));
        }

        let mut payload = &body[header_end..];
        let mut params = Vec::new();
        let mut state = Vec::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let bytes = n * T::BYTES;
            if payload.len() < bytes {
                return Err(bad("payload shorter than header declares"));
            }
            let data = payload[..bytes].chunks_exact(T::BYTES).map(T::read_le).collect();
            payload = &payload[bytes..];
            let t = Tensor { name: entry.name, shape: entry.shape, data };
            match entry.section {
                Section::Param => params.push(t),
                Section::State => state.push(t),
            }
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self { config: header.config, params, state, metadata: header.metadata })
    }

    /// Fails unless this checkpoint can serve a model built from `expected`.
    pub fn ensure_compatible(&self, expected: &ModelConfig) -> Result<()> {
        let c = &self.config;
        let mismatch =
            |what: &str, a: String, b: String| Err(Error::IncompatibleCheckpoint(format!("{what}: checkpoint has {a}, expected {b}")));
        if c.in_bands != expected.in_bands {
            return mismatch("in_bands", c.in_bands.to_string(), expected.in_bands.to_string());
        }
        if c.depth != expected.depth || c.base_features != expected.base_features || c.kernel_size != expected.kernel_size {
            return mismatch(
                "architecture",
                format!("depth {} width {} kernel {}", c.depth, c.base_features, c.kernel_size),
                format!("depth {} width {} kernel {}", expected.depth, expected.base_features, expected.kernel_size),
            );
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Scalar>(model: &UNet<T>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model, serde_json::Value::Null).save(path)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<UNet<T>> {
    Checkpoint::load(path)?.into_model().map(|(m, _, _)| m)
}
