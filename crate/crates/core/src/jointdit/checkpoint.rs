//! Binary checkpoint: magic, format version, JSON header length, JSON
//! header (config plus tensor manifest), then little-endian tensor data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::autodiff::Tensor;
use super::model::{Denoiser, DenoiserConfig};

pub const MAGIC: &[u8; 8] = b"AMXCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    /// Byte offset into the data section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: DenoiserConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Denoiser) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let tensors = model
        .params
        .names()
        .iter()
        .zip(model.params.tensors())
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: [t.rows, t.cols],
                dtype: "f64".into(),
                offset,
            };
            offset += 8 * t.len() as u64;
            e
        })
        .collect();
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        config: model.config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("checkpoint header", e))?;
    let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params.tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Denoiser> {
    let bad = |m: String| Error::invalid("checkpoint", m);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = 20usize.checked_add(hlen).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..data_start]).map_err(|e| Error::json("checkpoint header", e))?;
    let data = &bytes[data_start..];
    let mut model = Denoiser::new(header.config.clone(), 0)?;
    if header.tensors.len() != model.params.len() {
        return Err(bad(format!(
            "{} tensors in checkpoint, model has {}",
            header.tensors.len(),
            model.params.len()
        )));
    }
    for entry in &header.tensors {
        if entry.dtype != "f64" {
            return Err(bad(format!("tensor {} has unsupported dtype {}", entry.name, entry.dtype)));
        }
        let [rows, cols] = entry.shape;
        let start = entry.offset as usize;
        let end = start + 8 * rows * cols;
        if end > data.len() {
            return Err(bad(format!("tensor {} runs past end of data", entry.name)));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let slot = model.params.get_mut(&entry.name);
        if (slot.rows, slot.cols) != (rows, cols) {
            return Err(bad(format!(
                "tensor {} has shape {rows}x{cols}, expected {}x{}",
                entry.name, slot.rows, slot.cols
            )));
        }
        *slot = Tensor::from_vec(rows, cols, values);
    }
    Ok(model)
}

pub fn save(path: &Path, model: &Denoiser) -> Result<()> {
    write_atomic(path, &to_bytes(model)?)
}

pub fn load(path: &Path) -> Result<Denoiser> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
