//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `RSUNCKPT`, a little-endian `u32` format version,
//! a little-endian `u32` byte length of a JSON header, the JSON header
//! (`{"config": NetworkConfig, "tensors": [{"name", "len"}, ...]}`), then every
//! tensor's values as little-endian `f32` in header order: trainable
//! parameters first, then normalisation running statistics. Values are stored
//! bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::resunet::{NetworkConfig, ResUNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RSUNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(net: &ResUNet) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut body = Vec::new();
    let params = net.params();
    let buffers = net.buffers();
    let tensors = params
        .iter()
        .map(|p| (&p.name, &p.value))
        .chain(buffers.iter().map(|b| (&b.name, &b.value)));
    for (name, value) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            len: value.len(),
        });
        for v in value {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        config: net.config().clone(),
        tensors: entries,
    })
    .expect("header serialises");
    let mut out = Vec::with_capacity(16 + header.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ResUNet> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let hend = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(&e.to_string()))?;
    let mut net = ResUNet::new(&header.config, 0)?;
    let mut body = &bytes[hend..];
    let mut read = |name: &str, dst: &mut Vec<f32>, entry: Option<&TensorEntry>| -> Result<()> {
        let e = entry.ok_or_else(|| bad("fewer tensors than the architecture needs"))?;
        if e.name != name || e.len != dst.len() {
            return Err(bad(&format!("tensor {} (len {}) does not match {name} (len {})", e.name, e.len, dst.len())));
        }
        if body.len() < 4 * e.len {
            return Err(bad("truncated tensor data"));
        }
        for (i, v) in dst.iter_mut().enumerate() {
            *v = f32::from_le_bytes(body[4 * i..4 * i + 4].try_into().unwrap());
        }
        body = &body[4 * e.len..];
        Ok(())
    };
    let mut entries = header.tensors.iter();
    for p in net.params_mut() {
        read(&p.name.clone(), &mut p.value, entries.next())?;
    }
    for b in net.buffers_mut() {
        read(&b.name.clone(), &mut b.value, entries.next())?;
    }
    if entries.next().is_some() || !body.is_empty() {
        return Err(bad("trailing data after the last tensor"));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &ResUNet, path: &Path) -> Result<()> {
    crate::io::create_parent(path)?;
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ResUNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
