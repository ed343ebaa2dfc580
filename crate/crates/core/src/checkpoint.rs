//! `mbsr-ckpt-v1` model archives.
//!
//! Layout: the magic line `mbsr-ckpt-v1\n`, a little-endian `u64` header
//! length, a JSON header (backbone config, training seed and the ordered
//! list of named arrays), then every array as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, Model};
use crate::error::{Error, Result};
use crate::nn::Float;

pub const MAGIC: &[u8] = b"mbsr-ckpt-v1\n";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: BackboneConfig,
    seed: u64,
    arrays: Vec<(String, usize)>,
}

fn arrays_of<T: Float>(model: &mut Model<T>) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    model.visit_params(&mut |name, p| {
        out.push((
            name.to_string(),
            p.value.iter().map(|v| v.as_f64()).collect(),
        ));
    });
    model.visit_buffers(&mut |name, b| {
        out.push((name.to_string(), b.iter().map(|v| v.as_f64()).collect()));
    });
    out
}

pub fn to_bytes<T: Float>(model: &Model<T>, seed: u64) -> Vec<u8> {
    let mut model = model.clone();
    let arrays = arrays_of(&mut model);
    let header = Header {
        config: model.config().clone(),
        seed,
        arrays: arrays.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, values) in &arrays {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Returns the model and the training seed stored with it.
pub fn from_bytes<T: Float>(bytes: &[u8]) -> Result<(Model<T>, u64)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("missing mbsr-ckpt-v1 magic"))?;
    if rest.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let (len, rest) = rest.split_at(8);
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
    if rest.len() < len {
        return Err(bad("truncated header"));
    }
    let (header, mut payload) = rest.split_at(len);
    let header: Header =
        serde_json::from_slice(header).map_err(|e| bad(&format!("bad header: {e}")))?;
    let mut model = Model::<T>::init(&header.config, 0)?;
    let expected: Vec<(String, usize)> = arrays_of(&mut model)
        .into_iter()
        .map(|(n, v)| (n, v.len()))
        .collect();
    if expected != header.arrays {
        return Err(bad("array layout does not match the stored configuration"));
    }
    let total: usize = expected.iter().map(|(_, l)| l).sum();
    if payload.len() != total * 8 {
        return Err(bad(&format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            total * 8
        )));
    }
    let mut take = |dst: &mut [T]| {
        for d in dst.iter_mut() {
            let (v, r) = payload.split_at(8);
            *d = T::lit(f64::from_le_bytes(v.try_into().expect("8 bytes")));
            payload = r;
        }
    };
    model.visit_params(&mut |_, p| take(&mut p.value));
    model.visit_buffers(&mut |_, b| take(b));
    Ok((model, header.seed))
}

pub fn save<T: Float>(path: &Path, model: &Model<T>, seed: u64) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_bytes(model, seed)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Float>(path: &Path) -> Result<(Model<T>, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
