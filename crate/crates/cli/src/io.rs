//! File wrappers around the core codecs, plus hashing and JSON helpers.

use std::fs;
use std::path::Path;

use depthgrad_core::{checkpoint, formats, DepthNet, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating missing parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    formats::decode_ppm(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    write_bytes(path, &formats::encode_ppm(image)?)
}

pub fn read_pfm(path: &Path) -> Result<Tensor> {
    formats::decode_pfm(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_pfm(path: &Path, map: &Tensor) -> Result<()> {
    write_bytes(path, &formats::encode_pfm(map)?)
}

pub fn read_checkpoint(path: &Path) -> Result<DepthNet> {
    checkpoint::decode(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_checkpoint(path: &Path, net: &DepthNet) -> Result<()> {
    write_bytes(path, &checkpoint::encode(net))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// `1 × h × w` map of 0/1 values for a boolean mask.
pub fn mask_to_map(mask: &[bool], h: usize, w: usize) -> Result<Tensor> {
    Ok(Tensor::new(&[1, h, w], mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())?)
}

pub fn map_to_mask(map: &Tensor) -> Vec<bool> {
    map.data().iter().map(|&v| v > 0.5).collect()
}
