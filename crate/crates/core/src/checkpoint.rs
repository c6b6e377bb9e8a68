//! Binary checkpoint format.
//!
//! ```text
//! "GBUD" | version: u32 LE | descriptor length: u32 LE | descriptor (UTF-8 JSON ArchConfig)
//!        | weights: f32 LE, layer order, weight then bias per layer
//! ```

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, DepthNet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GBUD";
pub const VERSION: u32 = 1;

pub fn encode(net: &DepthNet) -> Vec<u8> {
    let descriptor = serde_json::to_vec(net.config()).expect("ArchConfig serializes");
    let mut out = Vec::with_capacity(12 + descriptor.len() + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(&descriptor);
    for p in net.parameters() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Size in bytes of the encoded checkpoint for `net`.
pub fn encoded_len(net: &DepthNet) -> usize {
    let descriptor = serde_json::to_vec(net.config()).expect("ArchConfig serializes");
    12 + descriptor.len() + 4 * net.param_count()
}

fn take(bytes: &[u8], at: usize, len: usize) -> Result<&[u8]> {
    bytes.get(at..at + len).ok_or(Error::Truncated {
        expected: at + len,
        actual: bytes.len(),
    })
}

pub fn decode(bytes: &[u8]) -> Result<DepthNet> {
    if take(bytes, 0, 4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(take(bytes, 4, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let desc_len = u32::from_le_bytes(take(bytes, 8, 4)?.try_into().unwrap()) as usize;
    let descriptor = take(bytes, 12, desc_len)?;
    let config: ArchConfig = serde_json::from_slice(descriptor)
        .map_err(|e| Error::MalformedHeader(format!("architecture descriptor: {e}")))?;
    config.validate()?;

    let specs = config.layer_specs();
    let total: usize = specs.iter().map(|s| s.param_count()).sum();
    let payload_start = 12 + desc_len;
    let expected = payload_start + 4 * total;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after weights",
            bytes.len() - expected
        )));
    }
    let mut floats = bytes[payload_start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut params = Vec::with_capacity(2 * specs.len());
    for s in &specs {
        let shape = s.weight_shape();
        let w: Vec<f32> = floats.by_ref().take(shape.iter().product()).collect();
        params.push(Tensor::new(&shape, w)?);
        let b: Vec<f32> = floats.by_ref().take(s.out_channels).collect();
        params.push(Tensor::new(&[s.out_channels], b)?);
    }
    DepthNet::from_parameters(config, params)
}
