//! Byte-level codecs for binary PPM (`P6`) RGB images and grayscale PFM
//! (`Pf`) float maps.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest accepted image side; guards allocations on hostile headers.
pub const MAX_SIDE: usize = 1 << 14;

/// Encodes a `3 × h × w` tensor with values in `[0, 1]` as `P6` with
/// maxval 255. Values are clamped and rounded half-up.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw("encode_ppm")?;
    if c != 3 {
        return Err(Error::ShapeMismatch {
            op: "encode_ppm",
            dim: "channels",
            expected: 3,
            actual: c,
        });
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            let v = image.data()[ch * plane + p].clamp(0.0, 1.0);
            out.push(libm::floorf(v * 255.0 + 0.5) as u8);
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut header = Header::new(bytes);
    if header.token()? != "P6" {
        return Err(Error::BadMagic);
    }
    let w = header.dimension("width")?;
    let h = header.dimension("height")?;
    let maxval = header.number("maxval")?;
    if maxval != 255 {
        return Err(Error::MalformedHeader(format!("unsupported maxval {maxval}")));
    }
    let start = header.end_of_header()?;
    let expected = start + 3 * w * h;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let pixels = &bytes[start..expected];
    let plane = w * h;
    let mut data = alloc::vec![0.0f32; 3 * plane];
    for (p, rgb) in pixels.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + p] = rgb[ch] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Encodes a `1 × h × w` map as little-endian `Pf` (scale `-1.0`), rows
/// stored bottom to top.
pub fn encode_pfm(map: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = map.chw("encode_pfm")?;
    if c != 1 {
        return Err(Error::ShapeMismatch {
            op: "encode_pfm",
            dim: "channels",
            expected: 1,
            actual: c,
        });
    }
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for row in map.data().chunks_exact(w).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor> {
    let mut header = Header::new(bytes);
    match header.token()? {
        "Pf" => {}
        "PF" => return Err(Error::MalformedHeader("colour PFM is not supported".into())),
        _ => return Err(Error::BadMagic),
    }
    let w = header.dimension("width")?;
    let h = header.dimension("height")?;
    let scale_token = header.token()?;
    let scale: f32 = scale_token
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("invalid scale {scale_token:?}")))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(Error::MalformedHeader(format!("invalid scale {scale_token:?}")));
    }
    if scale > 0.0 {
        return Err(Error::MalformedHeader("big-endian PFM is not supported".into()));
    }
    let start = header.end_of_header()?;
    let expected = start + 4 * w * h;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(w * h);
    for row in bytes[start..expected].chunks_exact(4 * w).rev() {
        data.extend(row.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())));
    }
    Tensor::new(&[1, h, w], data)
}

/// Whitespace-separated ASCII header tokens; exactly one whitespace byte
/// separates the last token from the binary payload.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            if self.pos - start > 32 {
                return Err(Error::MalformedHeader("header token too long".into()));
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Truncated {
                expected: self.pos + 1,
                actual: self.bytes.len(),
            });
        }
        core::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::MalformedHeader("non-ASCII header".into()))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::MalformedHeader(format!("invalid {what} {t:?}")))
    }

    fn dimension(&mut self, what: &str) -> Result<usize> {
        let v = self.number(what)?;
        if v == 0 || v > MAX_SIDE {
            return Err(Error::MalformedHeader(format!("{what} {v} out of range")));
        }
        Ok(v)
    }

    fn end_of_header(&self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            Some(_) => Err(Error::MalformedHeader(String::from("missing header terminator"))),
            None => Err(Error::Truncated {
                expected: self.pos + 1,
                actual: self.bytes.len(),
            }),
        }
    }
}
