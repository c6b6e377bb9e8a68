//! Helpers shared by the format tests and the acceptance suite.
#![allow(dead_code)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use depthgrad::{io, Error};
use depthgrad_core::model::ArchConfig;
use depthgrad_core::{checkpoint, formats, DepthNet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
}

/// Smallest valid architecture, so fuzzed checkpoints stay tiny.
pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        height: 8,
        width: 8,
        encoder_widths: vec![2, 2, 2, 2],
        decoder_widths: vec![2; 6],
        ..ArchConfig::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Ppm,
    Pfm,
    Checkpoint,
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub files: usize,
    pub rejected: usize,
    pub accepted: usize,
    /// Descriptions of inputs that panicked or produced an unstructured error.
    pub failures: Vec<String>,
}

fn originals(seed: u64) -> [(Kind, Vec<u8>); 3] {
    let ppm = formats::encode_ppm(&random_tensor(&[3, 5, 7], 0.0, 1.0, seed)).unwrap();
    let pfm = formats::encode_pfm(&random_tensor(&[1, 6, 4], -9.0, 9.0, seed + 1)).unwrap();
    let ckpt = checkpoint::encode(&DepthNet::new(tiny_arch(), seed).unwrap());
    [(Kind::Ppm, ppm), (Kind::Pfm, pfm), (Kind::Checkpoint, ckpt)]
}

/// Length of the text header region worth corrupting.
fn header_len(kind: Kind, bytes: &[u8]) -> usize {
    match kind {
        Kind::Ppm | Kind::Pfm => {
            let mut newlines = 0;
            bytes.iter().position(|&b| {
                newlines += usize::from(b == b'\n');
                newlines == 3
            })
            .map_or(bytes.len(), |p| p + 1)
        }
        Kind::Checkpoint => 12 + u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
    }
}

const TOKENS: [&[u8]; 10] = [
    b"P6", b"Pf", b"PF", b"-1.0", b"99999999999", b"0", b"-7", b"#", b"\n", b" ",
];

/// One corrupted variant of `bytes`. Returns the bytes and whether they
/// must be rejected (truncation always must).
fn mutate(kind: Kind, bytes: &[u8], rng: &mut ChaCha8Rng) -> (Vec<u8>, bool) {
    let header = header_len(kind, bytes);
    let mut out = bytes.to_vec();
    match rng.random_range(0..6) {
        0 => {
            let cut = rng.random_range(0..bytes.len());
            out.truncate(cut);
            return (out, true);
        }
        1 => {
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..header);
                out[i] = rng.random();
            }
        }
        2 => {
            let i = rng.random_range(0..header);
            let tok = TOKENS[rng.random_range(0..TOKENS.len())];
            out.splice(i..i, tok.iter().copied());
        }
        3 => {
            let i = rng.random_range(0..header);
            let len = rng.random_range(1..=(header - i).min(8));
            out.drain(i..i + len);
        }
        4 => {
            // Header kept, payload cut to a random shorter length.
            let keep = rng.random_range(header..bytes.len());
            out.truncate(keep);
            return (out, true);
        }
        _ => {
            if kind == Kind::Checkpoint {
                let v: u32 = rng.random();
                let field = if rng.random() { 4 } else { 8 };
                out[field..field + 4].copy_from_slice(&v.to_le_bytes());
            } else {
                let i = rng.random_range(0..header);
                out[i] = b"0123456789 \n-+.eE"[rng.random_range(0..17)];
            }
        }
    }
    (out, false)
}

fn read(kind: Kind, path: &Path) -> Result<(), Error> {
    match kind {
        Kind::Ppm => io::read_ppm(path).map(drop),
        Kind::Pfm => io::read_pfm(path).map(drop),
        Kind::Checkpoint => io::read_checkpoint(path).map(drop),
    }
}

/// Writes `files` corrupted files into `dir` and decodes each from disk.
pub fn fuzz_headers(dir: &Path, files: usize, seed: u64) -> FuzzReport {
    let originals = originals(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FuzzReport::default();
    for n in 0..files {
        let (kind, bytes) = &originals[n % 3];
        let (mutated, must_reject) = mutate(*kind, bytes, &mut rng);
        let path = dir.join(format!("fuzz_{n:05}"));
        std::fs::write(&path, &mutated).unwrap();
        report.files += 1;
        match catch_unwind(AssertUnwindSafe(|| read(*kind, &path))) {
            Err(_) => report.failures.push(format!("{kind:?} case {n}: panic")),
            Ok(Ok(())) if must_reject => report.failures.push(format!("{kind:?} case {n}: truncated input accepted")),
            Ok(Ok(())) => report.accepted += 1,
            Ok(Err(Error::Format { path: p, source })) if p == path && !source.to_string().is_empty() => {
                report.rejected += 1
            }
            Ok(Err(e)) => report.failures.push(format!("{kind:?} case {n}: unstructured error {e}")),
        }
    }
    report
}
