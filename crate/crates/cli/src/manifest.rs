//! Run manifests: the flags, seeds and content hashes of one command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: io::sha256_file(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub flags: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl RunManifest {
    pub fn new(command: &str, flags: &impl Serialize, seeds: Vec<u64>) -> Result<Self> {
        // Via text so f32 flags keep their short decimal form.
        let flags = serde_json::to_string(flags)
            .and_then(|text| serde_json::from_str(&text))
            .map_err(|source| Error::Json {
                path: PathBuf::from("<flags>"),
                source,
            })?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            flags,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn inputs<'a>(mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<Self> {
        for p in paths {
            self.inputs.push(FileRecord::of(p)?);
        }
        Ok(self)
    }

    pub fn outputs<'a>(mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<Self> {
        for p in paths {
            self.outputs.push(FileRecord::of(p)?);
        }
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// Manifest location for a command whose main output is the file `out`:
/// `model.ckpt` becomes `model.run.json`.
pub fn path_for(out: &Path) -> PathBuf {
    out.with_extension("run.json")
}
