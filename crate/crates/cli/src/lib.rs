//! Files, datasets and the command-line pipeline around `depthgrad-core`.

pub mod ablate;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod io;
pub mod manifest;
pub mod plot;
pub mod report;
pub mod training;

pub use error::{Error, Result};
