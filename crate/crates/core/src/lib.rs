#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod formats;
pub mod kernels;
pub mod model;
mod parallel;
pub mod scene;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use model::{ArchConfig, DepthNet, ForwardOptions, Prediction};
pub use tape::{GradientMap, NodeId, Tape, UnaryKind};
pub use tensor::Tensor;
