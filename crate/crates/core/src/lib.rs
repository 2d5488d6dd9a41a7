//! Siamese multi-class change detection.
//!
//! A frozen convolutional trunk enhanced with adapters, prompt tokens and
//! LoRA encodes both dates; a multi-scale difference module fuses the
//! temporal features; a gated decoder emits per-pixel logits over `K + 1`
//! classes (0 = no change). The crate also carries the composite loss,
//! confusion-matrix metrics, dataset tooling, the training engine and the
//! verification suites used by the `mcds` binary.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod mscad;
pub mod params;
pub mod train;
pub mod verify;

pub use config::Config;
pub use error::{Error, Result};
pub use model::Model;
pub use params::{Forward, Group, ParamStore};
