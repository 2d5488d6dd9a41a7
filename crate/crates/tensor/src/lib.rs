//! Dense n-dimensional tensors with a dynamic reverse-mode autodiff tape.
//!
//! A [`Tape`] records every operation executed on its [`Var`] handles during a
//! forward pass. [`Tape::backward`] replays the record in exact reverse order
//! and returns the adjoints of every tracked leaf. The tape is rebuilt for each
//! forward pass.
//!
//! The operation set is deliberately small: it covers the convolutions,
//! normalisations, activations, reshaping and reductions needed by a siamese
//! change-detection network and its segmentation losses.

mod element;
mod error;
pub mod gradcheck;
mod ops;
mod rng;
mod tape;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use ops::norm::{RunningStats, BN_EPS, BN_MOMENTUM};
pub use ops::{batch_norm, concat, conv2d, depthwise_conv2d, linear};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Execution mode for layers whose behaviour differs between training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}
