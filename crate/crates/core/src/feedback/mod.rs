//! Training engine: losses, the top-down feedback sweep, batched Hebbian
//! updates and per-epoch metrics.
//!
//! Sign convention: every delta is `-dL/dx`, so all updates read
//! `W += eta * delta x^t` whatever the loss.
//!
//! The three feedback rules differ only in how `R` is used and moved:
//!
//! | rule | feedback through | `R` update           |
//! |------|------------------|----------------------|
//! | BP   | `W^t`            | kept equal to `W^t`  |
//! | FRFB | `R`              | none                 |
//! | URFB | `R`              | same increment as `W^t` |

mod loss;
mod network;
mod train;

pub use loss::{
    argmax, hinge_delta, hinge_loss, hinge_output_delta, softmax_delta, softmax_xent_delta, softmax_xent_loss,
    OutputDelta,
};
pub use network::{Accumulator, Layer, Network, NetworkOptions, Synapse, Trace};
pub use train::{evaluate, train_epoch, MetricsRecord, TrainParams};

use thiserror::Error;

use crate::layers::LayerError;
use crate::netspec::ParseError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spec(#[from] ParseError),
    #[error("sequencing violation: {0}")]
    Sequencing(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, FeedbackError>;

/// Per-layer `corr(W_l, R_l^t)`, masked entries excluded.
pub fn alignment(net: &Network) -> Result<Vec<f64>> {
    net.alignment()
}
