//! Spiking neural network decoding of intracortical spike trains.
//!
//! The crate covers parametric LIF dynamics with surrogate gradients, a
//! four-layer convolutional SNN with channel attention and local synaptic
//! stabilization, BPTT training with cross-session protocols, spike-train
//! masking augmentation, and event-driven energy accounting.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod arch;
pub mod augment;
pub mod cli;
pub mod data;
pub mod energy;
pub mod error;
pub mod fsio;
pub mod ops;
pub mod optim;
pub mod seeds;
pub mod spike;
pub mod tensor;
pub mod training;

pub use arch::{Network, NetworkConfig};
pub use error::{Error, Result};
pub use spike::{PlifParams, PlifState, SpikeTensor};
pub use tensor::DenseTensor;
