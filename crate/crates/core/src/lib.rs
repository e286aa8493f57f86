//! Spiking graph attention networks.
//!
//! A [`model::Model`] stacks multi-head graph attention layers whose
//! aggregated messages drive leaky integrate-and-fire neurons over a
//! short time window. Spikes feed the next layer, the output layer
//! integrates without firing, and its time-averaged membrane gives the
//! class logits. Training unrolls the window and back-propagates through
//! it with a rectangular surrogate for the spike derivative.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: CSR graphs, preprocessing, batching, and the on-disk
//!   dataset format.
//! - [`autodiff`]: the tape-based reverse-mode engine.
//! - [`attention`]: edge logits, neighbourhood softmax, aggregation, and
//!   head combination.
//! - [`lif`]: neuron dynamics, input encoding, surrogate, and readout.
//! - [`model`]: the full network with node, edge, and graph heads.
//! - [`train`]: Adam, learning-rate schedule, the epoch loop, and metrics.
//! - [`config`]: the flat `key=value` run configuration.

pub mod attention;
pub mod autodiff;
pub mod config;
pub mod error;
pub mod graph;
pub mod lif;
pub mod model;
pub mod scalar;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/lif.md")]
    mod lif {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
