//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Every primitive executes eagerly and is recorded on a [`Tape`]; a
//! single [`Tape::backward`] call from a scalar loss then accumulates
//! gradients in reverse tape order. Besides the usual dense algebra the
//! tape knows the edge-segment primitives graph attention needs
//! (`gather_rows`, `scatter_add_rows`, `segment_softmax`) and the three
//! pieces of a leaky integrate-and-fire step, whose spike nonlinearity
//! back-propagates through a rectangular surrogate.
//!
//! ```
//! use spikinggat::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let w = tape.param(Tensor::from_vec(1, 2, vec![1.0, -2.0]).unwrap());
//! let x = tape.constant(Tensor::from_vec(2, 1, vec![3.0, 4.0]).unwrap());
//! let y = tape.matmul(w, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.value(y).item(), -5.0);
//! assert_eq!(grads.wrt(w).data(), &[3.0, 4.0]);
//! ```

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, RELATIVE_FLOOR};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::rect_surrogate;

/// Negative-side slope of the attention LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[cfg(test)]
mod tests;
