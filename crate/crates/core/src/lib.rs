//! Dual path network toolkit.
//!
//! * [`tensor`], [`ops`], [`autograd`]: dense tensors, kernels and a
//!   reverse-mode tape.
//! * [`arch`]: declarative architecture specs, the six reference presets and
//!   the network builder for residual, dense and dual path families.
//! * [`complexity`]: analytic parameter and multiply-add accounting.
//! * [`hornn`]: numerical check that residual recurrences are densely
//!   connected recurrences with shared feature functions.
//! * [`train`]: SGD, step schedule, BN refinement, mean-max evaluation,
//!   datasets and checkpoints.

pub mod arch;
pub mod autograd;
pub mod complexity;
pub mod error;
pub mod gradcheck;
pub mod hornn;
pub mod ops;
pub mod tensor;
pub mod train;

pub use autograd::{BnMode, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor};
