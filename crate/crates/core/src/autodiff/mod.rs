//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation as it is evaluated. Parameters enter
//! the tape as trainable leaves via [`Tape::param`]; constants (masks, teacher
//! distributions) enter via [`Tape::constant`] and never receive gradients.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
