//! Adaptive multi-teacher knowledge distillation for low-resource
//! sequence-to-sequence translation, on a small self-contained tensor stack.

pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod corpus;
pub mod distillation;
pub mod model;
pub mod training;
