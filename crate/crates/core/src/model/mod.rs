//! Encoder–decoder transformer with tied embeddings.
//!
//! Pre-norm layers, sinusoidal positions and a single embedding table that
//! also serves as the output projection. Losses are per-token means over
//! valid target positions, so loss weights do not depend on batch size.

mod config;
mod io;
mod loss;
mod transformer;

pub use config::ModelConfig;
pub use io::{FORMAT_VERSION, MAGIC};
pub use loss::smoothed_nll;
pub(crate) use loss::flatten_logits;
pub use transformer::{argmax, Mode, Seq2SeqModel};
