use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and regularization settings of one encoder–decoder transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub ffn_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub max_positions: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Settings of the reference setup: 256 hidden, 1024 feed-forward, 2 layers,
    /// dropout 0.3, label smoothing 0.1.
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            hidden_size: 256,
            ffn_size: 1024,
            num_layers: 2,
            num_heads: 4,
            dropout_rate: 0.3,
            label_smoothing: 0.1,
            max_positions: 256,
            vocab_size,
        }
    }

    /// Laptop-sized defaults.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            hidden_size: 64,
            ffn_size: 256,
            num_layers: 2,
            num_heads: 2,
            dropout_rate: 0.3,
            label_smoothing: 0.1,
            max_positions: 64,
            vocab_size,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("ffn_size", self.ffn_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}
