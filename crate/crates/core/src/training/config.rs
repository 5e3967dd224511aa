use serde::{Deserialize, Serialize};

use super::optim::AdamParams;
use crate::corpus::DESK_MAX_TOKENS;
use crate::error::{Error, Result};

/// Metric used to pick the checkpoint a training run returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Lowest dev perplexity.
    #[default]
    Perplexity,
    /// Highest dev BLEU under greedy decoding.
    Bleu,
}

/// Optimizer, schedule and loop settings shared by every training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub max_lr: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_tokens: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub selection: Selection,
    /// Decode the dev set after every epoch and log its BLEU.
    pub dev_bleu: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            max_lr: 5e-4,
            warmup_steps: 400,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            max_tokens: DESK_MAX_TOKENS,
            seed: 0,
            clip_norm: None,
            selection: Selection::Perplexity,
            dev_bleu: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return Err(Error::Config(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        if self.selection == Selection::Bleu && !self.dev_bleu {
            return Err(Error::Config("selection by BLEU requires dev_bleu = true".into()));
        }
        Ok(())
    }
}
