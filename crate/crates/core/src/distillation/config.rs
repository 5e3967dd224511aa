use serde::{Deserialize, Serialize};

use super::weights::{ContributionMode, TemperatureMode};
use crate::error::{Error, Result};

/// Shape of the λ2 ramp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealShape {
    #[default]
    Linear,
    Logistic,
}

/// Loss weighting and teacher-weighting settings for distillation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Weight of the likelihood term, constant over the run.
    pub lambda1: f64,
    pub lambda2_start: f64,
    pub lambda2_end: f64,
    pub anneal_shape: AnnealShape,
    /// Steepness of the logistic ramp.
    pub logistic_k: f64,
    /// β of the running geometric average.
    pub smoothing_decay: f64,
    /// Turning this off uses each batch's raw weights directly.
    pub smoothing: bool,
    pub temperature: TemperatureMode,
    pub contribution: ContributionMode,
    /// Evaluate the teachers once per training sentence up front instead
    /// of on every mini-batch. Results are bit-identical either way.
    pub cache_teacher_outputs: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2_start: 0.5,
            lambda2_end: 3.0,
            anneal_shape: AnnealShape::Linear,
            logistic_k: 10.0,
            smoothing_decay: 0.7,
            smoothing: true,
            temperature: TemperatureMode::Adaptive,
            contribution: ContributionMode::Adaptive,
            cache_teacher_outputs: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("lambda1", self.lambda1),
            ("lambda2_start", self.lambda2_start),
            ("lambda2_end", self.lambda2_end),
            ("logistic_k", self.logistic_k),
        ];
        if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
        }
        if self.lambda2_start > self.lambda2_end {
            return Err(Error::Config(format!(
                "lambda2_start {} exceeds lambda2_end {}",
                self.lambda2_start, self.lambda2_end
            )));
        }
        if self.anneal_shape == AnnealShape::Logistic && self.logistic_k == 0.0 {
            return Err(Error::Config("logistic_k must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing_decay) {
            return Err(Error::Config(format!("smoothing_decay {} outside [0, 1)", self.smoothing_decay)));
        }
        self.temperature.validate()
    }

    /// Effective smoothing decay: zero when smoothing is switched off.
    pub fn effective_decay(&self) -> f64 {
        if self.smoothing {
            self.smoothing_decay
        } else {
            0.0
        }
    }
}

/// λ2 at `step` of `total_steps`, rising from `lambda2_start` to `lambda2_end`.
///
/// Steps past the end are clamped to the final value.
pub fn lambda2_schedule(step: usize, total_steps: usize, config: &DistillConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Contract("lambda2 schedule needs at least one step".into()));
    }
    let (a, b) = (config.lambda2_start, config.lambda2_end);
    if step >= total_steps {
        return Ok(b);
    }
    let x = step as f64 / total_steps as f64;
    let frac = match config.anneal_shape {
        AnnealShape::Linear => x,
        AnnealShape::Logistic => {
            let sigma = |u: f64| 1.0 / (1.0 + (-config.logistic_k * (u - 0.5)).exp());
            let (lo, hi) = (sigma(0.0), sigma(1.0));
            (sigma(x) - lo) / (hi - lo)
        }
    };
    Ok(a + (b - a) * frac)
}
