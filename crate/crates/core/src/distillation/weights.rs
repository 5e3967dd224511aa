use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to weights before geometric averaging, so that a teacher
/// whose weight underflows to zero can still recover.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// How the perplexity logits are scaled before the softmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureMode {
    /// `softmax(-ppl)`.
    None,
    /// `softmax(-ppl / τ)` with a constant τ.
    Fixed(f64),
    /// `softmax(-ppl / τ)` with τ derived from the agreement of the teachers.
    Adaptive,
}

impl TemperatureMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TemperatureMode::Fixed(t) if !(t.is_finite() && t > 0.0) => {
                Err(Error::Config(format!("fixed temperature must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for TemperatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TemperatureMode::None => write!(f, "none"),
            TemperatureMode::Fixed(t) => write!(f, "fixed={t}"),
            TemperatureMode::Adaptive => write!(f, "adaptive"),
        }
    }
}

impl std::str::FromStr for TemperatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mode = match s {
            "none" => TemperatureMode::None,
            "adaptive" => TemperatureMode::Adaptive,
            _ => match s.strip_prefix("fixed=") {
                Some(t) => TemperatureMode::Fixed(
                    t.parse()
                        .map_err(|_| Error::Config(format!("bad temperature value {t:?}")))?,
                ),
                None => {
                    return Err(Error::Config(format!(
                        "temperature must be adaptive, none or fixed=<τ>, got {s:?}"
                    )))
                }
            },
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Per-batch weighting of the teachers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContributionMode {
    /// Weights follow the teachers' mini-batch perplexities.
    #[default]
    Adaptive,
    /// Every teacher gets `1 / L` regardless of perplexity.
    Equal,
}

impl std::fmt::Display for ContributionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContributionMode::Adaptive => "adaptive",
            ContributionMode::Equal => "equal",
        })
    }
}

impl std::str::FromStr for ContributionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(ContributionMode::Adaptive),
            "equal" => Ok(ContributionMode::Equal),
            _ => Err(Error::Config(format!("contribution must be adaptive or equal, got {s:?}"))),
        }
    }
}

/// Contribution weights for one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionWeights {
    pub perplexities: Vec<f64>,
    /// This batch's weights before smoothing.
    pub raw: Vec<f64>,
    /// Weights actually used in the loss.
    pub smoothed: Vec<f64>,
    pub temperature: f64,
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `τ = (1 - (max S - min S)) / N` for a probability vector `S` of length N.
///
/// A single teacher gets `τ = 1`.
pub fn adaptive_temperature(s: &[f64]) -> Result<f64> {
    match s.len() {
        0 => Err(Error::Contract("temperature of an empty weight vector".into())),
        1 => Ok(1.0),
        n => {
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = s.iter().copied().fold(f64::INFINITY, f64::min);
            Ok((1.0 - (max - min)) / n as f64)
        }
    }
}

/// Softmax over negative perplexities, with the requested temperature.
///
/// In adaptive mode τ is computed from `S = softmax(-ppl)` and the weights
/// are `softmax(-ppl / τ)`. The returned `smoothed` equals `raw`. When
/// one teacher is so far ahead that τ rounds to zero, the weights are the
/// `τ → 0` limit.
pub fn contribution_weights(perplexities: &[f64], mode: TemperatureMode) -> Result<ContributionWeights> {
    if perplexities.is_empty() {
        return Err(Error::Contract("no teacher perplexities".into()));
    }
    if let Some(i) = perplexities.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("perplexity of teacher {i} ({})", perplexities[i]),
            index: i,
        });
    }
    mode.validate()?;
    let neg: Vec<f64> = perplexities.iter().map(|p| -p).collect();
    let temperature = match mode {
        TemperatureMode::None => 1.0,
        TemperatureMode::Fixed(t) => t,
        TemperatureMode::Adaptive => adaptive_temperature(&softmax_scaled(&neg, 1.0))?,
    };
    let raw = if temperature > 0.0 {
        softmax_scaled(&neg, temperature)
    } else {
        // S was one-hot up to rounding, so τ reached zero: take the limit,
        // which splits the weight among the lowest perplexities.
        let best = perplexities.iter().copied().fold(f64::INFINITY, f64::min);
        let winners = perplexities.iter().filter(|&&p| p == best).count() as f64;
        perplexities.iter().map(|&p| if p == best { 1.0 / winners } else { 0.0 }).collect()
    };
    Ok(ContributionWeights {
        perplexities: perplexities.to_vec(),
        smoothed: raw.clone(),
        raw,
        temperature,
    })
}

/// Running geometric average of weight vectors.
///
/// `next ∝ prev^β · raw^(1-β)`, computed in log space, starting from uniform.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSmoother {
    decay: f64,
    state: Vec<f64>,
}

impl WeightSmoother {
    pub fn new(num_teachers: usize, decay: f64) -> Result<Self> {
        if num_teachers == 0 {
            return Err(Error::Contract("smoothing needs at least one teacher".into()));
        }
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("smoothing decay {decay} outside [0, 1)")));
        }
        Ok(Self {
            decay,
            state: vec![1.0 / num_teachers as f64; num_teachers],
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn update(&mut self, raw: &[f64]) -> Result<&[f64]> {
        if raw.len() != self.state.len() {
            return Err(Error::Contract(format!(
                "{} raw weights for {} teachers",
                raw.len(),
                self.state.len()
            )));
        }
        if self.decay == 0.0 {
            self.state.copy_from_slice(raw);
            return Ok(&self.state);
        }
        let logs: Vec<f64> = self
            .state
            .iter()
            .zip(raw)
            .map(|(&p, &r)| self.decay * p.max(WEIGHT_FLOOR).ln() + (1.0 - self.decay) * r.max(WEIGHT_FLOOR).ln())
            .collect();
        self.state = softmax_scaled(&logs, 1.0);
        Ok(&self.state)
    }
}
