//! Multi-teacher distillation: teacher perplexities, contribution weights
//! with temperature and smoothing, the weighted KD loss and the λ2 ramp.

mod config;
mod ensemble;
mod loss;
mod trace;
mod weights;

pub use config::{lambda2_schedule, AnnealShape, DistillConfig};
pub use ensemble::{sentence_output, teacher_minibatch_perplexity, SentenceOutput, TeacherEnsemble, TeacherSignal};
pub use loss::{adaptive_kd_loss, combined_loss, kd_loss, ALPHA_TOLERANCE};
pub use trace::{TraceRow, WeightTrace};
pub use weights::{
    adaptive_temperature, contribution_weights, softmax_scaled, ContributionMode, ContributionWeights,
    TemperatureMode, WeightSmoother, WEIGHT_FLOOR,
};

#[cfg(test)]
mod tests;
