//! Optimizer, learning-rate schedule, training loops for teachers,
//! fine-tuning and distillation, and evaluation.

mod config;
mod eval;
mod fit;
mod optim;

pub use config::{Selection, TrainConfig};
pub use eval::{batch_nll, corpus_bleu, decode_budget, evaluate_bleu, evaluate_perplexity, translate};
pub use fit::{
    distill_train, finetune, fit, train_teacher, DistillOutcome, EpochRecord, RunFiles, StepInfo, StepTerms,
    TrainOutcome,
};
pub use optim::{adam_step, clip_global_norm, lr_schedule, AdamParams, OptimizerState};
