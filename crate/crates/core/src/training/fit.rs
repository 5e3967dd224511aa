use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Selection, TrainConfig};
use super::eval::{evaluate_bleu, evaluate_perplexity};
use super::optim::{adam_step, clip_global_norm, lr_schedule, OptimizerState};
use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::{make_epoch_batches, MiniBatch, ParallelCorpus};
use crate::distillation::{
    adaptive_kd_loss, combined_loss, lambda2_schedule, DistillConfig, TeacherEnsemble, TraceRow, WeightTrace,
};
use crate::error::{Error, Result};
use crate::model::{smoothed_nll, Mode, ModelConfig, Seq2SeqModel};

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub nll_term: f64,
    pub kd_term: Option<f64>,
    pub lambda2: Option<f64>,
    pub dev_ppl: f64,
    pub dev_bleu: Option<f64>,
    pub wall_time_s: f64,
}

/// Where a training run writes its side outputs. Unset paths are skipped.
#[derive(Clone, Debug, Default)]
pub struct RunFiles {
    /// JSON-lines epoch log.
    pub log: Option<PathBuf>,
    /// Contribution-weight trace CSV (distillation only).
    pub trace: Option<PathBuf>,
    /// Best checkpoint so far, written if training diverges.
    pub last_good: Option<PathBuf>,
}

/// Result of a training stage.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best checkpoint by the configured selection metric.
    pub model: Seq2SeqModel,
    /// Epoch the best checkpoint comes from; 0 is the starting point.
    pub best_epoch: usize,
    pub best_dev_ppl: f64,
    pub best_dev_bleu: Option<f64>,
    pub history: Vec<EpochRecord>,
    /// Optimizer steps taken.
    pub steps: usize,
}

/// Result of [`distill_train`].
#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub train: TrainOutcome,
    pub trace: WeightTrace,
    pub teacher_checksums_before: Vec<u64>,
    pub teacher_checksums_after: Vec<u64>,
}

/// Position of the current mini-batch in the run.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    /// 1-based optimizer step.
    pub step: usize,
    pub total_steps: usize,
    pub epoch: usize,
    pub batch_id: usize,
}

/// Loss graph for one mini-batch.
pub struct StepTerms {
    pub loss: Var,
    pub nll: Var,
    pub kd: Option<Var>,
    pub lambda2: Option<f64>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn check_same_vocab(model_hash: u64, corpus: &ParallelCorpus) -> Result<()> {
    if corpus.vocab_hash != model_hash {
        return Err(Error::VocabMismatch {
            expected: model_hash,
            found: corpus.vocab_hash,
        });
    }
    Ok(())
}

struct DevScore {
    ppl: f64,
    bleu: Option<f64>,
}

fn dev_score(model: &Seq2SeqModel, dev: &ParallelCorpus, cfg: &TrainConfig) -> Result<DevScore> {
    Ok(DevScore {
        ppl: evaluate_perplexity(model, dev)?,
        bleu: if cfg.dev_bleu {
            Some(evaluate_bleu(model, dev)?)
        } else {
            None
        },
    })
}

fn better(new: &DevScore, old: &DevScore, selection: Selection) -> bool {
    match selection {
        Selection::Perplexity => new.ppl < old.ppl,
        Selection::Bleu => new.bleu.unwrap_or(0.0) > old.bleu.unwrap_or(0.0),
    }
}

/// Generic training loop: shuffled token-budget batches, Adam with the
/// warm-up schedule, best-dev checkpoint selection.
pub fn fit(
    mut model: Seq2SeqModel,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    cfg: &TrainConfig,
    files: &RunFiles,
    objective: &mut dyn FnMut(&mut Tape, Var, &MiniBatch, StepInfo) -> Result<StepTerms>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_same_vocab(model.vocab_hash(), train)?;
    check_same_vocab(model.vocab_hash(), dev)?;
    train.validate_ids(model.config().vocab_size)?;
    dev.validate_ids(model.config().vocab_size)?;

    let epochs: Vec<Vec<MiniBatch>> = (1..=cfg.epochs)
        .map(|e| make_epoch_batches(train, cfg.max_tokens, epoch_seed(cfg.seed, e)).map(|b| b.batches))
        .collect::<Result<_>>()?;
    let total_steps: usize = epochs.iter().map(Vec::len).sum();
    if cfg.epochs > 0 && total_steps == 0 {
        return Err(Error::Data(format!("{}: no trainable batches", train.name)));
    }

    let mut log = match &files.log {
        Some(p) => Some(fs::File::create(p)?),
        None => None,
    };
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut state = OptimizerState::new(model.params());
    let names = model.param_names().to_vec();
    let started = Instant::now();

    let mut best = model.clone();
    let mut best_score = dev_score(&model, dev, cfg)?;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    let diverged = |best: &Seq2SeqModel, step: usize, reason: String| -> Error {
        if let Some(p) = &files.last_good {
            if let Err(e) = best.save(p) {
                log::error!("could not save last good checkpoint to {}: {e}", p.display());
            }
        }
        Error::Divergence { step, reason }
    };

    for (e, batches) in epochs.iter().enumerate() {
        let epoch = e + 1;
        let (mut loss_sum, mut nll_sum, mut kd_sum, mut tokens) = (0.0, 0.0, 0.0, 0usize);
        let mut has_kd = false;
        let mut last_lambda2 = None;
        for (batch_id, batch) in batches.iter().enumerate() {
            step += 1;
            let info = StepInfo {
                step,
                total_steps,
                epoch,
                batch_id,
            };
            let mut tape = Tape::new();
            let vars = model.register(&mut tape, true);
            let logits = model.forward(&mut tape, &vars, batch, Mode::Train(&mut dropout_rng))?;
            let terms = objective(&mut tape, logits, batch, info)?;
            let loss = tape.value(terms.loss).item();
            if !loss.is_finite() {
                return Err(diverged(&best, step, format!("loss is {loss}")));
            }
            let w = batch.token_count as f64;
            loss_sum += loss * w;
            nll_sum += tape.value(terms.nll).item() * w;
            if let Some(kd) = terms.kd {
                kd_sum += tape.value(kd).item() * w;
                has_kd = true;
            }
            tokens += batch.token_count;
            last_lambda2 = terms.lambda2.or(last_lambda2);

            let mut grads = tape.backward(terms.loss)?;
            let mut grads: Vec<Vec<f64>> = vars
                .iter()
                .zip(&names)
                .map(|(&v, n)| {
                    grads
                        .take(v)
                        .ok_or_else(|| Error::Contract(format!("no gradient reached {n}")))
                })
                .collect::<Result<_>>()?;
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            let lr = lr_schedule(step, cfg.warmup_steps, cfg.max_lr);
            let hp = cfg.adam();
            let names_ref = &names;
            if let Err(err) = adam_step(model.params_mut(), &grads, names_ref, &mut state, lr, hp) {
                return Err(match err {
                    Error::NonFinite { what, index } => diverged(&best, step, format!("{what} at index {index}")),
                    other => other,
                });
            }
        }
        let score = dev_score(&model, dev, cfg)?;
        let denom = tokens.max(1) as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / denom,
            nll_term: nll_sum / denom,
            kd_term: has_kd.then(|| kd_sum / denom),
            lambda2: last_lambda2,
            dev_ppl: score.ppl,
            dev_bleu: score.bleu,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} dev ppl {:.3}{}",
            train.name,
            record.train_loss,
            record.dev_ppl,
            record.dev_bleu.map(|b| format!(" dev bleu {b:.2}")).unwrap_or_default()
        );
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record).expect("epoch record serializes"))?;
        }
        history.push(record);
        if better(&score, &best_score, cfg.selection) {
            best = model.clone();
            best_score = score;
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch,
        best_dev_ppl: best_score.ppl,
        best_dev_bleu: best_score.bleu,
        history,
        steps: step,
    })
}

fn nll_objective(epsilon: f64) -> impl FnMut(&mut Tape, Var, &MiniBatch, StepInfo) -> Result<StepTerms> {
    move |tape, logits, batch, _| {
        let nll = smoothed_nll(tape, logits, batch, epsilon)?;
        Ok(StepTerms {
            loss: nll,
            nll,
            kd: None,
            lambda2: None,
        })
    }
}

/// Trains a model from random initialization on `corpus` with the
/// label-smoothed likelihood only.
pub fn train_teacher(
    cfg: &TrainConfig,
    model_config: &ModelConfig,
    corpus: &ParallelCorpus,
    dev: &ParallelCorpus,
    files: &RunFiles,
) -> Result<TrainOutcome> {
    let model = Seq2SeqModel::init(model_config.clone(), cfg.seed)?.with_vocab_hash(corpus.vocab_hash);
    fit(model, corpus, dev, cfg, files, &mut nll_objective(model_config.label_smoothing))
}

/// Continues training `teacher` on `corpus` with a fresh optimizer and a
/// restarted warm-up. Zero epochs return the teacher unchanged.
pub fn finetune(
    teacher: &Seq2SeqModel,
    corpus: &ParallelCorpus,
    dev: &ParallelCorpus,
    cfg: &TrainConfig,
    files: &RunFiles,
) -> Result<TrainOutcome> {
    check_same_vocab(teacher.vocab_hash(), corpus)?;
    let eps = teacher.config().label_smoothing;
    fit(teacher.clone(), corpus, dev, cfg, files, &mut nll_objective(eps))
}

/// Trains a fresh student on `corpus` against the annealed combination of
/// likelihood and adaptively weighted teacher distributions.
///
/// For every mini-batch the teachers' perplexities yield contribution
/// weights (temperature, then smoothing), the student minimizes
/// `λ1·NLL + λ2·Σ α_l KD_l` and Adam updates it. One trace row is written
/// per mini-batch.
pub fn distill_train(
    model_config: &ModelConfig,
    corpus: &ParallelCorpus,
    dev: &ParallelCorpus,
    ensemble: &mut TeacherEnsemble,
    dcfg: &DistillConfig,
    cfg: &TrainConfig,
    files: &RunFiles,
) -> Result<DistillOutcome> {
    dcfg.validate()?;
    ensemble.check_frozen()?;
    check_same_vocab(ensemble.vocab_hash(), corpus)?;
    if ensemble.vocab_size() != model_config.vocab_size {
        return Err(Error::Contract(format!(
            "teachers have {} tokens, student config has {}",
            ensemble.vocab_size(),
            model_config.vocab_size
        )));
    }
    let before = ensemble.checksums();
    ensemble.reset_weights();
    if dcfg.cache_teacher_outputs && cfg.epochs > 0 {
        ensemble.precompute(corpus)?;
    }
    let student = Seq2SeqModel::init(model_config.clone(), cfg.seed)?.with_vocab_hash(corpus.vocab_hash);
    let eps = model_config.label_smoothing;
    let mut trace = WeightTrace::new(ensemble.len());
    let result = {
        let ens = &mut *ensemble;
        let trace = &mut trace;
        let mut objective = move |tape: &mut Tape, logits: Var, batch: &MiniBatch, info: StepInfo| -> Result<StepTerms> {
            let signals = ens.signals(batch)?;
            let ppl: Vec<f64> = signals.iter().map(|s| s.perplexity).collect();
            let weights = ens.weigh(&ppl)?;
            let lambda2 = if info.total_steps <= 1 {
                dcfg.lambda2_end
            } else {
                lambda2_schedule(info.step - 1, info.total_steps - 1, dcfg)?
            };
            let probs: Vec<Tensor> = signals.into_iter().map(|s| s.probs).collect();
            let nll = smoothed_nll(tape, logits, batch, eps)?;
            let kd = adaptive_kd_loss(tape, logits, &probs, &weights.smoothed, batch)?;
            let loss = combined_loss(tape, nll, kd, dcfg.lambda1, lambda2)?;
            trace.push(TraceRow::new(info.step, info.batch_id, &weights, lambda2));
            Ok(StepTerms {
                loss,
                nll,
                kd: Some(kd),
                lambda2: Some(lambda2),
            })
        };
        fit(student, corpus, dev, cfg, files, &mut objective)
    };
    ensemble.clear_cache();
    if let Some(p) = &files.trace {
        trace.write(p)?;
    }
    let train = result?;
    let after = ensemble.checksums();
    if after != before {
        return Err(Error::Contract("teacher parameters changed during distillation".into()));
    }
    Ok(DistillOutcome {
        train,
        trace,
        teacher_checksums_before: before,
        teacher_checksums_after: after,
    })
}
