use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::{MiniBatch, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::model::Seq2SeqModel;

use super::config::DistillConfig;
use super::loss::adaptive_kd_loss;
use super::weights::{contribution_weights, ContributionMode, ContributionWeights, TemperatureMode, WeightSmoother};

/// One teacher's view of one sentence: output distributions at every
/// target position (EOS included) and the summed gold NLL.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceOutput {
    pub probs: Vec<f64>,
    pub nll: f64,
    pub tokens: usize,
}

/// A teacher's distributions and perplexity for one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSignal {
    pub perplexity: f64,
    /// `[b·t, V]`, zero on padded rows.
    pub probs: Tensor,
}

/// Evaluates `teacher` on a single sentence with dropout off.
///
/// Teachers always see sentences one at a time, so what they produce for a
/// sentence does not depend on which batch it landed in.
pub fn sentence_output(teacher: &Seq2SeqModel, pair: &SentencePair) -> Result<SentenceOutput> {
    let batch = MiniBatch::from_pairs(&[pair], vec![0])?;
    let logits = teacher.logits(&batch)?;
    let v = teacher.config().vocab_size;
    let mut probs = Vec::with_capacity(logits.numel());
    let mut nll = 0.0;
    for (row, &gold) in logits.data().chunks_exact(v).zip(&batch.tgt_out_ids) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        nll += z.ln() - (row[gold] - max);
        probs.extend(exps.iter().map(|e| e / z));
    }
    Ok(SentenceOutput {
        probs,
        nll,
        tokens: batch.token_count,
    })
}

/// `exp(mean gold NLL)` of a teacher over the valid target tokens of `batch`.
pub fn teacher_minibatch_perplexity(teacher: &Seq2SeqModel, batch: &MiniBatch) -> Result<f64> {
    if batch.token_count == 0 {
        return Err(Error::Contract("batch has no valid target tokens".into()));
    }
    let mut nll = 0.0;
    for row in 0..batch.batch_size {
        nll += sentence_output(teacher, &batch.pair(row))?.nll;
    }
    Ok((nll / batch.token_count as f64).exp())
}

fn assemble(outputs: &[&SentenceOutput], batch: &MiniBatch, v: usize) -> Result<TeacherSignal> {
    let t = batch.tgt_len;
    let mut probs = vec![0.0; batch.batch_size * t * v];
    let mut nll = 0.0;
    for (row, out) in outputs.iter().enumerate() {
        probs[row * t * v..row * t * v + out.probs.len()].copy_from_slice(&out.probs);
        nll += out.nll;
    }
    Ok(TeacherSignal {
        perplexity: (nll / batch.token_count as f64).exp(),
        probs: Tensor::new(vec![batch.batch_size * t, v], probs)?,
    })
}

/// Precomputed teacher outputs for every sentence of one corpus.
#[derive(Clone, Debug)]
struct OutputCache {
    pairs: Vec<SentencePair>,
    outputs: Vec<Vec<SentenceOutput>>,
}

/// Frozen teachers plus the running state of their contribution weights.
#[derive(Clone, Debug)]
pub struct TeacherEnsemble {
    teachers: Vec<Seq2SeqModel>,
    train_mode: Vec<bool>,
    smoother: WeightSmoother,
    temperature: TemperatureMode,
    contribution: ContributionMode,
    threads: usize,
    cache: Option<OutputCache>,
}

impl TeacherEnsemble {
    pub fn new(teachers: Vec<Seq2SeqModel>, config: &DistillConfig) -> Result<Self> {
        config.validate()?;
        let first = teachers
            .first()
            .ok_or_else(|| Error::Contract("a teacher ensemble needs at least one teacher".into()))?;
        for (i, t) in teachers.iter().enumerate() {
            if t.config().vocab_size != first.config().vocab_size {
                return Err(Error::Contract(format!(
                    "teacher {i} has vocab_size {}, teacher 0 has {}",
                    t.config().vocab_size,
                    first.config().vocab_size
                )));
            }
            if t.vocab_hash() != first.vocab_hash() {
                return Err(Error::VocabMismatch {
                    expected: first.vocab_hash(),
                    found: t.vocab_hash(),
                });
            }
        }
        let n = teachers.len();
        Ok(Self {
            smoother: WeightSmoother::new(n, config.effective_decay())?,
            train_mode: vec![false; n],
            teachers,
            temperature: config.temperature,
            contribution: config.contribution,
            threads: 1,
            cache: None,
        })
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn teachers(&self) -> &[Seq2SeqModel] {
        &self.teachers
    }

    pub fn vocab_hash(&self) -> u64 {
        self.teachers[0].vocab_hash()
    }

    pub fn vocab_size(&self) -> usize {
        self.teachers[0].config().vocab_size
    }

    pub fn temperature_mode(&self) -> TemperatureMode {
        self.temperature
    }

    pub fn contribution_mode(&self) -> ContributionMode {
        self.contribution
    }

    /// Current smoothed contribution weights.
    pub fn smoothed_weights(&self) -> &[f64] {
        self.smoother.state()
    }

    pub fn smoothing_decay(&self) -> f64 {
        self.smoother.decay()
    }

    /// Puts the smoothing state back to uniform.
    pub fn reset_weights(&mut self) {
        let n = self.teachers.len();
        self.smoother = WeightSmoother::new(n, self.smoother.decay()).expect("validated at construction");
    }

    /// Caps the number of teachers evaluated concurrently.
    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    /// Marks a teacher as running with dropout. Distillation refuses such
    /// an ensemble.
    pub fn set_train_mode(&mut self, teacher: usize, on: bool) {
        self.train_mode[teacher] = on;
    }

    pub fn check_frozen(&self) -> Result<()> {
        match self.train_mode.iter().position(|&t| t) {
            Some(i) => Err(Error::Contract(format!("teacher {i} is in train mode"))),
            None => Ok(()),
        }
    }

    /// Parameter checksum of every teacher.
    pub fn checksums(&self) -> Vec<u64> {
        self.teachers.iter().map(Seq2SeqModel::checksum).collect()
    }

    fn per_teacher<T: Send>(&self, f: impl Fn(&Seq2SeqModel, usize) -> Result<T> + Sync) -> Result<Vec<T>> {
        if self.threads <= 1 || self.teachers.len() == 1 {
            return self.teachers.iter().enumerate().map(|(i, t)| f(t, i)).collect();
        }
        let mut results: Vec<Option<Result<T>>> = (0..self.teachers.len()).map(|_| None).collect();
        for chunk in (0..self.teachers.len()).collect::<Vec<_>>().chunks(self.threads) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&i| {
                        let f = &f;
                        let t = &self.teachers[i];
                        (i, s.spawn(move || f(t, i)))
                    })
                    .collect();
                for (i, h) in handles {
                    results[i] = Some(h.join().expect("teacher worker panicked"));
                }
            });
        }
        results.into_iter().map(|r| r.expect("every teacher evaluated")).collect()
    }

    /// Evaluates every teacher on every sentence of `corpus` once, so that
    /// later batches drawn from it are served from memory.
    pub fn precompute(&mut self, corpus: &ParallelCorpus) -> Result<()> {
        let outputs = self.per_teacher(|t, _| corpus.pairs.iter().map(|p| sentence_output(t, p)).collect())?;
        self.cache = Some(OutputCache {
            pairs: corpus.pairs.clone(),
            outputs,
        });
        Ok(())
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    /// Per-teacher distributions and perplexity for `batch`, in teacher order.
    pub fn signals(&self, batch: &MiniBatch) -> Result<Vec<TeacherSignal>> {
        if batch.token_count == 0 {
            return Err(Error::Contract("batch has no valid target tokens".into()));
        }
        let v = self.vocab_size();
        let pairs: Vec<SentencePair> = (0..batch.batch_size).map(|r| batch.pair(r)).collect();
        let cached = self.cache.as_ref().filter(|c| {
            batch
                .indices
                .iter()
                .zip(&pairs)
                .all(|(&i, p)| c.pairs.get(i) == Some(p))
        });
        self.per_teacher(|t, ti| match cached {
            Some(c) => {
                let outs: Vec<&SentenceOutput> = batch.indices.iter().map(|&i| &c.outputs[ti][i]).collect();
                assemble(&outs, batch, v)
            }
            None => {
                let outs = pairs.iter().map(|p| sentence_output(t, p)).collect::<Result<Vec<_>>>()?;
                assemble(&outs.iter().collect::<Vec<_>>(), batch, v)
            }
        })
    }

    /// Contribution weights for a batch with the given teacher perplexities,
    /// advancing the smoothing state.
    pub fn weigh(&mut self, perplexities: &[f64]) -> Result<ContributionWeights> {
        if perplexities.len() != self.len() {
            return Err(Error::Contract(format!(
                "{} perplexities for {} teachers",
                perplexities.len(),
                self.len()
            )));
        }
        let mut w = contribution_weights(perplexities, self.temperature)?;
        if self.contribution == ContributionMode::Equal {
            w.raw = vec![1.0 / self.len() as f64; self.len()];
        }
        w.smoothed = self.smooth_weights(&w.raw)?;
        Ok(w)
    }

    /// Folds `raw` into the running geometric average and returns the result.
    pub fn smooth_weights(&mut self, raw: &[f64]) -> Result<Vec<f64>> {
        Ok(self.smoother.update(raw)?.to_vec())
    }

    /// Adaptive KD loss of `student_logits` against this ensemble on `batch`.
    pub fn adaptive_kd_loss(&self, tape: &mut Tape, student_logits: Var, alpha: &[f64], batch: &MiniBatch) -> Result<Var> {
        let probs: Vec<Tensor> = self.signals(batch)?.into_iter().map(|s| s.probs).collect();
        adaptive_kd_loss(tape, student_logits, &probs, alpha, batch)
    }
}
