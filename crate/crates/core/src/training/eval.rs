use std::collections::HashMap;
use std::hash::Hash;

use crate::corpus::{MiniBatch, ParallelCorpus};
use crate::error::{Error, Result};
use crate::model::Seq2SeqModel;

/// Sentences per batch when evaluating or decoding in corpus order.
const EVAL_BATCH: usize = 64;

/// Summed gold NLL and valid token count of `model` on `batch`, dropout off.
pub fn batch_nll(model: &Seq2SeqModel, batch: &MiniBatch) -> Result<(f64, usize)> {
    let logits = model.logits(batch)?;
    let v = model.config().vocab_size;
    let mut nll = 0.0;
    for (pos, row) in logits.data().chunks_exact(v).enumerate() {
        if !batch.tgt_mask[pos] {
            continue;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        nll += z.ln() - (row[batch.tgt_out_ids[pos]] - max);
    }
    Ok((nll, batch.token_count))
}

/// `exp` of the token-mean gold NLL over the whole corpus.
pub fn evaluate_perplexity(model: &Seq2SeqModel, corpus: &ParallelCorpus) -> Result<f64> {
    if corpus.pairs.is_empty() {
        return Err(Error::Data(format!("{}: cannot evaluate on an empty corpus", corpus.name)));
    }
    let mut nll = 0.0;
    let mut tokens = 0;
    for start in (0..corpus.len()).step_by(EVAL_BATCH) {
        let batch = MiniBatch::from_corpus(corpus, start..(start + EVAL_BATCH).min(corpus.len()))?;
        let (n, t) = batch_nll(model, &batch)?;
        nll += n;
        tokens += t;
    }
    Ok((nll / tokens as f64).exp())
}

/// Decoding budget for a source of `src_len` tokens.
pub fn decode_budget(src_len: usize, model: &Seq2SeqModel) -> usize {
    (2 * src_len + 10).min(model.config().max_positions.saturating_sub(1)).max(1)
}

/// Greedy translations of every source sentence, in corpus order.
pub fn translate(model: &Seq2SeqModel, corpus: &ParallelCorpus) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(corpus.len());
    for start in (0..corpus.len()).step_by(EVAL_BATCH) {
        let batch = MiniBatch::from_corpus(corpus, start..(start + EVAL_BATCH).min(corpus.len()))?;
        let budget = decode_budget(batch.src_len, model);
        out.extend(model.greedy_decode_batch(&batch, budget)?.into_iter().map(|(ids, _)| ids));
    }
    Ok(out)
}

/// Corpus BLEU of greedy translations against the corpus targets.
pub fn evaluate_bleu(model: &Seq2SeqModel, corpus: &ParallelCorpus) -> Result<f64> {
    let hyps = translate(model, corpus)?;
    let refs: Vec<Vec<usize>> = corpus.pairs.iter().map(|p| p.tgt.clone()).collect();
    corpus_bleu(&hyps, &refs)
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 on tokenized sentences, on a 0–100 scale.
///
/// Clipped n-gram precisions for n = 1..4 are pooled over the corpus and
/// combined by geometric mean with a brevity penalty. A zero match count
/// at order n is replaced by `1 / (2^k · total_n)` for the k-th such order;
/// no unigram match at all scores 0.
pub fn corpus_bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut sys_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        sys_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    if sys_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut smooth = 1.0;
    let mut log_sum = 0.0;
    for n in 0..4 {
        if totals[n] == 0 {
            return Ok(0.0);
        }
        let p = if matches[n] == 0 {
            smooth *= 2.0;
            100.0 / (smooth * totals[n] as f64)
        } else {
            100.0 * matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if sys_len < ref_len {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / 4.0).exp())
}
