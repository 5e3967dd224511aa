use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::parallel::{ParallelCorpus, SentencePair};
use super::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Token budget used by the reference configuration.
pub const PAPER_MAX_TOKENS: usize = 4028;
/// Token budget for desk-scale runs.
pub const DESK_MAX_TOKENS: usize = 512;

/// Shuffled sentences are sorted by length inside windows of this size.
const BUCKET_WINDOW: usize = 256;

/// Padded id matrices for one mini-batch, all row-major.
///
/// Sources carry a trailing EOS. `tgt_in` is `[BOS] ++ y` and `tgt_out`
/// is `y ++ [EOS]`, so both have length `|y| + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub batch_size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src_ids: Vec<usize>,
    pub tgt_in_ids: Vec<usize>,
    pub tgt_out_ids: Vec<usize>,
    pub src_mask: Vec<bool>,
    pub tgt_mask: Vec<bool>,
    pub token_count: usize,
    /// Positions of the sentences in the corpus they came from.
    pub indices: Vec<usize>,
}

impl MiniBatch {
    pub fn from_pairs(pairs: &[&SentencePair], indices: Vec<usize>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("a mini-batch needs at least one sentence".into()));
        }
        debug_assert_eq!(pairs.len(), indices.len());
        let b = pairs.len();
        let src_len = pairs.iter().map(|p| p.src.len() + 1).max().unwrap_or(1);
        let tgt_len = pairs.iter().map(|p| p.tgt.len() + 1).max().unwrap_or(1);
        let mut batch = Self {
            batch_size: b,
            src_len,
            tgt_len,
            src_ids: vec![PAD; b * src_len],
            tgt_in_ids: vec![PAD; b * tgt_len],
            tgt_out_ids: vec![PAD; b * tgt_len],
            src_mask: vec![false; b * src_len],
            tgt_mask: vec![false; b * tgt_len],
            token_count: 0,
            indices,
        };
        for (r, p) in pairs.iter().enumerate() {
            let s = r * src_len;
            for (i, &id) in p.src.iter().chain([EOS].iter()).enumerate() {
                batch.src_ids[s + i] = id;
                batch.src_mask[s + i] = true;
            }
            let t = r * tgt_len;
            for (i, &id) in [BOS].iter().chain(&p.tgt).enumerate() {
                batch.tgt_in_ids[t + i] = id;
            }
            for (i, &id) in p.tgt.iter().chain([EOS].iter()).enumerate() {
                batch.tgt_out_ids[t + i] = id;
                batch.tgt_mask[t + i] = true;
            }
            batch.token_count += p.tgt.len() + 1;
        }
        Ok(batch)
    }

    /// Batch over the whole of `corpus[range]` in corpus order.
    pub fn from_corpus(corpus: &ParallelCorpus, range: std::ops::Range<usize>) -> Result<Self> {
        let pairs: Vec<&SentencePair> = corpus.pairs[range.clone()].iter().collect();
        Self::from_pairs(&pairs, range.collect())
    }

    /// Recovers the unpadded pair stored in row `row`.
    pub fn pair(&self, row: usize) -> SentencePair {
        let src = (0..self.src_len)
            .map(|i| row * self.src_len + i)
            .take_while(|&k| self.src_mask[k])
            .map(|k| self.src_ids[k])
            .collect::<Vec<_>>();
        let tgt = (0..self.tgt_len)
            .map(|i| row * self.tgt_len + i)
            .take_while(|&k| self.tgt_mask[k])
            .map(|k| self.tgt_out_ids[k])
            .collect::<Vec<_>>();
        SentencePair {
            src: src[..src.len() - 1].to_vec(),
            tgt: tgt[..tgt.len() - 1].to_vec(),
        }
    }

    /// Largest number of padded positions on either side.
    pub fn padded_tokens(&self) -> usize {
        self.batch_size * self.src_len.max(self.tgt_len)
    }
}

/// Batches for one epoch plus the pairs that could not fit any batch.
#[derive(Clone, Debug)]
pub struct EpochBatches {
    pub batches: Vec<MiniBatch>,
    pub skipped: Vec<usize>,
}

fn padded_len(p: &SentencePair) -> usize {
    (p.src.len() + 1).max(p.tgt.len() + 1)
}

/// Shuffles `corpus` with `epoch_seed` and packs it into token-budgeted batches.
///
/// The shuffled order is cut into windows; each window is sorted by length
/// and greedily packed so that `sentences × padded length ≤ max_tokens`.
/// The resulting batch order is shuffled again. A pair longer than the
/// budget on its own is skipped and reported.
pub fn make_epoch_batches(corpus: &ParallelCorpus, max_tokens: usize, epoch_seed: u64) -> Result<EpochBatches> {
    if max_tokens == 0 {
        return Err(Error::Config("max_tokens must be positive".into()));
    }
    if max_tokens == PAPER_MAX_TOKENS {
        log::info!("using the reference token budget of {max_tokens} per batch");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);

    let mut skipped = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for window in order.chunks(BUCKET_WINDOW) {
        let mut window: Vec<usize> = window.to_vec();
        window.sort_by_key(|&i| padded_len(&corpus.pairs[i]));
        let mut current: Vec<usize> = Vec::new();
        let mut current_max = 0;
        for i in window {
            let len = padded_len(&corpus.pairs[i]);
            if len > max_tokens {
                log::warn!("{}: pair {i} of length {len} exceeds the token budget {max_tokens}; skipped", corpus.name);
                skipped.push(i);
                continue;
            }
            let new_max = current_max.max(len);
            if !current.is_empty() && (current.len() + 1) * new_max > max_tokens {
                groups.push(std::mem::take(&mut current));
                current_max = 0;
            }
            current_max = current_max.max(len);
            current.push(i);
        }
        if !current.is_empty() {
            groups.push(current);
        }
    }
    groups.shuffle(&mut rng);
    let batches = groups
        .into_iter()
        .map(|g| {
            let pairs: Vec<&SentencePair> = g.iter().map(|&i| &corpus.pairs[i]).collect();
            MiniBatch::from_pairs(&pairs, g)
        })
        .collect::<Result<Vec<_>>>()?;
    if !skipped.is_empty() {
        log::warn!("{}: {} pairs skipped this epoch", corpus.name, skipped.len());
    }
    Ok(EpochBatches { batches, skipped })
}
