//! Shared vocabulary, parallel corpora, mini-batching and synthetic
//! language-family generation.

mod batch;
mod family;
mod parallel;
mod vocab;

pub use batch::{make_epoch_batches, EpochBatches, MiniBatch, DESK_MAX_TOKENS, PAPER_MAX_TOKENS};
pub use family::{
    cipher_overlap, generate_family, ClauseOrder, FamilyCorpus, FamilySpec, GrammarSpec, SplitSizes, WordOrder,
};
pub use parallel::{load_parallel, LoadReport, ParallelCorpus, SentencePair, TextCorpus, MAX_LENGTH_RATIO};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
