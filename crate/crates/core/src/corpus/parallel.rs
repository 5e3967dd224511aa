use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Drop pairs whose length ratio (larger over smaller) exceeds this.
pub const MAX_LENGTH_RATIO: f64 = 1.5;

/// Pre-tokenized sentence pairs as text.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TextCorpus {
    pub name: String,
    pub pairs: Vec<(String, String)>,
}

impl TextCorpus {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Writes `<dir>/<name>.src` and `<dir>/<name>.tgt`, one sentence per line.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut src = fs::File::create(dir.join(format!("{}.src", self.name)))?;
        let mut tgt = fs::File::create(dir.join(format!("{}.tgt", self.name)))?;
        for (s, t) in &self.pairs {
            writeln!(src, "{s}")?;
            writeln!(tgt, "{t}")?;
        }
        Ok(())
    }

    pub fn read(dir: &Path, name: &str) -> Result<Self> {
        let src = fs::read_to_string(dir.join(format!("{name}.src")))?;
        let tgt = fs::read_to_string(dir.join(format!("{name}.tgt")))?;
        let src: Vec<&str> = src.lines().collect();
        let tgt: Vec<&str> = tgt.lines().collect();
        if src.len() != tgt.len() {
            return Err(Error::Data(format!(
                "{name}: source has {} lines but target has {}",
                src.len(),
                tgt.len()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            pairs: src
                .into_iter()
                .zip(tgt)
                .map(|(s, t)| (s.to_string(), t.to_string()))
                .collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Id-encoded sentence pairs over a shared vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub name: String,
    pub pairs: Vec<SentencePair>,
    pub vocab_hash: u64,
}

/// What encoding a corpus filtered out or substituted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub kept: usize,
    pub dropped_ratio: usize,
    pub dropped_empty: usize,
    pub unk_tokens: usize,
}

impl ParallelCorpus {
    /// Encodes text pairs. With `ratio_filter`, pairs whose
    /// `max(|src|/|tgt|, |tgt|/|src|)` exceeds [`MAX_LENGTH_RATIO`] are dropped.
    pub fn encode(text: &TextCorpus, vocab: &Vocabulary, ratio_filter: bool) -> (Self, LoadReport) {
        let mut report = LoadReport::default();
        let mut pairs = Vec::with_capacity(text.pairs.len());
        for (s, t) in &text.pairs {
            let (src, us) = vocab.encode(s);
            let (tgt, ut) = vocab.encode(t);
            if src.is_empty() || tgt.is_empty() {
                report.dropped_empty += 1;
                continue;
            }
            if ratio_filter && length_ratio(src.len(), tgt.len()) > MAX_LENGTH_RATIO {
                report.dropped_ratio += 1;
                continue;
            }
            report.unk_tokens += us + ut;
            pairs.push(SentencePair { src, tgt });
        }
        report.kept = pairs.len();
        (
            Self {
                name: text.name.clone(),
                pairs,
                vocab_hash: vocab.content_hash(),
            },
            report,
        )
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn target_token_count(&self) -> usize {
        // +1 for the EOS every target carries
        self.pairs.iter().map(|p| p.tgt.len() + 1).sum()
    }

    /// Checks the corpus invariants against a vocabulary.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.vocab_hash != vocab.content_hash() {
            return Err(Error::VocabMismatch {
                expected: vocab.content_hash(),
                found: self.vocab_hash,
            });
        }
        self.validate_ids(vocab.len())
    }

    /// Checks that no sequence is empty and every id is below `vocab_size`.
    pub fn validate_ids(&self, vocab_size: usize) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.src.is_empty() || p.tgt.is_empty() {
                return Err(Error::Data(format!("{}: pair {i} is empty", self.name)));
            }
            if p.src.iter().chain(&p.tgt).any(|&id| id >= vocab_size) {
                return Err(Error::Data(format!("{}: pair {i} has an id outside the vocabulary", self.name)));
            }
        }
        Ok(())
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            name: self.name.clone(),
            pairs: self.pairs[range].to_vec(),
            vocab_hash: self.vocab_hash,
        }
    }
}

fn length_ratio(a: usize, b: usize) -> f64 {
    let (a, b) = (a as f64, b as f64);
    (a / b).max(b / a)
}

/// Reads line-aligned `src_path`/`tgt_path`, applying the length-ratio filter.
pub fn load_parallel(src_path: &Path, tgt_path: &Path, vocab: &Vocabulary) -> Result<(ParallelCorpus, LoadReport)> {
    let src = fs::read_to_string(src_path)?;
    let tgt = fs::read_to_string(tgt_path)?;
    let src: Vec<&str> = src.lines().collect();
    let tgt: Vec<&str> = tgt.lines().collect();
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "line count mismatch: {} has {} lines, {} has {}",
            src_path.display(),
            src.len(),
            tgt_path.display(),
            tgt.len()
        )));
    }
    let name = src_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = TextCorpus {
        name,
        pairs: src
            .into_iter()
            .zip(tgt)
            .map(|(s, t)| (s.to_string(), t.to_string()))
            .collect(),
    };
    let (corpus, report) = ParallelCorpus::encode(&text, vocab, true);
    if report.dropped_ratio > 0 || report.unk_tokens > 0 {
        log::info!(
            "{}: kept {}, dropped {} by length ratio, {} unknown tokens",
            corpus.name,
            report.kept,
            report.dropped_ratio,
            report.unk_tokens
        );
    }
    Ok((corpus, report))
}
