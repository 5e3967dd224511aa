use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

const HASH_PREFIX: &str = "# akd-vocab sha256-64=";

/// Word-level vocabulary shared by every model in a distillation run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary over whitespace-tokenized sentences.
    ///
    /// Tokens seen fewer than `min_freq` times are left out. Ordering is by
    /// descending frequency, then lexicographic, so the result does not
    /// depend on the order sentences are presented in.
    pub fn build<'a, I>(sentences: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for s in sentences {
            any = true;
            for tok in s.split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any || counts.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from empty input".into()));
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_tokens(entries.into_iter().map(|(t, _)| t.to_string())))
    }

    /// Builds the joint vocabulary over both sides of every corpus.
    pub fn build_from_corpora(corpora: &[&super::TextCorpus], min_freq: usize) -> Result<Self> {
        Self::build(
            corpora
                .iter()
                .flat_map(|c| c.pairs.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()])),
            min_freq,
        )
    }

    fn from_tokens(rest: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(rest)
            .collect();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encodes a sentence; the second value counts unknown-token substitutions.
    pub fn encode(&self, sentence: &str) -> (Vec<usize>, usize) {
        let mut unk = 0;
        let ids = sentence
            .split_whitespace()
            .map(|t| {
                let id = self.id(t);
                if id == UNK {
                    unk += 1;
                }
                id
            })
            .collect();
        (ids, unk)
    }

    /// Decodes ids up to (not including) the first EOS, skipping PAD and BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// First 64 bits of SHA-256 over the newline-joined token list.
    pub fn content_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }

    /// Writes the hash header followed by one token per line (line = id).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        writeln!(out, "{HASH_PREFIX}{:016x}", self.content_hash())?;
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let expected = header
            .strip_prefix(HASH_PREFIX)
            .and_then(|h| u64::from_str_radix(h.trim(), 16).ok())
            .ok_or_else(|| Error::Data(format!("{}: missing vocabulary hash header", path.display())))?;
        let tokens: Vec<&str> = lines.collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Data(format!(
                "{}: vocabulary must start with the reserved tokens",
                path.display()
            )));
        }
        let vocab = Self::from_tokens(tokens[RESERVED.len()..].iter().map(|s| s.to_string()));
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(Error::Data(format!("{}: duplicate tokens", path.display())));
        }
        let found = vocab.content_hash();
        if found != expected {
            return Err(Error::VocabMismatch { expected, found });
        }
        Ok(vocab)
    }
}
