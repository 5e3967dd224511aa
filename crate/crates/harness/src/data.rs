use std::fs;
use std::path::Path;

use akd_core::corpus::{generate_family, ParallelCorpus, TextCorpus, Vocabulary};
use log::{info, warn};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// Text splits of one source language paired with the shared target.
#[derive(Clone, Debug)]
pub struct LanguageText {
    pub name: String,
    pub train: TextCorpus,
    pub dev: TextCorpus,
    pub test: TextCorpus,
}

impl LanguageText {
    fn splits(&self) -> [&TextCorpus; 3] {
        [&self.train, &self.dev, &self.test]
    }
}

#[derive(Clone, Debug)]
pub struct LanguageData {
    pub name: String,
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Encoded corpora of an experiment over one shared vocabulary.
#[derive(Clone, Debug)]
pub struct DataSet {
    pub vocab: Vocabulary,
    pub languages: Vec<LanguageData>,
}

impl DataSet {
    pub fn language(&self, name: &str) -> Result<&LanguageData> {
        self.languages
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| HarnessError::Data(format!("no corpus for language {name:?}")))
    }

    pub fn encode(texts: &[LanguageText], min_freq: usize, ratio_filter: bool) -> Result<Self> {
        let train: Vec<&TextCorpus> = texts.iter().map(|l| &l.train).collect();
        let vocab = Vocabulary::build_from_corpora(&train, min_freq)?;
        let mut languages = Vec::with_capacity(texts.len());
        for l in texts {
            let [train, dev, test] = l.splits().map(|t| {
                let (c, report) = ParallelCorpus::encode(t, &vocab, ratio_filter);
                if report.dropped_ratio + report.dropped_empty > 0 {
                    warn!(
                        "{}: dropped {} pairs by length ratio, {} empty",
                        t.name, report.dropped_ratio, report.dropped_empty
                    );
                }
                c
            });
            if train.is_empty() || dev.is_empty() {
                return Err(HarnessError::Data(format!("{}: empty train or dev split", l.name)));
            }
            languages.push(LanguageData {
                name: l.name.clone(),
                train,
                dev,
                test,
            });
        }
        Ok(Self { vocab, languages })
    }
}

/// Produces the text corpora named by `cfg`, generating a synthetic family
/// or reading files.
pub fn load_text(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<LanguageText>> {
    if let Some(family) = &cfg.data.family {
        let seed = cfg.data.seed.unwrap_or(seed);
        return Ok(generate_family(family, seed)?
            .into_iter()
            .map(|f| LanguageText {
                name: f.name,
                train: f.train,
                dev: f.dev,
                test: f.test,
            })
            .collect());
    }
    let dir = cfg
        .data
        .corpus_dir
        .as_deref()
        .ok_or_else(|| HarnessError::Config("no data source configured".into()))?;
    read_text(dir, &cfg.languages())
}

/// Reads `<lang>.<split>.src` / `.tgt` for every language.
pub fn read_text(dir: &Path, languages: &[String]) -> Result<Vec<LanguageText>> {
    languages
        .iter()
        .map(|name| {
            let read = |split: &str| {
                TextCorpus::read(dir, &format!("{name}.{split}"))
                    .map_err(|e| HarnessError::Data(format!("{name}.{split} in {}: {e}", dir.display())))
            };
            Ok(LanguageText {
                name: name.clone(),
                train: read("train")?,
                dev: read("dev")?,
                test: read("test")?,
            })
        })
        .collect()
}

/// Writes every corpus and the shared vocabulary to `dir`, creating it.
/// Output depends only on the config and seed.
pub fn gen_data(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<DataSet> {
    let texts = load_text(cfg, seed)?;
    fs::create_dir_all(dir)?;
    for l in &texts {
        for (split, corpus) in SPLITS.iter().zip(l.splits()) {
            let mut named = corpus.clone();
            named.name = format!("{}.{split}", l.name);
            named.write(dir)?;
        }
    }
    let data = DataSet::encode(&texts, cfg.data.min_freq, cfg.data.ratio_filter)?;
    data.vocab.save(&dir.join(VOCAB_FILE))?;
    info!(
        "wrote {} languages and a {}-token vocabulary to {}",
        texts.len(),
        data.vocab.len(),
        dir.display()
    );
    Ok(data)
}

/// Loads a directory written by [`gen_data`].
pub fn load_data_dir(dir: &Path, languages: &[String], ratio_filter: bool) -> Result<DataSet> {
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let texts = read_text(dir, languages)?;
    let mut out = Vec::with_capacity(texts.len());
    for l in &texts {
        let [train, dev, test] = l.splits().map(|t| ParallelCorpus::encode(t, &vocab, ratio_filter).0);
        out.push(LanguageData {
            name: l.name.clone(),
            train,
            dev,
            test,
        });
    }
    Ok(DataSet { vocab, languages: out })
}
