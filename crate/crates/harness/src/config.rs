use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use akd_core::corpus::FamilySpec;
use akd_core::distillation::{ContributionMode, DistillConfig, TemperatureMode};
use akd_core::model::ModelConfig;
use akd_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Where the parallel data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Source language whose pair is low-resource.
    pub low_resource: String,
    /// Label for the shared target side in result tables.
    #[serde(default = "default_target")]
    pub target: String,
    /// Generate a synthetic family. Exclusive with `corpus_dir`.
    pub family: Option<FamilySpec>,
    /// Directory holding `<lang>.<split>.src` / `.tgt` files.
    pub corpus_dir: Option<PathBuf>,
    /// Languages to read from `corpus_dir`.
    #[serde(default)]
    pub languages: Vec<String>,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    /// Drop pairs with an extreme length ratio when encoding.
    #[serde(default)]
    pub ratio_filter: bool,
    /// Fixed generation seed. Unset uses each run's seed.
    pub seed: Option<u64>,
}

fn default_target() -> String {
    "tgt".into()
}

fn default_min_freq() -> usize {
    1
}

/// Transformer shape; the vocabulary size comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub hidden_size: usize,
    pub ffn_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub max_positions: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let d = ModelConfig::desk(0);
        Self {
            hidden_size: d.hidden_size,
            ffn_size: d.ffn_size,
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            dropout_rate: d.dropout_rate,
            label_smoothing: d.label_smoothing,
            max_positions: d.max_positions,
        }
    }
}

impl ModelShape {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            hidden_size: self.hidden_size,
            ffn_size: self.ffn_size,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            dropout_rate: self.dropout_rate,
            label_smoothing: self.label_smoothing,
            max_positions: self.max_positions,
            vocab_size,
        }
    }
}

/// One distilled student. Unset fields inherit from `[distill]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    /// Subset of the experiment's teachers; unset uses all of them.
    pub teachers: Option<Vec<String>>,
    pub contribution: Option<String>,
    /// `adaptive`, `none` or `fixed=<τ>`.
    pub temperature: Option<String>,
    pub smoothing: Option<bool>,
}

impl SystemConfig {
    pub fn resolve(&self, base: &DistillConfig) -> Result<DistillConfig> {
        let mut d = base.clone();
        if let Some(c) = &self.contribution {
            d.contribution = c.parse()?;
        }
        if let Some(t) = &self.temperature {
            d.temperature = t.parse()?;
        }
        if let Some(s) = self.smoothing {
            d.smoothing = s;
        }
        d.validate()?;
        Ok(d)
    }
}

/// Command-line overrides of the distillation settings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ablation {
    pub contribution: Option<ContributionMode>,
    pub temperature: Option<TemperatureMode>,
    pub no_smoothing: bool,
}

impl Ablation {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, d: &mut DistillConfig) {
        if let Some(c) = self.contribution {
            d.contribution = c;
        }
        if let Some(t) = self.temperature {
            d.temperature = t;
        }
        if self.no_smoothing {
            d.smoothing = false;
        }
    }
}

/// Declarative description of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// High-resource languages whose models become teachers.
    pub teachers: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: ModelShape,
    /// Teachers trained from scratch on their high-resource pair.
    #[serde(default)]
    pub teacher_train: TrainConfig,
    /// Continued training of each teacher on the low-resource pair.
    #[serde(default)]
    pub finetune: TrainConfig,
    /// Individual baseline and every distilled student.
    #[serde(default)]
    pub student: TrainConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    /// Distilled students to train. Empty means one adaptive student.
    #[serde(default)]
    pub systems: Vec<SystemConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Short hash of everything that affects a run's outputs, which
    /// excludes the seed list and the output directory.
    pub fn hash(&self) -> Result<String> {
        let key = Self {
            seeds: Vec::new(),
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(key.to_toml()?.as_bytes());
        Ok(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Every language of the data source.
    pub fn languages(&self) -> Vec<String> {
        match (&self.data.family, &self.data.corpus_dir) {
            (Some(f), _) => f.names.clone(),
            _ => self.data.languages.clone(),
        }
    }

    /// Systems to distill, with the default single adaptive student.
    pub fn systems(&self) -> Vec<SystemConfig> {
        if self.systems.is_empty() {
            vec![SystemConfig {
                name: "adaptive_kd".into(),
                teachers: None,
                contribution: None,
                temperature: None,
                smoothing: None,
            }]
        } else {
            self.systems.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match (&self.data.family, &self.data.corpus_dir) {
            (Some(f), None) => f.validate()?,
            (None, Some(_)) if !self.data.languages.is_empty() => {}
            (None, Some(_)) => return bad("data.languages must list the corpora in data.corpus_dir".into()),
            _ => return bad("set exactly one of data.family and data.corpus_dir".into()),
        }
        let langs = self.languages();
        let known: HashSet<&str> = langs.iter().map(String::as_str).collect();
        if !known.contains(self.data.low_resource.as_str()) {
            return bad(format!("low-resource language {:?} is not in the data", self.data.low_resource));
        }
        if self.teachers.is_empty() {
            return bad("at least one teacher language is required".into());
        }
        let mut seen = HashSet::new();
        for t in &self.teachers {
            if !known.contains(t.as_str()) {
                return bad(format!("teacher language {t:?} is not in the data"));
            }
            if *t == self.data.low_resource {
                return bad(format!("teacher language {t:?} is the low-resource language"));
            }
            if !seen.insert(t) {
                return bad(format!("teacher language {t:?} listed twice"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.data.min_freq == 0 {
            return bad("data.min_freq must be at least 1".into());
        }
        self.model.with_vocab(8).validate()?;
        self.teacher_train.validate()?;
        self.finetune.validate()?;
        self.student.validate()?;
        self.distill.validate()?;
        let mut names = HashSet::new();
        for s in self.systems() {
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("system name {:?} must be non-empty [A-Za-z0-9_-]", s.name));
            }
            if !names.insert(s.name.clone()) {
                return bad(format!("system {:?} listed twice", s.name));
            }
            s.resolve(&self.distill)?;
            if let Some(ts) = &s.teachers {
                if ts.is_empty() {
                    return bad(format!("system {:?} has an empty teacher list", s.name));
                }
                if let Some(t) = ts.iter().find(|t| !self.teachers.contains(t)) {
                    return bad(format!("system {:?} uses unknown teacher {t:?}", s.name));
                }
            }
        }
        Ok(())
    }

    /// Teachers used by `system`, in experiment order.
    pub fn system_teachers(&self, system: &SystemConfig) -> Vec<String> {
        match &system.teachers {
            Some(ts) => self.teachers.iter().filter(|t| ts.contains(t)).cloned().collect(),
            None => self.teachers.clone(),
        }
    }
}
