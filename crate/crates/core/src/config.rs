//! Run configuration: a TOML file whose every field has a default.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::candidates::{DEFAULT_EMBED_BATCH, DEFAULT_K};
use crate::filters::{FilterChain, DEFAULT_THRESHOLD};
use crate::rerank::{DEFAULT_MAX_LENGTH, DEFAULT_SCORE_BATCH};
use crate::text::{PairingStrategy, DEFAULT_MAX_DEPTH};
use crate::training::TrainMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    File,
    Remote,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Mock,
    Remote,
}

macro_rules! str_enum {
    ($ty:ty, $($name:literal => $variant:expr),+) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value '{other}' (expected one of: {})", [$($name),+].join("|"))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

/// What `run` executes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Train,
    Match,
    /// Matching with a mandatory reference alignment.
    Evaluate,
    #[default]
    End2end,
}

str_enum!(RunMode, "train" => RunMode::Train, "match" => RunMode::Match, "evaluate" => RunMode::Evaluate, "end2end" => RunMode::End2end);
str_enum!(EmbedderKind, "hash" => EmbedderKind::Hash, "file" => EmbedderKind::File, "remote" => EmbedderKind::Remote);
str_enum!(ScorerKind, "mock" => ScorerKind::Mock, "remote" => ScorerKind::Remote);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Precomputed embedding file for `kind = "file"`.
    pub path: Option<PathBuf>,
    pub url: Option<String>,
    pub model: String,
    pub batch_size: usize,
    pub in_flight: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hash,
            path: None,
            url: None,
            model: "sentence-transformers/all-MiniLM-L6-v2".to_string(),
            batch_size: DEFAULT_EMBED_BATCH,
            in_flight: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub url: Option<String>,
    pub model: String,
    /// Token budget per text pair.
    pub max_length: usize,
    pub batch_size: usize,
    pub in_flight: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::Mock,
            url: None,
            model: "cross-encoder/ms-marco-MiniLM-L-6-v2".to_string(),
            max_length: DEFAULT_MAX_LENGTH,
            batch_size: DEFAULT_SCORE_BATCH,
            in_flight: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub mode: TrainMode,
    pub sample_share: f64,
    pub strict_one_endpoint: bool,
    /// Upload the training file to the inference service after writing it.
    pub finetune: bool,
    pub base_model: String,
    pub epochs: u32,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            mode: TrainMode::PrecisionMatcher,
            sample_share: 0.2,
            strict_one_endpoint: false,
            finetune: false,
            base_model: "bert-base-cased".to_string(),
            epochs: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub k: usize,
    pub strategy: PairingStrategy,
    pub threshold: f64,
    /// Filter chain such as `"cut:0.5,mwb"`; when absent, a cut at
    /// `threshold` followed by the assignment filter.
    pub filters: Option<String>,
    pub max_depth: usize,
    pub seed: u64,
    pub embedder: EmbedderConfig,
    pub scorer: ScorerConfig,
    pub training: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::End2end,
            source: None,
            target: None,
            reference: None,
            output_dir: PathBuf::from("out"),
            k: DEFAULT_K,
            strategy: PairingStrategy::Grouped,
            threshold: DEFAULT_THRESHOLD,
            filters: None,
            max_depth: DEFAULT_MAX_DEPTH,
            seed: 42,
            embedder: EmbedderConfig::default(),
            scorer: ScorerConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn filter_chain(&self) -> Result<FilterChain, ConfigError> {
        match &self.filters {
            Some(chain) => chain.parse().map_err(ConfigError::Invalid),
            None => Ok(FilterChain::standard(self.threshold)),
        }
    }

    /// Checks parameter ranges and that both graph paths are set and exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.k == 0 {
            return invalid("k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return invalid(format!("threshold {} outside [0, 1]", self.threshold));
        }
        let share = self.training.sample_share;
        if !(share > 0.0 && share <= 1.0) {
            return invalid(format!("sample_share {share} outside (0, 1]"));
        }
        if self.scorer.max_length < 2 {
            return invalid("scorer max_length must be at least 2".into());
        }
        self.filter_chain()?;
        for (name, path) in [("source", &self.source), ("target", &self.target)] {
            match path {
                None => return invalid(format!("{name} graph path is required")),
                Some(p) if !p.is_file() => return invalid(format!("{name} graph {} does not exist", p.display())),
                Some(_) => {}
            }
        }
        if self.reference.is_none() && (self.mode == RunMode::Evaluate || (self.mode != RunMode::Match && self.training.mode == TrainMode::Reference)) {
            return invalid(format!("mode '{}' with training mode '{}' needs a reference alignment", self.mode, self.training.mode));
        }
        if let Some(r) = &self.reference {
            if !r.is_file() {
                return invalid(format!("reference {} does not exist", r.display()));
            }
        }
        match self.embedder.kind {
            EmbedderKind::File if self.embedder.path.is_none() => {
                return invalid("embedder kind 'file' needs embedder.path".into())
            }
            EmbedderKind::Remote if self.embedder.url.is_none() => {
                return invalid("embedder kind 'remote' needs embedder.url".into())
            }
            _ => {}
        }
        if self.scorer.kind == ScorerKind::Remote && self.scorer.url.is_none() {
            return invalid("scorer kind 'remote' needs scorer.url".into());
        }
        Ok(())
    }
}
