//! Run configuration.
//!
//! Configs are JSON files. Every section is optional and falls back to its
//! defaults; relative paths resolve against the config file's directory.
//! Secrets never live in the file: the HTTP client reads its key from the
//! environment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChunkingConfig;
use crate::llm::http::HttpLlmConfig;
use crate::llm::ExtractOptions;
use crate::reranker::TrainParams;
use crate::select::{Bm25Params, BordaWeights, CoverageParams};
use crate::template::LabelAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Cosine similarity only, packed greedily.
    Baseline,
    /// Weighted Borda over cosine and entity scores with the coverage guarantee.
    #[default]
    NerBorda,
    /// Learned per-field relevance with the coverage guarantee.
    Reranker,
    /// Field text augmented with the true values; an upper bound.
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Baseline, Strategy::NerBorda, Strategy::Reranker, Strategy::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::NerBorda => "ner_borda",
            Strategy::Reranker => "reranker",
            Strategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim().to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| ConfigError::Invalid(format!("unknown strategy {s:?}")))
    }
}

/// Which LLM answers extraction and grading requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientConfig {
    /// Offline stand-in that answers from the ground truth, but only with
    /// values whose evidence is in the prompt's excerpts.
    GroundedMock,
    /// Serves recorded responses from `fixtures`, keyed by request fingerprint.
    Replay { fixtures: PathBuf },
    /// A chat-completions endpoint. A missing endpoint is read from the
    /// environment; with `record` set, every exchange is saved as a fixture.
    Http {
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default)]
        record: Option<PathBuf>,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default = "default_http_attempts")]
        max_attempts: u32,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_in_flight() -> usize {
    HttpLlmConfig::new("").max_in_flight
}
fn default_http_attempts() -> u32 {
    HttpLlmConfig::new("").max_attempts
}
fn default_timeout() -> u64 {
    HttpLlmConfig::new("").timeout_secs
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig::GroundedMock
    }
}

/// Reranker hyperparameters and the document split; the seed comes from
/// [`RunConfig::seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub class_weight: Option<f64>,
    pub train_fraction: f64,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self {
            learning_rate: p.learning_rate,
            momentum: p.momentum,
            epochs: p.epochs,
            batch_size: p.batch_size,
            class_weight: p.class_weight,
            train_fraction: 0.10,
            test_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn params(&self, seed: u64) -> TrainParams {
        TrainParams {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            class_weight: self.class_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSON corpus manifest.
    pub manifest: PathBuf,
    /// JSON extraction template.
    pub template: PathBuf,
    pub ground_truth: Option<PathBuf>,
    /// Trained reranker, required by the `reranker` strategy.
    pub model_file: Option<PathBuf>,
    /// Replacement entity-label glosses (a JSON list of `{label, definition}`).
    pub label_definitions: Option<PathBuf>,
    pub strategy: Strategy,
    pub budget_tokens: usize,
    pub chunking: ChunkingConfig,
    pub embedding_dim: usize,
    pub bm25: Bm25Params,
    pub borda: BordaWeights,
    pub coverage: CoverageParams,
    pub labels: LabelAssignment,
    pub client: ClientConfig,
    pub extraction: ExtractOptions,
    pub grading: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Spread documents and chunks over the thread pool.
    pub parallel: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            template: PathBuf::from("template.json"),
            ground_truth: None,
            model_file: None,
            label_definitions: None,
            strategy: Strategy::default(),
            budget_tokens: 2048,
            chunking: ChunkingConfig::default(),
            embedding_dim: 256,
            bm25: Bm25Params::default(),
            borda: BordaWeights::default(),
            coverage: CoverageParams::default(),
            labels: LabelAssignment::default(),
            client: ClientConfig::default(),
            extraction: ExtractOptions::default(),
            grading: false,
            out_dir: PathBuf::from("run"),
            seed: 17,
            parallel: true,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let mut config: RunConfig =
            serde_json::from_str(&raw).map_err(|source| ConfigError::Parse { path: path.to_owned(), source })?;
        config.resolve_paths(path.parent().unwrap_or_else(|| Path::new(".")));
        Ok(config)
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.template);
        fix(&mut self.out_dir);
        for p in [&mut self.ground_truth, &mut self.model_file, &mut self.label_definitions].into_iter().flatten() {
            fix(p);
        }
        match &mut self.client {
            ClientConfig::Replay { fixtures } => fix(fixtures),
            ClientConfig::Http { record: Some(dir), .. } => fix(dir),
            _ => {}
        }
    }

    /// Checks everything that can be checked without reading inputs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chunking.validate().map_err(|e| invalid(e.to_string()))?;
        self.borda.validate().map_err(|e| invalid(e.to_string()))?;
        if self.budget_tokens < self.chunking.chunk_tokens {
            return Err(invalid(format!(
                "budget_tokens ({}) is smaller than chunking.chunk_tokens ({})",
                self.budget_tokens, self.chunking.chunk_tokens
            )));
        }
        if !(0.0..=1.0).contains(&self.coverage.coverage_fraction) {
            return Err(invalid("coverage.coverage_fraction must lie in [0, 1]"));
        }
        if self.coverage.top_m == 0 {
            return Err(invalid("coverage.top_m must be at least 1"));
        }
        if self.embedding_dim == 0 {
            return Err(invalid("embedding_dim must be positive"));
        }
        if self.strategy == Strategy::Oracle && self.ground_truth.is_none() {
            return Err(invalid("strategy oracle requires ground_truth"));
        }
        if self.strategy == Strategy::Reranker && self.model_file.is_none() {
            return Err(invalid("strategy reranker requires model_file"));
        }
        if self.client == ClientConfig::GroundedMock && self.ground_truth.is_none() {
            return Err(invalid("the grounded_mock client requires ground_truth"));
        }
        let t = &self.train;
        let fraction_ok = |x: f64| x > 0.0 && x < 1.0;
        if !fraction_ok(t.train_fraction) || !fraction_ok(t.test_fraction) || t.train_fraction + t.test_fraction > 1.0 {
            return Err(invalid("train fractions must lie in (0, 1) and sum to at most 1"));
        }
        if t.epochs == 0 || t.batch_size == 0 || !(t.learning_rate > 0.0) {
            return Err(invalid("train needs positive epochs, batch_size and learning_rate"));
        }
        Ok(())
    }

    pub fn execution(&self) -> crate::par::Execution {
        if self.parallel {
            crate::par::Execution::default()
        } else {
            crate::par::Execution::Sequential
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
