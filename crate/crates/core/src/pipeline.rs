//! Whole runs over a corpus: selection, extraction, grading, evaluation,
//! monitoring reports and reranker training.
//!
//! A run directory holds:
//!
//! ```text
//! config.resolved.json   every effective parameter
//! template.json          the template with entity labels filled in
//! run.json               strategy, budget, client tag, counts
//! failures.json          documents that hard-failed, with the reason
//! results/<doc>.json     extraction result per document
//! contexts/<doc>.json    scores, rankings and the packed context
//! grades/<doc>.json      grader report (when grading is on)
//! grades.jsonl           one line per graded field
//! ```
//!
//! No file carries a timestamp, so identical runs produce identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ClientConfig, ConfigError, RunConfig, Strategy};
use crate::corpus::{chunk_document, Chunk, Corpus, CorpusError, Document};
use crate::embed::{EmbedError, HashedNgramEmbedder};
use crate::eval::{evaluate, monitoring_report, summarize, EvalError, EvalSummary, FieldEval, GroundTruth, MonitoringReport};
use crate::judge::{agent_failures, grade, match_rates, GradeReport, JudgeError, MatchRates};
use crate::labels::{builtin_definitions, LabelDefinition};
use crate::llm::http::{HttpLlmClient, HttpLlmConfig};
use crate::llm::mock::{GroundedMock, RecordingClient, ReplayClient};
use crate::llm::{extract_with_retry, Diagnostic, ExtractError, ExtractionResult, LlmClient, PromptMode};
use crate::ner::Recognizer;
use crate::par::Execution;
use crate::reranker::{
    build_training_set, reranker_rankings, roc_auc, train, FeatureContext, RerankerError, RerankerModel,
    TrainingSetError,
};
use crate::select::{
    baseline_rankings, borda_rankings, global_rank, oracle_rank_vectors, pack_context, pack_greedy, score_document,
    FieldRanking, Rankings, ScoreMatrix, SelectedContext,
};
use crate::template::{Template, TemplateError};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const TEMPLATE_FILE: &str = "template.json";
pub const RUN_INFO_FILE: &str = "run.json";
pub const FAILURES_FILE: &str = "failures.json";
pub const RESULTS_DIR: &str = "results";
pub const CONTEXTS_DIR: &str = "contexts";
pub const GRADES_DIR: &str = "grades";
pub const GRADES_JSONL: &str = "grades.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("template: {0}")]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("reranker: {0}")]
    Reranker(#[from] RerankerError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("no evaluable pairs: results and ground truth share no documents")]
    NoEvaluablePairs,
    #[error("cannot split for training: {0}")]
    Split(String),
    #[error("{0}")]
    Client(String),
}

impl From<TrainingSetError> for PipelineError {
    fn from(e: TrainingSetError) -> Self {
        match e {
            TrainingSetError::Corpus(e) => e.into(),
            TrainingSetError::Embed(e) => e.into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_owned(), source }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&raw).map_err(|source| PipelineError::Json { path: path.to_owned(), source })
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).expect("run artifacts serialize");
    s.push('\n');
    write_text(path, &s)
}

/// File name stem for a document id. Ids that are not already safe get a
/// hash suffix so distinct ids never share a file.
pub fn file_stem(doc_id: &str) -> String {
    let safe: String = doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if safe == doc_id && !safe.starts_with('.') {
        safe
    } else {
        let digest = Sha256::digest(doc_id.as_bytes());
        let hex: String = digest.iter().take(4).map(|b| format!("{b:02x}")).collect();
        format!("{}-{hex}", safe.trim_start_matches('.'))
    }
}

/// Everything a run reads from disk.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub corpus: Corpus,
    /// Entity labels are filled in for fields that declare none.
    pub template: Template,
    pub truth: Option<GroundTruth>,
    pub model: Option<RerankerModel>,
}

impl Inputs {
    pub fn load(config: &RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let corpus = Corpus::load_manifest(&config.manifest)?;
        let bytes = fs::read(&config.template).map_err(io_err(&config.template))?;
        let template = Template::parse(&bytes)?;
        let truth = config.ground_truth.as_deref().map(GroundTruth::load).transpose()?;
        let model = config.model_file.as_deref().map(read_json::<RerankerModel>).transpose()?;
        let defs = match &config.label_definitions {
            Some(p) => read_json::<Vec<LabelDefinition>>(p)?,
            None => builtin_definitions(),
        };
        Self::new(config, corpus, template, truth, model, &defs)
    }

    /// Assembles inputs already in memory, filling in missing field labels.
    pub fn new(
        config: &RunConfig,
        corpus: Corpus,
        mut template: Template,
        truth: Option<GroundTruth>,
        model: Option<RerankerModel>,
        label_definitions: &[LabelDefinition],
    ) -> Result<Self, PipelineError> {
        let embedder = HashedNgramEmbedder::new(config.embedding_dim);
        template.assign_missing_labels(label_definitions, &embedder, &config.labels)?;
        Ok(Self { corpus, template, truth, model })
    }
}

/// Selection output for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub doc_id: String,
    pub strategy: Strategy,
    pub scores: ScoreMatrix,
    pub rankings: Rankings,
    pub context: SelectedContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub doc_id: String,
    pub result: ExtractionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentFailure {
    pub doc_id: String,
    pub stage: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_responses: Vec<String>,
}

/// The parameters that identify a run in a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub strategy: Strategy,
    pub budget_tokens: usize,
    pub client: String,
    pub model: String,
    pub mode: PromptMode,
    pub tool_use: bool,
    pub max_retries: u32,
    pub documents: usize,
    pub failed: usize,
}

struct DocumentOutcome {
    selection: Option<SelectionRecord>,
    result: ExtractionResult,
    grade: Option<GradeReport>,
    failure: Option<DocumentFailure>,
}

#[derive(Debug, Clone)]
pub struct ExtractRun {
    pub out_dir: PathBuf,
    pub info: RunInfo,
    pub results: BTreeMap<String, ExtractionResult>,
    pub failures: Vec<DocumentFailure>,
}

impl ExtractRun {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Builds the client a config asks for.
pub fn build_client(config: &RunConfig, inputs: &Inputs) -> Result<Box<dyn LlmClient>, PipelineError> {
    Ok(match &config.client {
        ClientConfig::GroundedMock => {
            let truth = inputs
                .truth
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("the grounded_mock client requires ground_truth".into()))?;
            Box::new(GroundedMock::new(truth.as_json_objects(&inputs.template), inputs.template.clone()))
        }
        ClientConfig::Replay { fixtures } => Box::new(ReplayClient::new(fixtures)),
        ClientConfig::Http { endpoint, record, max_in_flight, max_attempts, timeout_secs } => {
            let mut http = match (endpoint, HttpLlmConfig::from_env()) {
                (Some(e), env) => HttpLlmConfig {
                    api_key: env.and_then(|c| c.api_key),
                    ..HttpLlmConfig::new(e.clone())
                },
                (None, Some(env)) => env,
                (None, None) => {
                    return Err(PipelineError::Client(format!(
                        "no endpoint configured; set client.endpoint or {}",
                        crate::llm::http::ENDPOINT_ENV
                    )))
                }
            };
            if http.api_key.is_none() {
                http.api_key = std::env::var(crate::llm::http::KEY_ENV).ok().filter(|k| !k.is_empty());
            }
            http.max_in_flight = *max_in_flight;
            http.max_attempts = *max_attempts;
            http.timeout_secs = *timeout_secs;
            let client = HttpLlmClient::new(http);
            match record {
                Some(dir) => Box::new(RecordingClient::new(client, dir).map_err(|e| PipelineError::Client(e.to_string()))?),
                None => Box::new(client),
            }
        }
    })
}

/// A validated config with its inputs loaded.
pub struct Pipeline {
    pub config: RunConfig,
    pub inputs: Inputs,
    embedder: HashedNgramEmbedder,
    exec: Execution,
}

impl Pipeline {
    /// Checks the config against the loaded inputs before any work is done.
    pub fn new(config: RunConfig, inputs: Inputs) -> Result<Self, PipelineError> {
        config.validate()?;
        if config.strategy == Strategy::Oracle && inputs.truth.is_none() {
            return Err(ConfigError::Invalid("strategy oracle requires ground_truth".into()).into());
        }
        if config.strategy == Strategy::Reranker {
            let model = inputs
                .model
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("strategy reranker requires model_file".into()))?;
            model.validate()?;
            if model.field_dim != config.embedding_dim || model.chunk_dim != config.embedding_dim {
                return Err(ConfigError::Invalid(format!(
                    "reranker was trained with {}-dimensional embeddings but embedding_dim is {}",
                    model.field_dim, config.embedding_dim
                ))
                .into());
            }
        }
        Ok(Self {
            embedder: HashedNgramEmbedder::new(config.embedding_dim),
            exec: config.execution(),
            config,
            inputs,
        })
    }

    pub fn load(config: RunConfig) -> Result<Self, PipelineError> {
        let inputs = Inputs::load(&config)?;
        Self::new(config, inputs)
    }

    pub fn template(&self) -> &Template {
        &self.inputs.template
    }

    pub fn chunks(&self, doc: &Document) -> Result<Vec<Chunk>, PipelineError> {
        Ok(chunk_document(doc, &self.config.chunking)?)
    }

    /// Scores, ranks and packs one document under the configured strategy.
    pub fn select(&self, doc: &Document) -> Result<SelectionRecord, PipelineError> {
        let cfg = &self.config;
        let template = self.template();
        let chunks = self.chunks(doc)?;
        let scored = score_document(&chunks, template, &self.embedder, Recognizer::shared(), cfg.bm25, self.exec)?;
        let rankings = match cfg.strategy {
            Strategy::Baseline => baseline_rankings(&scored.scores),
            Strategy::NerBorda => borda_rankings(&scored.scores, &cfg.borda),
            Strategy::Reranker => {
                let model = self.inputs.model.as_ref().expect("checked in Pipeline::new");
                reranker_rankings(model, &scored, &chunks, cfg.chunking.chunk_tokens, &cfg.borda, self.exec)?
            }
            Strategy::Oracle => {
                let truth = self.inputs.truth.as_ref().expect("checked in Pipeline::new");
                let per_field = template
                    .fields
                    .iter()
                    .map(|f| {
                        Ok(FieldRanking {
                            key: f.key.clone(),
                            ranking: oracle_rank_vectors(
                                &scored.chunk_vecs,
                                f,
                                truth.values(&doc.id, &f.key),
                                &self.embedder,
                            )?,
                        })
                    })
                    .collect::<Result<Vec<_>, EmbedError>>()?;
                Rankings { per_field, global: global_rank(&scored.scores, &cfg.borda) }
            }
        };
        let context = if cfg.strategy == Strategy::Baseline {
            pack_greedy(&rankings.global, &rankings.per_field, &chunks, cfg.budget_tokens, cfg.coverage.top_m)
        } else {
            pack_context(&rankings, &chunks, cfg.budget_tokens, &cfg.coverage)
        };
        if let Some(w) = &context.warning {
            log::warn!("{}: {w}", doc.id);
        }
        Ok(SelectionRecord { doc_id: doc.id.clone(), strategy: cfg.strategy, scores: scored.scores, rankings, context })
    }

    fn failed(&self, doc: &Document, stage: &str, error: String, raw_responses: Vec<String>) -> DocumentFailure {
        log::error!("{}: {stage} failed: {error}", doc.id);
        DocumentFailure { doc_id: doc.id.clone(), stage: stage.to_owned(), error, raw_responses }
    }

    fn process(&self, client: &dyn LlmClient, doc: &Document) -> DocumentOutcome {
        let template = self.template();
        let opts = &self.config.extraction;
        let tag = self.config.strategy.as_str();
        let null_result = |msg: &str| {
            let mut r = ExtractionResult::empty(template);
            r.strategy_tag = tag.to_owned();
            r.diagnostics.push(Diagnostic { field: None, message: msg.to_owned() });
            r
        };
        let selection = match self.select(doc) {
            Ok(s) => s,
            Err(e) => {
                let failure = self.failed(doc, "select", e.to_string(), Vec::new());
                return DocumentOutcome {
                    selection: None,
                    result: null_result("selection failed"),
                    grade: None,
                    failure: Some(failure),
                };
            }
        };
        let (result, failure) = match extract_with_retry(client, &selection.context, template, opts, tag) {
            Ok(r) => (r, None),
            Err(ExtractError::AllAttemptsFailed { raw_responses }) => (
                null_result("no attempt produced a parsable answer"),
                Some(self.failed(doc, "extract", "no attempt produced a parsable answer".into(), raw_responses)),
            ),
            Err(e) => (null_result("client failure"), Some(self.failed(doc, "extract", e.to_string(), Vec::new()))),
        };
        let mut outcome = DocumentOutcome { selection: None, result, grade: None, failure };
        if self.config.grading && outcome.failure.is_none() {
            match grade(client, &selection.context, template, &outcome.result, &doc.id, &opts.model, opts.tool_use) {
                Ok(g) => outcome.grade = Some(g),
                Err(JudgeError::Parse { raw }) => {
                    outcome.failure = Some(self.failed(doc, "grade", "grader reply has no grading payload".into(), vec![raw]))
                }
                Err(e) => outcome.failure = Some(self.failed(doc, "grade", e.to_string(), Vec::new())),
            }
        }
        outcome.selection = Some(selection);
        outcome
    }

    fn write_preamble(&self, out: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        write_json(&out.join(RESOLVED_CONFIG_FILE), &self.config)?;
        write_text(&out.join(TEMPLATE_FILE), &format!("{}\n", self.template().to_json()))
    }

    /// Extracts every document (in parallel unless configured otherwise)
    /// and writes the run directory. Hard failures are recorded, not fatal.
    pub fn run_extract(&self, client: &dyn LlmClient) -> Result<ExtractRun, PipelineError> {
        let out = self.config.out_dir.clone();
        self.write_preamble(&out)?;
        let docs = &self.inputs.corpus.documents;
        let outcomes = self.exec.map(docs, |d| self.process(client, d));
        let mut results = BTreeMap::new();
        let mut failures = Vec::new();
        let mut grade_lines = Vec::new();
        for (doc, o) in docs.iter().zip(outcomes) {
            let stem = file_stem(&doc.id);
            write_json(
                &out.join(RESULTS_DIR).join(format!("{stem}.json")),
                &ResultRecord { doc_id: doc.id.clone(), result: o.result.clone() },
            )?;
            if let Some(s) = &o.selection {
                write_json(&out.join(CONTEXTS_DIR).join(format!("{stem}.json")), s)?;
            }
            if let Some(g) = &o.grade {
                write_json(&out.join(GRADES_DIR).join(format!("{stem}.json")), g)?;
                g.write_jsonl(&mut grade_lines).expect("writing to memory");
            }
            failures.extend(o.failure);
            results.insert(doc.id.clone(), o.result);
        }
        if self.config.grading {
            write_text(&out.join(GRADES_JSONL), &String::from_utf8(grade_lines).expect("JSON is UTF-8"))?;
        }
        write_json(&out.join(FAILURES_FILE), &failures)?;
        let opts = &self.config.extraction;
        let info = RunInfo {
            strategy: self.config.strategy,
            budget_tokens: self.config.budget_tokens,
            client: client.tag(),
            model: opts.model.clone(),
            mode: opts.mode,
            tool_use: opts.tool_use,
            max_retries: opts.max_retries,
            documents: docs.len(),
            failed: failures.len(),
        };
        write_json(&out.join(RUN_INFO_FILE), &info)?;
        Ok(ExtractRun { out_dir: out, info, results, failures })
    }

    /// Trains a reranker on a seeded document split and scores it on the
    /// held-out documents. Writes the model and metrics to the output dir.
    pub fn run_train(&self) -> Result<TrainRun, PipelineError> {
        let truth = self
            .inputs
            .truth
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("training requires ground_truth".into()))?;
        let labeled: Vec<&Document> =
            self.inputs.corpus.documents.iter().filter(|d| truth.docs.contains_key(&d.id)).collect();
        let split = split_documents(
            labeled.iter().map(|d| d.id.clone()).collect(),
            self.config.train.train_fraction,
            self.config.train.test_fraction,
            self.config.seed,
        )?;
        let subset = |ids: &[String]| -> Result<Corpus, PipelineError> {
            let docs = labeled.iter().filter(|d| ids.contains(&d.id)).map(|d| (*d).clone()).collect();
            Ok(Corpus::new(docs)?)
        };
        let ctx = FeatureContext {
            template: self.template(),
            embedder: &self.embedder,
            recognizer: Recognizer::shared(),
            chunking: &self.config.chunking,
            bm25: self.config.bm25,
            exec: self.exec,
        };
        let train_pairs = build_training_set(&subset(&split.train)?, truth, &ctx)?;
        let test_pairs = build_training_set(&subset(&split.test)?, truth, &ctx)?;
        let model = train(&train_pairs, &self.config.train.params(self.config.seed))?;
        let preds = self.exec.try_map(&test_pairs, |p| model.predict(&p.features))?;
        let labels: Vec<u8> = test_pairs.iter().map(|p| p.label).collect();
        let correct = preds.iter().zip(&labels).filter(|(p, l)| u8::from(**p >= 0.5) == **l).count();
        let metrics = TrainMetrics {
            train_documents: split.train,
            test_documents: split.test,
            train_pairs: train_pairs.len(),
            train_positives: train_pairs.iter().filter(|p| p.label == 1).count(),
            test_pairs: test_pairs.len(),
            test_positives: labels.iter().filter(|l| **l == 1).count(),
            auc: roc_auc(&preds, &labels),
            accuracy: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
            final_loss: model.training.as_ref().map_or(f64::NAN, |t| t.final_loss),
        };
        let out = &self.config.out_dir;
        self.write_preamble(out)?;
        write_json(&out.join(MODEL_FILE), &model)?;
        write_json(&out.join(METRICS_FILE), &metrics)?;
        Ok(TrainRun { model, metrics })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle, then the first `train_fraction` of documents train and the
/// next `test_fraction` test, each at least one document.
pub fn split_documents(
    mut ids: Vec<String>,
    train_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<DocumentSplit, PipelineError> {
    let n = ids.len();
    if n < 2 {
        return Err(PipelineError::Split(format!("need at least 2 labeled documents, found {n}")));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * n as f64).round() as usize).max(1);
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - n_test);
    let test = ids[n_train..n_train + n_test].to_vec();
    ids.truncate(n_train);
    Ok(DocumentSplit { train: ids, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub train_documents: Vec<String>,
    pub test_documents: Vec<String>,
    pub train_pairs: usize,
    pub train_positives: usize,
    pub test_pairs: usize,
    pub test_positives: usize,
    /// `None` when the held-out pairs contain a single class.
    pub auc: Option<f64>,
    /// At a 0.5 probability threshold.
    pub accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: RerankerModel,
    pub metrics: TrainMetrics,
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub info: RunInfo,
    pub config: RunConfig,
    pub template: Template,
    pub results: BTreeMap<String, ExtractionResult>,
    pub contexts: BTreeMap<String, SelectionRecord>,
    pub grades: BTreeMap<String, GradeReport>,
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "json"));
    files.sort();
    Ok(files)
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let bytes = fs::read(dir.join(TEMPLATE_FILE)).map_err(io_err(&dir.join(TEMPLATE_FILE)))?;
        let mut results = BTreeMap::new();
        for p in json_files(&dir.join(RESULTS_DIR))? {
            let r: ResultRecord = read_json(&p)?;
            results.insert(r.doc_id, r.result);
        }
        let mut contexts = BTreeMap::new();
        for p in json_files(&dir.join(CONTEXTS_DIR))? {
            let s: SelectionRecord = read_json(&p)?;
            contexts.insert(s.doc_id.clone(), s);
        }
        let mut grades = BTreeMap::new();
        for p in json_files(&dir.join(GRADES_DIR))? {
            let g: GradeReport = read_json(&p)?;
            grades.insert(g.doc_id.clone(), g);
        }
        Ok(Self {
            info: read_json(&dir.join(RUN_INFO_FILE))?,
            config: read_json(&dir.join(RESOLVED_CONFIG_FILE))?,
            template: Template::parse(&bytes)?,
            results,
            contexts,
            grades,
        })
    }
}

/// One comparison-table row: strategy, budget, client and mean F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub budget_tokens: usize,
    pub client: String,
    pub mode: PromptMode,
    pub tool_use: bool,
    pub f1: f64,
}

impl std::fmt::Display for SummaryRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{}\t{}\t{:.4}", self.strategy, self.budget_tokens, self.client, self.f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub row: SummaryRow,
    pub summary: EvalSummary,
    /// Extracted documents with no ground truth entry.
    pub missing_truth: Vec<String>,
    /// Labeled documents the run has no result for.
    pub missing_results: Vec<String>,
    #[serde(skip)]
    pub evals: Vec<FieldEval>,
}

/// Scores a run against ground truth on the documents both cover.
pub fn run_eval(run: &RunArtifacts, truth: &GroundTruth, exec: Execution) -> Result<EvalRun, PipelineError> {
    let extracted: BTreeSet<&String> = run.results.keys().collect();
    let labeled: BTreeSet<&String> = truth.docs.keys().collect();
    let missing_truth: Vec<String> = extracted.difference(&labeled).map(|s| (*s).clone()).collect();
    let missing_results: Vec<String> = labeled.difference(&extracted).map(|s| (*s).clone()).collect();
    for d in &missing_truth {
        log::warn!("no ground truth for {d}; skipped");
    }
    for d in &missing_results {
        log::warn!("no result for labeled document {d}; skipped");
    }
    let shared = GroundTruth {
        docs: truth.docs.iter().filter(|(d, _)| extracted.contains(d)).map(|(d, f)| (d.clone(), f.clone())).collect(),
    };
    if shared.docs.is_empty() || run.template.is_empty() {
        return Err(PipelineError::NoEvaluablePairs);
    }
    let evals = evaluate(&run.results, &shared, &run.template, exec);
    let summary = summarize(&evals)?;
    Ok(EvalRun {
        row: SummaryRow {
            strategy: run.info.strategy,
            budget_tokens: run.info.budget_tokens,
            client: run.info.client.clone(),
            mode: run.info.mode,
            tool_use: run.info.tool_use,
            f1: summary.mean_f1,
        },
        summary,
        missing_truth,
        missing_results,
        evals,
    })
}

impl EvalRun {
    /// `eval.jsonl` (one line per pair) and `eval_summary.json`.
    pub fn write(&self, out: &Path) -> Result<(), PipelineError> {
        let mut lines = String::new();
        for e in &self.evals {
            lines.push_str(&serde_json::to_string(e).expect("evals serialize"));
            lines.push('\n');
        }
        write_text(&out.join("eval.jsonl"), &lines)?;
        write_json(&out.join("eval_summary.json"), self)
    }
}

/// Grades every extracted document of a run against its saved context.
pub fn grade_run(
    run: &RunArtifacts,
    client: &dyn LlmClient,
    exec: Execution,
) -> Result<BTreeMap<String, GradeReport>, PipelineError> {
    let opts = &run.config.extraction;
    let docs: Vec<(&String, &ExtractionResult)> = run.results.iter().collect();
    let graded = exec.try_map(&docs, |(doc, result)| {
        let ctx = run
            .contexts
            .get(*doc)
            .ok_or_else(|| PipelineError::Client(format!("{doc}: no saved context to grade against")))?;
        Ok::<_, PipelineError>(((*doc).clone(), grade(client, &ctx.context, &run.template, result, doc, &opts.model, opts.tool_use)?))
    })?;
    Ok(graded.into_iter().collect())
}

pub fn write_grades(grades: &BTreeMap<String, GradeReport>, out: &Path) -> Result<(), PipelineError> {
    let mut lines = Vec::new();
    for (doc, g) in grades {
        write_json(&out.join(GRADES_DIR).join(format!("{}.json", file_stem(doc))), g)?;
        g.write_jsonl(&mut lines).expect("writing to memory");
    }
    write_text(&out.join(GRADES_JSONL), &String::from_utf8(lines).expect("JSON is UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub monitoring: MonitoringReport,
    /// Present when the run was graded and ground truth was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_rates: Option<MatchRates>,
}

/// Aggregate monitoring figures and, given truth, grader/agent/truth
/// agreement on the documents all three cover.
pub fn run_report(run: &RunArtifacts, truth: Option<&GroundTruth>) -> Result<RunReport, PipelineError> {
    let monitoring = monitoring_report(&run.template, run.results.values(), run.grades.values());
    let match_rates = match truth {
        Some(t) if !run.grades.is_empty() => {
            let docs: BTreeSet<&String> =
                run.grades.keys().filter(|d| run.results.contains_key(*d) && t.docs.contains_key(*d)).collect();
            if docs.is_empty() {
                None
            } else {
                fn pick<T: Clone>(m: &BTreeMap<String, T>, docs: &BTreeSet<&String>) -> BTreeMap<String, T> {
                    docs.iter().map(|d| ((*d).clone(), m[*d].clone())).collect()
                }
                let grades = pick(&run.grades, &docs);
                let agents = pick(&run.results, &docs);
                let truth = GroundTruth { docs: pick(&t.docs, &docs) };
                Some(match_rates(&grades, &agents, &truth, &run.template, &agent_failures)?)
            }
        }
        _ => None,
    };
    Ok(RunReport { monitoring, match_rates })
}

impl RunReport {
    /// `report.json` and `monitoring.csv`.
    pub fn write(&self, out: &Path) -> Result<(), PipelineError> {
        write_json(&out.join("report.json"), self)?;
        let csv = self.monitoring.to_csv().map_err(|e| PipelineError::Client(e.to_string()))?;
        write_text(&out.join("monitoring.csv"), &csv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_safe_and_distinct() {
        assert_eq!(file_stem("lease-001"), "lease-001");
        let a = file_stem("a/b");
        let b = file_stem("a_b");
        assert_ne!(a, b);
        assert!(a.starts_with("a_b-"));
        assert!(!file_stem("../x").contains('/'));
        assert!(!file_stem("..").starts_with('.'));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<String> = (0..40).map(|i| format!("d{i}")).collect();
        let s = split_documents(ids.clone(), 0.10, 0.05, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (4, 2));
        assert!(s.train.iter().all(|d| !s.test.contains(d)));
        assert_eq!(s, split_documents(ids.clone(), 0.10, 0.05, 3).unwrap());
        let two = split_documents(ids[..2].to_vec(), 0.10, 0.05, 3).unwrap();
        assert_eq!((two.train.len(), two.test.len()), (1, 1));
        assert!(matches!(split_documents(ids[..1].to_vec(), 0.1, 0.05, 3), Err(PipelineError::Split(_))));
    }
}
