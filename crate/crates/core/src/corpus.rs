//! Document loading and deterministic token-window chunking.
//!
//! A token is a maximal run of alphanumeric characters or a single
//! punctuation character. Whitespace separates tokens and is never counted.
//! Chunks are sliding windows over that token stream; their character spans
//! are widened to absorb inter-token whitespace so that stitching the chunks
//! back together (dropping the overlapping prefix of each chunk) reproduces
//! the document text byte for byte.

use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("overlap_tokens ({overlap}) must be smaller than chunk_tokens ({chunk})")]
    InvalidOverlap { chunk: usize, overlap: usize },
    #[error("chunk_tokens must be at least 1")]
    ZeroChunkSize,
    #[error("document id must not be empty")]
    EmptyId,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DocumentFormat {
    #[default]
    Plain,
    Markdown,
}

/// Converted document text plus the tag of the conversion that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub format: DocumentFormat,
    pub conversion_tag: String,
}

impl Document {
    /// Builds a document, normalizing CRLF and lone CR line endings to LF.
    pub fn new(
        id: impl Into<String>,
        text: &str,
        format: DocumentFormat,
        conversion_tag: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        if id.is_empty() {
            return Err(CorpusError::EmptyId);
        }
        Ok(Self {
            id,
            text: normalize_newlines(text),
            format,
            conversion_tag: conversion_tag.into(),
        })
    }
}

pub fn normalize_newlines(text: &str) -> String {
    if !text.contains('\r') {
        return text.to_owned();
    }
    text.replace("\r\n", "\n").replace('\r', "\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    /// Byte offsets into the document text, always on char boundaries.
    pub char_span: Range<usize>,
    pub text: String,
    pub token_count: usize,
}

/// How chunk token counts are reported for budget accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenEstimate {
    /// Count tokens with [`count_tokens`].
    #[default]
    Lexical,
    /// `ceil(chars / 4)`, closer to what hosted model tokenizers report.
    CharsDiv4,
}

impl TokenEstimate {
    pub fn count(self, text: &str) -> usize {
        match self {
            TokenEstimate::Lexical => count_tokens(text),
            TokenEstimate::CharsDiv4 => text.chars().count().div_ceil(4),
        }
    }
}

/// Byte spans of every token in `text`.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(i);
            }
            continue;
        }
        if let Some(s) = run_start.take() {
            spans.push(s..i);
        }
        if !c.is_whitespace() {
            spans.push(i..i + c.len_utf8());
        }
    }
    if let Some(s) = run_start {
        spans.push(s..text.len());
    }
    spans
}

/// Token strings of `text`, in order.
pub fn tokenize(text: &str) -> Vec<&str> {
    token_spans(text).into_iter().map(|r| &text[r]).collect()
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub chunk_tokens: usize,
    pub overlap_tokens: usize,
    #[serde(default)]
    pub token_estimate: TokenEstimate,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: 512,
            overlap_tokens: 64,
            token_estimate: TokenEstimate::Lexical,
        }
    }
}

impl ChunkingConfig {
    pub fn new(chunk_tokens: usize, overlap_tokens: usize) -> Result<Self, CorpusError> {
        let cfg = Self {
            chunk_tokens,
            overlap_tokens,
            token_estimate: TokenEstimate::Lexical,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.chunk_tokens == 0 {
            return Err(CorpusError::ZeroChunkSize);
        }
        if self.overlap_tokens >= self.chunk_tokens {
            return Err(CorpusError::InvalidOverlap {
                chunk: self.chunk_tokens,
                overlap: self.overlap_tokens,
            });
        }
        Ok(())
    }
}

/// Splits a document into overlapping token windows.
///
/// Window `k` covers tokens `[k * stride, min(k * stride + chunk_tokens, n))`
/// with `stride = chunk_tokens - overlap_tokens`; the last window is the first
/// one that reaches the final token. The first chunk starts at byte 0 and the
/// last ends at the end of the text; every other chunk ends where the next
/// token after its window begins.
pub fn chunk_document(doc: &Document, config: &ChunkingConfig) -> Result<Vec<Chunk>, CorpusError> {
    config.validate()?;
    let tokens = token_spans(&doc.text);
    let n = tokens.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let stride = config.chunk_tokens - config.overlap_tokens;
    let mut chunks = Vec::new();
    let mut first = 0usize;
    loop {
        let end_tok = (first + config.chunk_tokens).min(n);
        let start = if first == 0 { 0 } else { tokens[first].start };
        let end = if end_tok == n {
            doc.text.len()
        } else {
            tokens[end_tok].start
        };
        let text = doc.text[start..end].to_owned();
        chunks.push(Chunk {
            doc_id: doc.id.clone(),
            index: chunks.len(),
            char_span: start..end,
            token_count: config.token_estimate.count(&text),
            text,
        });
        if end_tok == n {
            break;
        }
        first += stride;
    }
    Ok(chunks)
}

/// Rebuilds the document text from its chunks by appending, for each chunk,
/// only the bytes past the previous chunk's end.
pub fn stitch_chunks(doc_text: &str, chunks: &[Chunk]) -> String {
    let mut out = String::with_capacity(doc_text.len());
    let mut covered = 0usize;
    for c in chunks {
        if c.char_span.end > covered {
            let from = c.char_span.start.max(covered) - c.char_span.start;
            out.push_str(&c.text[from..]);
            covered = c.char_span.end;
        }
    }
    out
}

/// One entry of a corpus manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<DocumentFormat>,
    #[serde(default)]
    pub conversion_tag: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for d in &documents {
            if d.id.is_empty() {
                return Err(CorpusError::EmptyId);
            }
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
        }
        Ok(Self { documents })
    }

    /// Loads a JSON manifest. Relative document paths resolve against the
    /// manifest's directory; a missing `format` is inferred from the extension.
    pub fn load_manifest(path: &Path) -> Result<Self, CorpusError> {
        let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&raw).map_err(|source| CorpusError::Manifest {
                path: path.to_owned(),
                source,
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut docs = Vec::with_capacity(entries.len());
        for e in entries {
            let doc_path = if e.path.is_absolute() {
                e.path.clone()
            } else {
                base.join(&e.path)
            };
            let text = fs::read_to_string(&doc_path).map_err(|source| CorpusError::Io {
                path: doc_path.clone(),
                source,
            })?;
            let format = e.format.unwrap_or_else(|| {
                match doc_path.extension().and_then(|x| x.to_str()) {
                    Some("md") | Some("markdown") => DocumentFormat::Markdown,
                    _ => DocumentFormat::Plain,
                }
            });
            docs.push(Document::new(e.id, &text, format, e.conversion_tag)?);
        }
        Self::new(docs)
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}
