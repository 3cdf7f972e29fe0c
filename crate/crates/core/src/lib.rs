//! Template-driven metadata extraction from converted documents.
//!
//! The pipeline chunks documents ([`corpus`]), ranks chunks against each
//! field of an extraction template ([`select`], optionally with the learned
//! [`reranker`]), asks an LLM to fill the template from the packed context
//! ([`llm`]), optionally grades the answer with a second model ([`judge`]),
//! and scores the output against ground truth ([`eval`]). [`pipeline`] runs
//! these stages over a whole corpus as described by a [`config::RunConfig`].

pub mod config;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod judge;
pub mod labels;
pub mod llm;
pub mod ner;
pub mod par;
pub mod pipeline;
pub mod reranker;
pub mod select;
pub mod template;

pub use corpus::{chunk_document, count_tokens, Chunk, ChunkingConfig, Corpus, Document, DocumentFormat};
pub use embed::{cosine, Embedder, EmbeddingVector, HashedNgramEmbedder};
pub use labels::{EntityLabel, LabelDefinition};
pub use ner::{EntitySpan, Recognizer};
pub use template::{FieldSpec, Template, ValueType};
