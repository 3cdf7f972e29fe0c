//! Learned chunk–field relevance: features, training-set construction and
//! the ranking strategy built on a trained [`RerankerModel`].

pub mod model;

use serde::{Deserialize, Serialize};

use crate::corpus::{chunk_document, tokenize, Chunk, ChunkingConfig, Corpus, CorpusError};
use crate::embed::{EmbedError, Embedder};
use crate::eval::GroundTruth;
use crate::ner::Recognizer;
use crate::par::Execution;
use crate::select::{global_rank, rank_descending, score_document, Bm25Params, BordaWeights, FieldRanking, Rankings, ScoredDocument};
use crate::template::Template;

pub use model::{gradient_check, roc_auc, train, RerankerError, RerankerModel, TrainParams};

/// Names of the scalar features, in input order.
pub const SCALAR_FEATURES: [&str; 11] = [
    "per_field_cos",
    "total_cos",
    "bm25",
    "per_field_ner",
    "total_ner",
    "chunk_position_fraction",
    "chunk_length_fraction",
    "numeric_token_fraction",
    "titlecase_token_fraction",
    "allcaps_token_fraction",
    "punctuation_token_fraction",
];

/// Features of one (chunk, field) pair: the scalar block followed by the
/// raw field and chunk embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub scalars: Vec<f64>,
    pub field_embedding: Vec<f64>,
    pub chunk_embedding: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.scalars.len() + self.field_embedding.len() + self.chunk_embedding.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub doc_id: String,
    pub chunk_index: usize,
    pub field_key: String,
    pub features: FeatureVector,
    pub label: u8,
}

/// Orthographic stand-ins for part-of-speech features: the fractions of
/// tokens that contain a digit, are TitleCase, are ALLCAPS, or are a single
/// punctuation character.
pub fn orthographic_fractions(text: &str) -> [f64; 4] {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return [0.0; 4];
    }
    let mut counts = [0usize; 4];
    for t in &tokens {
        let mut chars = t.chars();
        let first = chars.next().expect("tokens are non-empty");
        if t.chars().any(|c| c.is_numeric()) {
            counts[0] += 1;
        }
        if first.is_uppercase() && chars.clone().any(char::is_lowercase) && chars.all(|c| !c.is_uppercase()) {
            counts[1] += 1;
        }
        if t.chars().count() >= 2 && t.chars().all(char::is_uppercase) {
            counts[2] += 1;
        }
        if !first.is_alphanumeric() {
            counts[3] += 1;
        }
    }
    counts.map(|c| c as f64 / tokens.len() as f64)
}

/// Feature vectors for every chunk (outer) and field (inner).
pub fn document_features(scored: &ScoredDocument, chunks: &[Chunk], chunk_tokens: usize) -> Vec<Vec<FeatureVector>> {
    let s = &scored.scores;
    let n = chunks.len();
    chunks
        .iter()
        .enumerate()
        .map(|(c, chunk)| {
            let position = if n > 1 { c as f64 / (n - 1) as f64 } else { 0.0 };
            let length = chunk.token_count as f64 / chunk_tokens.max(1) as f64;
            let ortho = orthographic_fractions(&chunk.text);
            (0..s.num_fields())
                .map(|f| {
                    let mut scalars = vec![
                        s.per_field_cos[c][f],
                        s.total_cos[c],
                        s.bm25[c][f],
                        s.per_field_ner[c][f],
                        s.total_ner[c],
                        position,
                        length,
                    ];
                    scalars.extend(ortho);
                    FeatureVector {
                        scalars,
                        field_embedding: scored.field_vecs[f].0.clone(),
                        chunk_embedding: scored.chunk_vecs[c].0.clone(),
                    }
                })
                .collect()
        })
        .collect()
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Whether any truth value occurs in the chunk text, both case-folded and
/// whitespace-collapsed.
pub fn contains_truth(chunk_text: &str, truth: &[String]) -> bool {
    let text = squash(chunk_text);
    truth.iter().map(|v| squash(v)).any(|v| !v.is_empty() && text.contains(&v))
}

#[derive(Debug, thiserror::Error)]
pub enum TrainingSetError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Shared inputs for turning documents into scored chunks.
pub struct FeatureContext<'a> {
    pub template: &'a Template,
    pub embedder: &'a dyn Embedder,
    pub recognizer: &'a Recognizer,
    pub chunking: &'a ChunkingConfig,
    pub bm25: Bm25Params,
    pub exec: Execution,
}

/// One labeled pair per (chunk, field) of every labeled document, in corpus,
/// chunk and template order. Documents without ground truth are skipped.
pub fn build_training_set(
    corpus: &Corpus,
    truth: &GroundTruth,
    ctx: &FeatureContext<'_>,
) -> Result<Vec<LabeledPair>, TrainingSetError> {
    let mut pairs = Vec::new();
    for doc in &corpus.documents {
        if !truth.docs.contains_key(&doc.id) {
            log::warn!("document {} has no ground truth; skipped", doc.id);
            continue;
        }
        let chunks = chunk_document(doc, ctx.chunking)?;
        let scored = score_document(&chunks, ctx.template, ctx.embedder, ctx.recognizer, ctx.bm25, ctx.exec)?;
        let features = document_features(&scored, &chunks, ctx.chunking.chunk_tokens);
        for (chunk, row) in chunks.iter().zip(features) {
            for (field, fv) in ctx.template.fields.iter().zip(row) {
                pairs.push(LabeledPair {
                    doc_id: doc.id.clone(),
                    chunk_index: chunk.index,
                    field_key: field.key.clone(),
                    features: fv,
                    label: u8::from(contains_truth(&chunk.text, truth.values(&doc.id, &field.key))),
                });
            }
        }
    }
    Ok(pairs)
}

/// Per-field rankings by predicted relevance; the global ranking stays the
/// weighted Borda order of the total scores.
pub fn reranker_rankings(
    model: &RerankerModel,
    scored: &ScoredDocument,
    chunks: &[Chunk],
    chunk_tokens: usize,
    weights: &BordaWeights,
    exec: Execution,
) -> Result<Rankings, RerankerError> {
    let features = document_features(scored, chunks, chunk_tokens);
    let preds = exec.try_map(&features, |row| row.iter().map(|f| model.predict(f)).collect::<Result<Vec<_>, _>>())?;
    let per_field = scored
        .scores
        .field_keys
        .iter()
        .enumerate()
        .map(|(f, key)| FieldRanking {
            key: key.clone(),
            ranking: rank_descending(&preds.iter().map(|row| row[f]).collect::<Vec<_>>()),
        })
        .collect();
    Ok(Rankings { per_field, global: global_rank(&scored.scores, weights) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, DocumentFormat};
    use crate::embed::HashedNgramEmbedder;
    use crate::template::{FieldSpec, ValueType};
    use std::collections::BTreeMap;

    fn template(n: usize) -> Template {
        Template::new((0..n).map(|i| FieldSpec::new(format!("f{i}"), "?", ValueType::String)).collect()).unwrap()
    }

    fn setup() -> (Corpus, GroundTruth) {
        let text = "The parties agree as follows. Payment is due monthly. This agreement is governed by the laws of the State of Delaware.";
        let corpus = Corpus::new(vec![Document::new("d1", text, DocumentFormat::Plain, "plain").unwrap()]).unwrap();
        let mut truth = GroundTruth::default();
        truth.docs.insert(
            "d1".into(),
            BTreeMap::from([("f0".to_owned(), vec!["delaware".to_owned()]), ("f1".to_owned(), vec!["Nevada".to_owned()])]),
        );
        (corpus, truth)
    }

    fn pairs(corpus: &Corpus, truth: &GroundTruth, t: &Template) -> Vec<LabeledPair> {
        let embedder = HashedNgramEmbedder::new(32);
        let chunking = ChunkingConfig::new(9, 0).unwrap();
        let ctx = FeatureContext {
            template: t,
            embedder: &embedder,
            recognizer: Recognizer::shared(),
            chunking: &chunking,
            bm25: Bm25Params::default(),
            exec: Execution::Sequential,
        };
        build_training_set(corpus, truth, &ctx).unwrap()
    }

    #[test]
    fn cartesian_product_and_substring_labels() {
        let (corpus, truth) = setup();
        let t = template(8);
        let p = pairs(&corpus, &truth, &t);
        let chunks = chunk_document(&corpus.documents[0], &ChunkingConfig::new(9, 0).unwrap()).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(p.len(), 24);
        let positives: Vec<_> = p.iter().filter(|x| x.label == 1).collect();
        assert_eq!(positives.len(), 1);
        assert_eq!(positives[0].field_key, "f0");
        assert!(chunks[positives[0].chunk_index].text.contains("State of Delaware"));
        assert!(p.iter().filter(|x| x.field_key == "f1").all(|x| x.label == 0));
        assert_eq!(p[0].features.scalars.len(), SCALAR_FEATURES.len());
        assert_eq!(p[0].features.dim(), 11 + 64);
    }

    #[test]
    fn unlabeled_documents_skipped() {
        let (corpus, _) = setup();
        assert!(pairs(&corpus, &GroundTruth::default(), &template(2)).is_empty());
    }

    #[test]
    fn orthographic_features() {
        let f = orthographic_fractions("Acme PAID $1,000 on March 24");
        // tokens: Acme PAID $ 1 , 000 on March 24
        assert_eq!(f, [3.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0, 2.0 / 9.0]);
        assert_eq!(orthographic_fractions(""), [0.0; 4]);
    }

    #[test]
    fn predictions_do_not_depend_on_chunk_order() {
        let (corpus, truth) = setup();
        let t = template(2);
        let p = pairs(&corpus, &truth, &t);
        let m = train(&p, &TrainParams { epochs: 3, ..Default::default() }).unwrap();
        let forward: Vec<f64> = p.iter().map(|x| m.predict(&x.features).unwrap()).collect();
        let backward: Vec<f64> = p.iter().rev().map(|x| m.predict(&x.features).unwrap()).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    }
}
