//! Chunk scoring, ranking and context packing.

pub mod bm25;
pub mod borda;
pub mod pack;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::embed::{cosine, EmbedError, Embedder, EmbeddingVector};
use crate::ner::{normalized_count, EntitySpan, Recognizer};
use crate::par::Execution;
use crate::template::{FieldSpec, Template};

pub use bm25::{bm25, Bm25Params, Bm25Stats};
pub use borda::{borda_combine, positional_points, rank_descending, BordaWeights};
pub use pack::{
    pack_context, pack_greedy, CoverageParams, FieldCoverage, FieldRanking, Rankings,
    SelectedContext,
};

/// Relevance scores for every (chunk, field) pair. Row-major by chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub field_keys: Vec<String>,
    pub per_field_cos: Vec<Vec<f64>>,
    pub per_field_ner: Vec<Vec<f64>>,
    pub total_cos: Vec<f64>,
    pub total_ner: Vec<f64>,
    pub bm25: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn num_chunks(&self) -> usize {
        self.total_cos.len()
    }

    pub fn num_fields(&self) -> usize {
        self.field_keys.len()
    }

    pub fn per_field_cos_column(&self, field: usize) -> Vec<f64> {
        self.per_field_cos.iter().map(|r| r[field]).collect()
    }

    pub fn per_field_ner_column(&self, field: usize) -> Vec<f64> {
        self.per_field_ner.iter().map(|r| r[field]).collect()
    }

    pub fn bm25_column(&self, field: usize) -> Vec<f64> {
        self.bm25.iter().map(|r| r[field]).collect()
    }
}

/// Everything computed while scoring one document, kept for feature
/// extraction.
#[derive(Debug, Clone)]
pub struct ScoredDocument {
    pub scores: ScoreMatrix,
    pub chunk_vecs: Vec<EmbeddingVector>,
    pub field_vecs: Vec<EmbeddingVector>,
    pub template_vec: EmbeddingVector,
    pub entities: Vec<Vec<EntitySpan>>,
}

/// Scores every chunk against every field. Chunks are processed
/// independently according to `exec`.
pub fn score_document(
    chunks: &[Chunk],
    template: &Template,
    embedder: &dyn Embedder,
    recognizer: &Recognizer,
    bm25_params: Bm25Params,
    exec: Execution,
) -> Result<ScoredDocument, EmbedError> {
    let field_texts: Vec<String> = template.fields.iter().map(FieldSpec::embedding_text).collect();
    let field_vecs = field_texts
        .iter()
        .map(|t| embedder.embed(t))
        .collect::<Result<Vec<_>, _>>()?;
    let template_vec = embedder.embed(&template.aggregate_text())?;
    let queries: Vec<Vec<String>> = field_texts.iter().map(|t| bm25::terms(t)).collect();
    let all_labels = template.all_labels();
    let stats = Bm25Stats::build(chunks);

    struct Row {
        vec: EmbeddingVector,
        entities: Vec<EntitySpan>,
        pf_cos: Vec<f64>,
        pf_ner: Vec<f64>,
        total_cos: f64,
        total_ner: f64,
        bm25: Vec<f64>,
    }

    let rows = exec.try_map(chunks, |chunk| -> Result<Row, EmbedError> {
        let vec = embedder.embed(&chunk.text)?;
        let entities = recognizer.recognize(&chunk.text);
        let pf_cos = field_vecs
            .iter()
            .map(|f| cosine(f, &vec))
            .collect::<Result<Vec<_>, _>>()?;
        let pf_ner = template
            .fields
            .iter()
            .map(|f| normalized_count(&entities, &f.ner_labels, chunk.token_count))
            .collect();
        let total_cos = cosine(&template_vec, &vec)?;
        let total_ner = normalized_count(&entities, &all_labels, chunk.token_count);
        let bm25 = queries
            .iter()
            .map(|q| bm25::bm25(q, chunk, &stats, bm25_params))
            .collect();
        Ok(Row {
            vec,
            entities,
            pf_cos,
            pf_ner,
            total_cos,
            total_ner,
            bm25,
        })
    })?;

    let mut scores = ScoreMatrix {
        field_keys: template.keys().map(str::to_owned).collect(),
        per_field_cos: Vec::with_capacity(rows.len()),
        per_field_ner: Vec::with_capacity(rows.len()),
        total_cos: Vec::with_capacity(rows.len()),
        total_ner: Vec::with_capacity(rows.len()),
        bm25: Vec::with_capacity(rows.len()),
    };
    let mut chunk_vecs = Vec::with_capacity(rows.len());
    let mut entities = Vec::with_capacity(rows.len());
    for r in rows {
        scores.per_field_cos.push(r.pf_cos);
        scores.per_field_ner.push(r.pf_ner);
        scores.total_cos.push(r.total_cos);
        scores.total_ner.push(r.total_ner);
        scores.bm25.push(r.bm25);
        chunk_vecs.push(r.vec);
        entities.push(r.entities);
    }
    Ok(ScoredDocument {
        scores,
        chunk_vecs,
        field_vecs,
        template_vec,
        entities,
    })
}

pub fn compute_scores(
    chunks: &[Chunk],
    template: &Template,
    embedder: &dyn Embedder,
    recognizer: &Recognizer,
    bm25_params: Bm25Params,
) -> Result<ScoreMatrix, EmbedError> {
    score_document(chunks, template, embedder, recognizer, bm25_params, Execution::default())
        .map(|d| d.scores)
}

/// Weighted Borda ranking of all chunks for one field over the four score
/// families (per-field cosine, per-field NER, total cosine, total NER).
pub fn borda_rank(scores: &ScoreMatrix, weights: &BordaWeights, field: usize) -> Vec<usize> {
    let pf_cos = scores.per_field_cos_column(field);
    let pf_ner = scores.per_field_ner_column(field);
    borda_combine(&[
        (weights.per_field_cos, &pf_cos),
        (weights.per_field_ner, &pf_ner),
        (weights.total_cos, &scores.total_cos),
        (weights.total_ner, &scores.total_ner),
    ])
}

/// Template-level ranking from the two total-score families; falls back to
/// equal weights when both total weights are zero.
pub fn global_rank(scores: &ScoreMatrix, weights: &BordaWeights) -> Vec<usize> {
    let (wc, wn) = if weights.total_cos == 0.0 && weights.total_ner == 0.0 {
        (1.0, 1.0)
    } else {
        (weights.total_cos, weights.total_ner)
    };
    borda_combine(&[(wc, &scores.total_cos), (wn, &scores.total_ner)])
}

pub fn borda_rankings(scores: &ScoreMatrix, weights: &BordaWeights) -> Rankings {
    Rankings {
        per_field: (0..scores.num_fields())
            .map(|f| FieldRanking {
                key: scores.field_keys[f].clone(),
                ranking: borda_rank(scores, weights, f),
            })
            .collect(),
        global: global_rank(scores, weights),
    }
}

/// Cosine-only rankings: per field by per-field cosine, globally by the mean
/// per-field cosine.
pub fn baseline_rankings(scores: &ScoreMatrix) -> Rankings {
    let nf = scores.num_fields().max(1) as f64;
    let mean: Vec<f64> = scores
        .per_field_cos
        .iter()
        .map(|row| row.iter().sum::<f64>() / nf)
        .collect();
    Rankings {
        per_field: (0..scores.num_fields())
            .map(|f| FieldRanking {
                key: scores.field_keys[f].clone(),
                ranking: rank_descending(&scores.per_field_cos_column(f)),
            })
            .collect(),
        global: rank_descending(&mean),
    }
}

/// Text used for oracle ranking: the field text followed by its true values.
pub fn oracle_query(field: &FieldSpec, truth_values: &[String]) -> String {
    format!("{} {}", field.embedding_text(), truth_values.join(" "))
}

/// Ranks chunks by similarity to the field text augmented with its
/// ground-truth values.
pub fn oracle_rank(
    chunks: &[Chunk],
    field: &FieldSpec,
    truth_values: &[String],
    embedder: &dyn Embedder,
) -> Result<Vec<usize>, EmbedError> {
    let vecs = chunks
        .iter()
        .map(|c| embedder.embed(&c.text))
        .collect::<Result<Vec<_>, _>>()?;
    oracle_rank_vectors(&vecs, field, truth_values, embedder)
}

pub fn oracle_rank_vectors(
    chunk_vecs: &[EmbeddingVector],
    field: &FieldSpec,
    truth_values: &[String],
    embedder: &dyn Embedder,
) -> Result<Vec<usize>, EmbedError> {
    let q = embedder.embed(&oracle_query(field, truth_values))?;
    let sims = chunk_vecs
        .iter()
        .map(|v| cosine(&q, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rank_descending(&sims))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::count_tokens;
    use crate::embed::HashedNgramEmbedder;
    use crate::labels::EntityLabel;
    use crate::template::ValueType;

    fn chunk(i: usize, text: &str) -> Chunk {
        Chunk {
            doc_id: "d".into(),
            index: i,
            char_span: 0..text.len(),
            text: text.into(),
            token_count: count_tokens(text),
        }
    }

    fn date_template() -> Template {
        Template::new(vec![FieldSpec::new(
            "Effective Date",
            "Specify the date when the contract becomes effective.",
            ValueType::Date,
        )
        .with_labels([EntityLabel::Date])])
        .unwrap()
    }

    fn score(chunks: &[Chunk], t: &Template) -> ScoreMatrix {
        compute_scores(
            chunks,
            t,
            &HashedNgramEmbedder::default(),
            Recognizer::shared(),
            Bm25Params::default(),
        )
        .unwrap()
    }

    #[test]
    fn entity_free_chunk_has_zero_ner_row() {
        let cs = [chunk(0, "nothing here but plain words")];
        let s = score(&cs, &date_template());
        assert_eq!(s.per_field_ner[0], vec![0.0]);
        assert_eq!(s.total_ner[0], 0.0);
    }

    #[test]
    fn single_field_total_equals_per_field() {
        let cs = [chunk(0, "The contract is effective on May 1, 2020."), chunk(1, "Other text.")];
        let s = score(&cs, &date_template());
        for i in 0..2 {
            assert!((s.total_cos[i] - s.per_field_cos[i][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn date_chunk_outscores_plain_chunk_on_ner() {
        let cs = [
            chunk(0, "Signed 2023 and renewed 2024 by both sides"),
            chunk(1, "Signed here and renewed there by both sides"),
        ];
        assert_eq!(cs[0].token_count, cs[1].token_count);
        let s = score(&cs, &date_template());
        assert!(s.per_field_ner[0][0] > s.per_field_ner[1][0]);
    }

    #[test]
    fn single_family_weights_follow_that_family() {
        let cs: Vec<Chunk> = ["alpha", "effective date of contract", "date", "beta gamma"]
            .iter()
            .enumerate()
            .map(|(i, t)| chunk(i, t))
            .collect();
        let s = score(&cs, &date_template());
        let w = BordaWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(borda_rank(&s, &w, 0), rank_descending(&s.per_field_cos_column(0)));
    }

    #[test]
    fn oracle_ranks_identical_text_first() {
        let emb = HashedNgramEmbedder::default();
        let t = date_template();
        let truth = vec!["March 24, 2024".to_owned()];
        let q = oracle_query(&t.fields[0], &truth);
        let cs = [chunk(0, "unrelated words"), chunk(1, &q), chunk(2, "more filler")];
        assert_eq!(oracle_rank(&cs, &t.fields[0], &truth, &emb).unwrap()[0], 1);
        let same: Vec<Chunk> = (0..4).map(|i| chunk(i, "same text")).collect();
        assert_eq!(oracle_rank(&same, &t.fields[0], &truth, &emb).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn oracle_finds_truth_bearing_chunk() {
        let emb = HashedNgramEmbedder::default();
        let f = FieldSpec::new("Governing Law", "Which jurisdiction's law governs the agreement?", ValueType::String);
        let cs = [
            chunk(0, "The parties agree to the terms and conditions of this agreement."),
            chunk(1, "This agreement shall be construed under the laws of the State of Delaware."),
            chunk(2, "Payment is due within thirty days of each invoice."),
        ];
        let r = oracle_rank(&cs, &f, &["State of Delaware".into()], &emb).unwrap();
        assert_eq!(r[0], 1);
    }
}
