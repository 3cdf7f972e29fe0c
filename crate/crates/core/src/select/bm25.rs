//! Okapi BM25 over a single document's chunk set.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{token_spans, Chunk};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Case-folded alphanumeric tokens; punctuation tokens are not terms.
pub fn terms(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|r| &text[r])
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(str::to_lowercase)
        .collect()
}

fn term_frequencies(text: &str) -> (HashMap<String, usize>, usize) {
    let ts = terms(text);
    let len = ts.len();
    let mut tf = HashMap::new();
    for t in ts {
        *tf.entry(t).or_insert(0) += 1;
    }
    (tf, len)
}

/// Document frequencies and average length over one document's chunks.
#[derive(Debug, Clone, Default)]
pub struct Bm25Stats {
    pub num_chunks: usize,
    pub avg_len: f64,
    df: HashMap<String, usize>,
}

impl Bm25Stats {
    pub fn build(chunks: &[Chunk]) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut total = 0usize;
        for c in chunks {
            let (tf, len) = term_frequencies(&c.text);
            total += len;
            for t in tf.into_keys() {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let n = chunks.len();
        Self {
            num_chunks: n,
            avg_len: if n == 0 { 0.0 } else { total as f64 / n as f64 },
            df,
        }
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_chunks as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// BM25 score of `text` for the distinct terms of `query_terms`.
pub fn bm25_text(query_terms: &[String], text: &str, stats: &Bm25Stats, params: Bm25Params) -> f64 {
    let (tf, len) = term_frequencies(text);
    let norm = if stats.avg_len > 0.0 {
        1.0 - params.b + params.b * len as f64 / stats.avg_len
    } else {
        1.0
    };
    let mut seen = HashSet::new();
    let mut score = 0.0;
    for q in query_terms {
        if !seen.insert(q.as_str()) {
            continue;
        }
        let f = tf.get(q).copied().unwrap_or(0) as f64;
        if f == 0.0 {
            continue;
        }
        score += stats.idf(q) * f * (params.k1 + 1.0) / (f + params.k1 * norm);
    }
    score
}

pub fn bm25(query_terms: &[String], chunk: &Chunk, stats: &Bm25Stats, params: Bm25Params) -> f64 {
    bm25_text(query_terms, &chunk.text, stats, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::count_tokens;

    fn chunk(i: usize, text: &str) -> Chunk {
        Chunk {
            doc_id: "d".into(),
            index: i,
            char_span: 0..text.len(),
            text: text.into(),
            token_count: count_tokens(text),
        }
    }

    #[test]
    fn zero_when_no_term_matches() {
        let cs = [chunk(0, "alpha beta"), chunk(1, "gamma")];
        let st = Bm25Stats::build(&cs);
        assert_eq!(bm25(&terms("delta"), &cs[0], &st, Bm25Params::default()), 0.0);
    }

    #[test]
    fn single_chunk_single_term() {
        let cs = [chunk(0, "Delaware")];
        let st = Bm25Stats::build(&cs);
        let s = bm25(&terms("delaware"), &cs[0], &st, Bm25Params::default());
        // ln(1 + 0.5/1.5) * (1 * 2.2) / (1 + 1.2 * 1)
        let expected = (4.0f64 / 3.0).ln();
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
        assert!((s - 0.2877).abs() < 1e-4);
    }

    #[test]
    fn case_folding_and_punctuation() {
        let cs = [chunk(0, "GOVERNING Law, state"), chunk(1, "other words")];
        let st = Bm25Stats::build(&cs);
        assert!(bm25(&terms("governing law:"), &cs[0], &st, Bm25Params::default()) > 0.0);
        assert_eq!(st.df(","), 0);
    }

    #[test]
    fn tf_monotone() {
        let cs = [chunk(0, "rent rent"), chunk(1, "rent"), chunk(2, "other")];
        let st = Bm25Stats::build(&cs);
        let p = Bm25Params::default();
        let q = terms("rent");
        // same length normalization: compare against the formula with tf doubled
        let single = bm25_text(&q, "rent filler", &st, p);
        let double = bm25_text(&q, "rent rent", &st, p);
        assert!(double >= single);
    }
}
