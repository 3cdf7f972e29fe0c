//! Weighted Borda aggregation of score families.
//!
//! Each family ranks all `N` chunks by score, highest first. The chunk at
//! 0-based position `p` earns `N - 1 - p` points; tied chunks share the mean
//! of the points of the positions they occupy. A chunk's Borda key is the
//! weighted sum of its points over families, and the final order is by key
//! descending with ties broken by chunk index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("Borda weights must be finite and non-negative")]
    Negative,
    #[error("at least one Borda weight must be positive")]
    AllZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BordaWeights {
    pub per_field_cos: f64,
    pub per_field_ner: f64,
    pub total_cos: f64,
    pub total_ner: f64,
}

impl Default for BordaWeights {
    fn default() -> Self {
        Self {
            per_field_cos: 1.0,
            per_field_ner: 1.0,
            total_cos: 1.0,
            total_ner: 1.0,
        }
    }
}

impl BordaWeights {
    pub fn new(
        per_field_cos: f64,
        per_field_ner: f64,
        total_cos: f64,
        total_ner: f64,
    ) -> Result<Self, WeightsError> {
        let w = Self {
            per_field_cos,
            per_field_ner,
            total_cos,
            total_ner,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WeightsError> {
        let ws = self.as_array();
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(WeightsError::Negative);
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(WeightsError::AllZero);
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.per_field_cos, self.per_field_ner, self.total_cos, self.total_ner]
    }
}

/// Chunk indices sorted by score descending, ties by index ascending.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Borda points per chunk for one family, averaging over ties.
pub fn positional_points(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let order = rank_descending(scores);
    let mut points = vec![0.0; n];
    let mut p = 0;
    while p < n {
        let mut q = p;
        while q + 1 < n && scores[order[q + 1]] == scores[order[p]] {
            q += 1;
        }
        // mean of (n-1-p) ..= (n-1-q)
        let pts = (n - 1) as f64 - (p + q) as f64 / 2.0;
        for &c in &order[p..=q] {
            points[c] = pts;
        }
        p = q + 1;
    }
    points
}

/// Weighted Borda keys over `(weight, scores)` families.
pub fn borda_keys(families: &[(f64, &[f64])]) -> Vec<f64> {
    let n = families.first().map_or(0, |(_, s)| s.len());
    let mut keys = vec![0.0; n];
    for (w, scores) in families {
        if *w == 0.0 {
            continue;
        }
        debug_assert_eq!(scores.len(), n);
        for (k, pts) in keys.iter_mut().zip(positional_points(scores)) {
            *k += w * pts;
        }
    }
    keys
}

pub fn borda_combine(families: &[(f64, &[f64])]) -> Vec<usize> {
    rank_descending(&borda_keys(families))
}
