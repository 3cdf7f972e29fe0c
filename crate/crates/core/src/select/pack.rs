//! Packing ranked chunks into a token budget with per-field coverage.
//!
//! Phase 1 visits the fields round-robin and, for each field still short of
//! its quota (`ceil(coverage_fraction * m)` of its top-`m` chunks), admits the
//! highest-ranked top-`m` chunk that is not yet selected and still fits. If the
//! round-robin pass leaves a field short, an exhaustive search over the top-`m`
//! sets looks for any admissible set that meets every quota and uses it
//! instead. Phase 2 fills what budget remains from the global ranking. The
//! result is returned in document order.

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;

/// Node budget for the exhaustive coverage search.
const SEARCH_NODE_LIMIT: usize = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageParams {
    pub coverage_fraction: f64,
    pub top_m: usize,
}

impl Default for CoverageParams {
    fn default() -> Self {
        Self {
            coverage_fraction: 0.5,
            top_m: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRanking {
    pub key: String,
    pub ranking: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rankings {
    pub per_field: Vec<FieldRanking>,
    pub global: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCoverage {
    pub key: String,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedContext {
    /// Selected chunks in document order.
    pub chunks: Vec<Chunk>,
    pub total_tokens: usize,
    pub budget_tokens: usize,
    pub per_field_coverage: Vec<FieldCoverage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl SelectedContext {
    pub fn indices(&self) -> Vec<usize> {
        self.chunks.iter().map(|c| c.index).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn coverage(&self, key: &str) -> Option<f64> {
        self.per_field_coverage
            .iter()
            .find(|c| c.key == key)
            .map(|c| c.coverage)
    }
}

/// Number of top-`m` chunks a field must have selected.
pub fn required_count(coverage_fraction: f64, m: usize) -> usize {
    let r = (coverage_fraction * m as f64 - 1e-9).ceil();
    (r.max(0.0) as usize).min(m)
}

fn top_sets(rankings: &Rankings, n: usize, top_m: usize) -> Vec<Vec<usize>> {
    let m = top_m.min(n);
    rankings
        .per_field
        .iter()
        .map(|f| f.ranking.iter().copied().take(m).collect())
        .collect()
}

fn finish(
    chunks: &[Chunk],
    selected: &[bool],
    rankings_keys: &[String],
    tops: &[Vec<usize>],
    budget: usize,
    warning: Option<String>,
) -> SelectedContext {
    let picked: Vec<Chunk> = chunks
        .iter()
        .enumerate()
        .filter(|(i, _)| selected[*i])
        .map(|(_, c)| c.clone())
        .collect();
    let total_tokens = picked.iter().map(|c| c.token_count).sum();
    let per_field_coverage = rankings_keys
        .iter()
        .zip(tops)
        .map(|(key, top)| FieldCoverage {
            key: key.clone(),
            coverage: if top.is_empty() {
                1.0
            } else {
                top.iter().filter(|&&c| selected[c]).count() as f64 / top.len() as f64
            },
        })
        .collect();
    SelectedContext {
        chunks: picked,
        total_tokens,
        budget_tokens: budget,
        per_field_coverage,
        warning,
    }
}

fn too_small(chunks: &[Chunk], budget: usize) -> Option<String> {
    let smallest = chunks.iter().map(|c| c.token_count).min()?;
    (budget < smallest).then(|| {
        format!("budget of {budget} tokens is smaller than the smallest chunk ({smallest} tokens)")
    })
}

/// Coverage-constrained two-phase packing.
pub fn pack_context(
    rankings: &Rankings,
    chunks: &[Chunk],
    budget_tokens: usize,
    params: &CoverageParams,
) -> SelectedContext {
    let n = chunks.len();
    let keys: Vec<String> = rankings.per_field.iter().map(|f| f.key.clone()).collect();
    let tops = top_sets(rankings, n, params.top_m);
    let mut selected = vec![false; n];
    if let Some(w) = too_small(chunks, budget_tokens) {
        return finish(chunks, &selected, &keys, &tops, budget_tokens, Some(w));
    }
    let sizes: Vec<usize> = chunks.iter().map(|c| c.token_count).collect();
    let required: Vec<usize> = tops
        .iter()
        .map(|t| required_count(params.coverage_fraction, t.len()))
        .collect();

    let mut used = round_robin(&tops, &required, &sizes, budget_tokens, &mut selected);
    let short = |sel: &[bool]| {
        tops.iter()
            .zip(&required)
            .any(|(t, &r)| t.iter().filter(|&&c| sel[c]).count() < r)
    };
    let mut warning = None;
    if short(&selected) {
        match exact_cover(&tops, &required, &sizes, budget_tokens) {
            Search::Found(set) => {
                selected.iter_mut().for_each(|s| *s = false);
                for c in set {
                    selected[c] = true;
                }
                used = sizes.iter().zip(&selected).filter(|(_, s)| **s).map(|(z, _)| z).sum();
            }
            Search::Infeasible => {
                warning = Some("budget cannot satisfy every field's coverage quota".to_owned());
            }
            Search::GaveUp => {
                log::warn!("coverage search hit its node limit; keeping the round-robin selection");
                warning = Some("coverage search exhausted; quotas may be unmet".to_owned());
            }
        }
    }

    for &c in &rankings.global {
        if !selected[c] && used + sizes[c] <= budget_tokens {
            selected[c] = true;
            used += sizes[c];
        }
    }
    finish(chunks, &selected, &keys, &tops, budget_tokens, warning)
}

fn round_robin(
    tops: &[Vec<usize>],
    required: &[usize],
    sizes: &[usize],
    budget: usize,
    selected: &mut [bool],
) -> usize {
    let mut used = 0;
    let mut stuck = vec![false; tops.len()];
    loop {
        let mut progressed = false;
        for (f, top) in tops.iter().enumerate() {
            if stuck[f] || top.iter().filter(|&&c| selected[c]).count() >= required[f] {
                continue;
            }
            match top
                .iter()
                .copied()
                .find(|&c| !selected[c] && used + sizes[c] <= budget)
            {
                Some(c) => {
                    selected[c] = true;
                    used += sizes[c];
                    progressed = true;
                }
                None => stuck[f] = true,
            }
        }
        if !progressed {
            return used;
        }
    }
}

enum Search {
    Found(Vec<usize>),
    Infeasible,
    GaveUp,
}

struct CoverSearch<'a> {
    tops: &'a [Vec<usize>],
    required: &'a [usize],
    sizes: &'a [usize],
    budget: usize,
    selected: Vec<bool>,
    excluded: Vec<bool>,
    nodes: usize,
}

impl CoverSearch<'_> {
    fn deficit(&self, f: usize) -> usize {
        let have = self.tops[f].iter().filter(|&&c| self.selected[c]).count();
        self.required[f].saturating_sub(have)
    }

    // Ok(true) = found, Ok(false) = exhausted subtree, Err(()) = node limit
    fn search(&mut self, used: usize) -> Result<bool, ()> {
        self.nodes += 1;
        if self.nodes > SEARCH_NODE_LIMIT {
            return Err(());
        }
        // most constrained short field
        let mut pick: Option<(usize, Vec<usize>)> = None;
        for f in 0..self.tops.len() {
            let d = self.deficit(f);
            if d == 0 {
                continue;
            }
            let cands: Vec<usize> = self.tops[f]
                .iter()
                .copied()
                .filter(|&c| !self.selected[c] && !self.excluded[c] && used + self.sizes[c] <= self.budget)
                .collect();
            if cands.len() < d {
                return Ok(false);
            }
            let slack = cands.len() - d;
            if pick.as_ref().is_none_or(|(pf, pc)| slack < pc.len() - self.deficit(*pf)) {
                pick = Some((f, cands));
            }
        }
        let Some((_, cands)) = pick else {
            return Ok(true);
        };
        let mut banned = Vec::new();
        let mut result = Ok(false);
        for c in cands {
            self.selected[c] = true;
            let r = self.search(used + self.sizes[c]);
            if matches!(r, Ok(true)) {
                result = r;
                break;
            }
            self.selected[c] = false;
            if r.is_err() {
                result = r;
                break;
            }
            self.excluded[c] = true;
            banned.push(c);
        }
        for c in banned {
            self.excluded[c] = false;
        }
        result
    }
}

fn exact_cover(tops: &[Vec<usize>], required: &[usize], sizes: &[usize], budget: usize) -> Search {
    let mut s = CoverSearch {
        tops,
        required,
        sizes,
        budget,
        selected: vec![false; sizes.len()],
        excluded: vec![false; sizes.len()],
        nodes: 0,
    };
    match s.search(0) {
        Ok(true) => Search::Found(
            s.selected
                .iter()
                .enumerate()
                .filter(|(_, x)| **x)
                .map(|(i, _)| i)
                .collect(),
        ),
        Ok(false) => Search::Infeasible,
        Err(()) => Search::GaveUp,
    }
}

/// Admits chunks in `order` while they fit, with no coverage constraint.
pub fn pack_greedy(
    order: &[usize],
    field_rankings: &[FieldRanking],
    chunks: &[Chunk],
    budget_tokens: usize,
    top_m: usize,
) -> SelectedContext {
    let n = chunks.len();
    let keys: Vec<String> = field_rankings.iter().map(|f| f.key.clone()).collect();
    let tops: Vec<Vec<usize>> = field_rankings
        .iter()
        .map(|f| f.ranking.iter().copied().take(top_m.min(n)).collect())
        .collect();
    let mut selected = vec![false; n];
    let warning = too_small(chunks, budget_tokens);
    if warning.is_none() {
        let mut used = 0;
        for &c in order {
            if !selected[c] && used + chunks[c].token_count <= budget_tokens {
                selected[c] = true;
                used += chunks[c].token_count;
            }
        }
    }
    finish(chunks, &selected, &keys, &tops, budget_tokens, warning)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunks(sizes: &[usize]) -> Vec<Chunk> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| Chunk {
                doc_id: "d".into(),
                index: i,
                char_span: i..i + 1,
                text: format!("c{i}"),
                token_count: s,
            })
            .collect()
    }

    fn ranking(key: &str, r: &[usize]) -> FieldRanking {
        FieldRanking {
            key: key.into(),
            ranking: r.to_vec(),
        }
    }

    #[test]
    fn unconstrained_budget_takes_everything() {
        let cs = chunks(&[3, 3, 3, 2]);
        let r = Rankings {
            per_field: vec![ranking("a", &[2, 0, 1, 3])],
            global: vec![3, 2, 1, 0],
        };
        let sel = pack_context(&r, &cs, 100, &CoverageParams::default());
        assert_eq!(sel.indices(), vec![0, 1, 2, 3]);
        assert_eq!(sel.total_tokens, 11);
        assert_eq!(sel.coverage("a"), Some(1.0));
    }

    #[test]
    fn single_field_full_coverage_takes_top_three() {
        let cs = chunks(&[4; 6]);
        let r = Rankings {
            per_field: vec![ranking("a", &[5, 1, 3, 0, 2, 4])],
            global: vec![0, 2, 4, 1, 3, 5],
        };
        let p = CoverageParams {
            coverage_fraction: 1.0,
            top_m: 3,
        };
        let sel = pack_context(&r, &cs, 12, &p);
        assert_eq!(sel.indices(), vec![1, 3, 5]);
        assert_eq!(sel.coverage("a"), Some(1.0));
    }

    #[test]
    fn round_robin_serves_both_fields_first() {
        let cs = chunks(&[5; 4]);
        let r = Rankings {
            per_field: vec![ranking("a", &[2, 0, 1, 3]), ranking("b", &[3, 0, 1, 2])],
            global: vec![0, 1, 2, 3],
        };
        let p = CoverageParams {
            coverage_fraction: 1.0,
            top_m: 1,
        };
        let sel = pack_context(&r, &cs, 10, &p);
        assert_eq!(sel.indices(), vec![2, 3]);
    }

    #[test]
    fn exact_search_repairs_greedy_miss() {
        // a: [x, y], b: [z, y]; one chunk fits; y alone serves both
        let cs = chunks(&[1, 1, 1]);
        let r = Rankings {
            per_field: vec![ranking("a", &[0, 1, 2]), ranking("b", &[2, 1, 0])],
            global: vec![0, 1, 2],
        };
        let p = CoverageParams {
            coverage_fraction: 0.5,
            top_m: 2,
        };
        let sel = pack_context(&r, &cs, 1, &p);
        assert_eq!(sel.indices(), vec![1]);
        assert!(sel.warning.is_none());
    }

    #[test]
    fn budget_below_smallest_chunk() {
        let cs = chunks(&[5, 6]);
        let r = Rankings {
            per_field: vec![ranking("a", &[0, 1])],
            global: vec![0, 1],
        };
        let sel = pack_context(&r, &cs, 4, &CoverageParams::default());
        assert!(sel.is_empty());
        assert!(sel.warning.is_some());
        let g = pack_greedy(&[0, 1], &r.per_field, &cs, 4, 5);
        assert!(g.is_empty() && g.warning.is_some());
    }

    #[test]
    fn required_counts() {
        assert_eq!(required_count(0.5, 5), 3);
        assert_eq!(required_count(1.0, 3), 3);
        assert_eq!(required_count(0.6, 5), 3);
        assert_eq!(required_count(0.2, 5), 1);
    }
}
