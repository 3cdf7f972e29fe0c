//! Scoring extractions against labeled values.
//!
//! A scalar field's truth list holds acceptable alternatives for a single
//! value. An array field's truth list is the expected multiset. Values are
//! compared after [`match_key`] normalization only; there is no fuzzy credit.

pub mod cuad;
pub mod monitor;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use num_rational::Ratio;
use num_traits::{CheckedAdd, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::dates::canonical_date;
use crate::llm::{ExtractionResult, FieldValue};
use crate::par::Execution;
use crate::template::{Template, ValueType};

pub use monitor::{monitoring_report, MonitoringReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot aggregate an empty list of field evaluations")]
    Empty,
    #[error("ground truth has an empty {0}")]
    EmptyName(&'static str),
    #[error("ground truth: {0}")]
    Json(#[from] serde_json::Error),
    #[error("ground truth: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TruthEntry {
    Many(Vec<String>),
    One(String),
    Null(()),
}

impl From<TruthEntry> for Vec<String> {
    fn from(e: TruthEntry) -> Self {
        match e {
            TruthEntry::Many(v) => v,
            TruthEntry::One(s) => vec![s],
            TruthEntry::Null(()) => Vec::new(),
        }
    }
}

/// `doc_id → field key → values`. A single string or null is accepted in
/// the file as shorthand for a one-element or empty list.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct GroundTruth {
    pub docs: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl<'de> Deserialize<'de> for GroundTruth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw: BTreeMap<String, BTreeMap<String, TruthEntry>> = BTreeMap::deserialize(d)?;
        Ok(Self {
            docs: raw
                .into_iter()
                .map(|(doc, fields)| (doc, fields.into_iter().map(|(k, v)| (k, v.into())).collect()))
                .collect(),
        })
    }
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (doc, fields) in &self.docs {
            if doc.is_empty() {
                return Err(EvalError::EmptyName("document id"));
            }
            if fields.keys().any(String::is_empty) {
                return Err(EvalError::EmptyName("field key"));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let t: Self = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Truth values for a pair; an unlabeled field means null is expected.
    pub fn values(&self, doc_id: &str, key: &str) -> &[String] {
        self.docs
            .get(doc_id)
            .and_then(|f| f.get(key))
            .map_or(&[], Vec::as_slice)
    }

    /// Per-document truth as JSON objects, with scalar fields collapsed to
    /// their first acceptable value.
    pub fn as_json_objects(&self, template: &Template) -> HashMap<String, serde_json::Map<String, serde_json::Value>> {
        self.docs
            .iter()
            .map(|(doc, fields)| {
                let obj = fields
                    .iter()
                    .map(|(k, vs)| {
                        let is_list = template.field(k).is_some_and(|f| f.value_type.is_list());
                        let v = if is_list {
                            serde_json::json!(vs)
                        } else {
                            vs.first().map_or(serde_json::Value::Null, |s| serde_json::json!(s))
                        };
                        (k.clone(), v)
                    })
                    .collect();
                (doc.clone(), obj)
            })
            .collect()
    }
}

fn fold(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Strips currency marks, thousands separators and inner spaces; `None`
/// when what is left is not a decimal number.
fn plain_decimal(text: &str) -> Option<String> {
    let s: String = text
        .trim()
        .chars()
        .filter(|c| !matches!(c, ',' | '_' | ' ' | '$' | '€' | '£'))
        .collect();
    let s = s.strip_prefix('+').unwrap_or(&s).to_owned();
    let body = s.strip_prefix('-').unwrap_or(&s);
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits = |p: &str| p.chars().all(|c| c.is_ascii_digit());
    (!body.is_empty() && digits(int) && digits(frac) && !(int.is_empty() && frac.is_empty())).then_some(s)
}

/// Canonical text of one value: case-folded, whitespace-collapsed and
/// trimmed. Whole-value dates become ISO-8601 and numeric fields lose
/// currency marks and thousands separators.
pub fn normalize_value(value: &str, value_type: ValueType) -> String {
    if matches!(value_type, ValueType::Integer | ValueType::Number) {
        if let Some(d) = plain_decimal(value) {
            return d;
        }
    }
    if let Some(iso) = canonical_date(value) {
        return iso;
    }
    fold(value)
}

/// Normalized value that also treats numerically equal decimals as equal
/// (`1000.00` and `1000`).
pub fn match_key(value: &str, value_type: ValueType) -> String {
    let n = normalize_value(value, value_type);
    match plain_decimal(&n) {
        Some(d) if matches!(value_type, ValueType::Integer | ValueType::Number) => {
            let (sign, body) = d.strip_prefix('-').map_or(("", d.as_str()), |b| ("-", b));
            let (int, frac) = body.split_once('.').unwrap_or((body, ""));
            let int = int.trim_start_matches('0');
            let frac = frac.trim_end_matches('0');
            let int = if int.is_empty() { "0" } else { int };
            let sign = if int == "0" && frac.is_empty() { "" } else { sign };
            if frac.is_empty() {
                format!("{sign}{int}")
            } else {
                format!("{sign}{int}.{frac}")
            }
        }
        _ => n,
    }
}

/// Match keys of an extracted value (empty for null).
pub fn value_keys(value: Option<&FieldValue>, value_type: ValueType) -> Vec<String> {
    value
        .map(|v| v.as_strings().iter().map(|s| match_key(s, value_type)).collect())
        .unwrap_or_default()
}

pub fn truth_keys(values: &[String], value_type: ValueType) -> Vec<String> {
    values.iter().map(|s| match_key(s, value_type)).collect()
}

/// Whether two normalized values agree: both empty, equal multisets for
/// list fields, a shared element for scalar fields. Symmetric.
pub fn values_match(a: &[String], b: &[String], is_list: bool) -> bool {
    if a.is_empty() || b.is_empty() {
        return a.is_empty() && b.is_empty();
    }
    if is_list {
        let mut x = a.to_vec();
        let mut y = b.to_vec();
        x.sort();
        y.sort();
        x == y
    } else {
        a.iter().any(|v| b.contains(v))
    }
}

/// Size of the multiset intersection.
fn multiset_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in b {
        *counts.entry(v.as_str()).or_default() += 1;
    }
    a.iter()
        .filter(|v| match counts.get_mut(v.as_str()) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Counts behind one pair's precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub correct: usize,
    pub extracted: usize,
    pub expected: usize,
}

impl MatchCounts {
    pub fn compute(extracted: &[String], truth: &[String], is_list: bool) -> Self {
        if is_list {
            Self {
                correct: multiset_overlap(extracted, truth),
                extracted: extracted.len(),
                expected: truth.len(),
            }
        } else {
            let expected = usize::from(!truth.is_empty());
            Self {
                correct: usize::from(extracted.iter().any(|v| truth.contains(v))).min(expected),
                extracted: extracted.len(),
                expected,
            }
        }
    }

    /// Exact F1; both-empty counts as a perfect score.
    pub fn f1_ratio(&self) -> Ratio<i128> {
        if self.extracted == 0 && self.expected == 0 {
            Ratio::from_integer(1)
        } else {
            Ratio::new(2 * self.correct as i128, (self.extracted + self.expected) as i128)
        }
    }

    pub fn precision(&self) -> f64 {
        match (self.extracted, self.expected) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (e, _) => self.correct as f64 / e as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match (self.extracted, self.expected) {
            (0, 0) => 1.0,
            (_, 0) => 0.0,
            (_, t) => self.correct as f64 / t as f64,
        }
    }

    pub fn f1(&self) -> f64 {
        self.f1_ratio().to_f64().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEval {
    pub doc_id: String,
    pub key: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
}

/// Precision, recall and F1 of one (document, field) pair.
pub fn field_f1(
    doc_id: &str,
    key: &str,
    extracted: Option<&FieldValue>,
    truth: &[String],
    value_type: ValueType,
) -> FieldEval {
    let counts = MatchCounts::compute(
        &value_keys(extracted, value_type),
        &truth_keys(truth, value_type),
        value_type.is_list(),
    );
    FieldEval {
        doc_id: doc_id.to_owned(),
        key: key.to_owned(),
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        counts,
    }
}

/// Unweighted mean F1 over all pairs, summed exactly and rounded once.
pub fn aggregate_f1(evals: &[FieldEval]) -> Result<f64, EvalError> {
    if evals.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut total = Ratio::<i128>::zero();
    for e in evals {
        match total.checked_add(&e.counts.f1_ratio()) {
            Some(t) => total = t,
            None => return Ok(evals.iter().map(|e| e.f1).sum::<f64>() / evals.len() as f64),
        }
    }
    Ok((total / Ratio::from_integer(evals.len() as i128)).to_f64().unwrap_or(f64::NAN))
}

/// Scores every (document, field) pair of the truth file. A document with no
/// extraction counts as all-null.
pub fn evaluate(
    results: &BTreeMap<String, ExtractionResult>,
    truth: &GroundTruth,
    template: &Template,
    exec: Execution,
) -> Vec<FieldEval> {
    let docs: Vec<&String> = truth.docs.keys().collect();
    exec.map(&docs, |doc| {
        template
            .fields
            .iter()
            .map(|f| {
                let extracted = results.get(*doc).and_then(|r| r.get(&f.key));
                field_f1(doc, &f.key, extracted, truth.values(doc, &f.key), f.value_type)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub documents: usize,
    pub mean_f1: f64,
    pub per_field_f1: BTreeMap<String, f64>,
}

pub fn summarize(evals: &[FieldEval]) -> Result<EvalSummary, EvalError> {
    let mut by_field: BTreeMap<String, Vec<FieldEval>> = BTreeMap::new();
    for e in evals {
        by_field.entry(e.key.clone()).or_default().push(e.clone());
    }
    let per_field_f1 = by_field
        .iter()
        .map(|(k, es)| Ok((k.clone(), aggregate_f1(es)?)))
        .collect::<Result<_, EvalError>>()?;
    let documents = evals.iter().map(|e| e.doc_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    Ok(EvalSummary {
        pairs: evals.len(),
        documents,
        mean_f1: aggregate_f1(evals)?,
        per_field_f1,
    })
}
