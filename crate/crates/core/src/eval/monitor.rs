//! Aggregate run statistics safe to share outside the run: only field
//! counts, fractions and scores, never document text or extracted values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::judge::GradeReport;
use crate::llm::ExtractionResult;
use crate::template::{FieldSpec, Template};

pub const OTHER_BUCKET: &str = "OTHER";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringReport {
    /// (document, field) pairs considered.
    pub pairs: usize,
    /// Fraction of pairs with a non-null extraction.
    pub success_rate: f64,
    /// Fraction of pairs per entity-label bucket.
    pub field_type_distribution: BTreeMap<String, f64>,
    /// Success rate per bucket.
    pub success_by_type: BTreeMap<String, f64>,
    /// Mean judge score per bucket, for buckets with graded pairs.
    pub quality_by_type: BTreeMap<String, f64>,
}

/// A field's bucket: its first assigned entity label, or [`OTHER_BUCKET`].
pub fn bucket(field: &FieldSpec) -> String {
    field
        .ner_labels
        .first()
        .map_or_else(|| OTHER_BUCKET.to_owned(), |l| l.as_str().to_owned())
}

#[derive(Default)]
struct Tally {
    pairs: usize,
    filled: usize,
    score_sum: f64,
    scored: usize,
}

pub fn monitoring_report<'a>(
    template: &Template,
    results: impl IntoIterator<Item = &'a ExtractionResult>,
    grades: impl IntoIterator<Item = &'a GradeReport>,
) -> MonitoringReport {
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    for r in results {
        for f in &template.fields {
            let t = tallies.entry(bucket(f)).or_default();
            t.pairs += 1;
            t.filled += usize::from(r.get(&f.key).is_some());
        }
    }
    for g in grades {
        for f in &template.fields {
            if let Some(s) = g.score(&f.key) {
                let t = tallies.entry(bucket(f)).or_default();
                t.score_sum += s;
                t.scored += 1;
            }
        }
    }
    let pairs: usize = tallies.values().map(|t| t.pairs).sum();
    let filled: usize = tallies.values().map(|t| t.filled).sum();
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    MonitoringReport {
        pairs,
        success_rate: frac(filled, pairs),
        field_type_distribution: tallies
            .iter()
            .filter(|(_, t)| t.pairs > 0)
            .map(|(b, t)| (b.clone(), frac(t.pairs, pairs)))
            .collect(),
        success_by_type: tallies
            .iter()
            .filter(|(_, t)| t.pairs > 0)
            .map(|(b, t)| (b.clone(), frac(t.filled, t.pairs)))
            .collect(),
        quality_by_type: tallies
            .iter()
            .filter(|(_, t)| t.scored > 0)
            .map(|(b, t)| (b.clone(), t.score_sum / t.scored as f64))
            .collect(),
    }
}

impl MonitoringReport {
    /// One row per bucket: `bucket,share,success_rate,mean_score` (the score
    /// column is empty for ungraded buckets).
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bucket", "share", "success_rate", "mean_score"])?;
        for (b, share) in &self.field_type_distribution {
            w.write_record([
                b.clone(),
                format!("{share:.6}"),
                format!("{:.6}", self.success_by_type.get(b).copied().unwrap_or(0.0)),
                self.quality_by_type.get(b).map(|q| format!("{q:.6}")).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::FieldGrade;
    use crate::labels::EntityLabel;
    use crate::llm::FieldValue;
    use crate::template::ValueType;
    use indexmap::IndexMap;

    fn date_template(n: usize) -> Template {
        Template::new(
            (0..n)
                .map(|i| FieldSpec::new(format!("f{i}"), "?", ValueType::Date).with_labels([EntityLabel::Date]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_bucket_and_success_rate() {
        let t = date_template(10);
        let mut r = ExtractionResult::empty(&t);
        for i in 0..4 {
            r.values[i] = Some(FieldValue::Text("2024-01-01".into()));
        }
        let rep = monitoring_report(&t, [&r], []);
        assert_eq!(rep.field_type_distribution, BTreeMap::from([("DATE".to_owned(), 1.0)]));
        assert_eq!(rep.success_rate, 0.4);
        assert!(rep.quality_by_type.is_empty());
    }

    #[test]
    fn quality_is_mean_score() {
        let t = Template::new(vec![FieldSpec::new("a", "?", ValueType::String), FieldSpec::new("b", "?", ValueType::String)]).unwrap();
        let fields: IndexMap<String, FieldGrade> = [("a", 1.0), ("b", 0.0)]
            .into_iter()
            .map(|(k, s)| (k.to_owned(), FieldGrade { score: s, agent_value: None, corrected_value: None }))
            .collect();
        let g = GradeReport { doc_id: "d".into(), fields, raw_trace: "secret".into(), diagnostics: vec![] };
        let r = ExtractionResult::empty(&t);
        let rep = monitoring_report(&t, [&r], [&g]);
        assert_eq!(rep.quality_by_type[OTHER_BUCKET], 0.5);
        let csv = rep.to_csv().unwrap();
        assert_eq!(csv.lines().nth(1), Some("OTHER,1.000000,0.000000,0.500000"));
    }

    #[test]
    fn distribution_sums_to_one() {
        let t = Template::new(vec![
            FieldSpec::new("a", "?", ValueType::Date).with_labels([EntityLabel::Date]),
            FieldSpec::new("b", "?", ValueType::String).with_labels([EntityLabel::Org, EntityLabel::Person]),
            FieldSpec::new("c", "?", ValueType::String),
        ])
        .unwrap();
        let r = ExtractionResult::empty(&t);
        let rep = monitoring_report(&t, [&r, &r], []);
        let total: f64 = rep.field_type_distribution.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(rep.field_type_distribution.len(), 3);
    }
}
