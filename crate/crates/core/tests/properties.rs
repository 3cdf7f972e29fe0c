//! Property tests for ranking, packing, reranking and grader agreement.

use std::collections::BTreeMap;

use metaforge_core::eval::GroundTruth;
use metaforge_core::judge::{agent_failures, match_rates, FieldGrade, GradeReport};
use metaforge_core::llm::{ExtractionResult, FieldValue};
use metaforge_core::reranker::{FeatureVector, RerankerModel};
use metaforge_core::select::{
    borda_rank, global_rank, pack_context, rank_descending, BordaWeights, CoverageParams, FieldRanking, Rankings, ScoreMatrix,
};
use metaforge_core::{Chunk, FieldSpec, Template, ValueType};
use proptest::collection::vec;
use proptest::prelude::*;

fn matrix(n: usize, fields: usize) -> impl Strategy<Value = ScoreMatrix> {
    let cell = (0u8..6).prop_map(f64::from);
    (
        vec(vec(cell.clone(), fields), n),
        vec(vec(cell.clone(), fields), n),
        vec(cell.clone(), n),
        vec(cell, n),
    )
        .prop_map(move |(pfc, pfn, tc, tn)| ScoreMatrix {
            field_keys: (0..fields).map(|f| format!("f{f}")).collect(),
            per_field_cos: pfc,
            per_field_ner: pfn,
            total_cos: tc,
            total_ner: tn,
            bm25: vec![vec![0.0; fields]; n],
        })
}

fn weights() -> impl Strategy<Value = BordaWeights> {
    vec(0u8..8, 4)
        .prop_filter("some weight positive", |w| w.iter().any(|&x| x > 0))
        .prop_map(|w| BordaWeights::new(w[0] as f64 / 4.0, w[1] as f64 / 4.0, w[2] as f64 / 4.0, w[3] as f64 / 4.0).unwrap())
}

fn rising(x: f64) -> f64 {
    x * x * x + 2.0 * x + 1.0
}

fn chunk(index: usize, tokens: usize) -> Chunk {
    Chunk { doc_id: "d".into(), index, char_span: 0..0, text: String::new(), token_count: tokens }
}

fn packing_case() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<usize>>, Vec<usize>, usize, usize, usize)> {
    (1usize..10, 1usize..4).prop_flat_map(|(n, fields)| {
        let perm = Just((0..n).collect::<Vec<usize>>()).prop_shuffle();
        (vec(1usize..50, n), vec(perm.clone(), fields), perm, 0usize..4, 1usize..6, 0usize..300)
    })
}

fn bag() -> impl Strategy<Value = Option<FieldValue>> {
    prop_oneof![
        Just(None),
        "[abc]".prop_map(|s| Some(FieldValue::Text(s))),
        vec("[abc]", 1..3).prop_map(|xs| Some(FieldValue::List(xs))),
    ]
}

fn rates_template() -> Template {
    Template::new(vec![
        FieldSpec::new("name", "Name.", ValueType::String),
        FieldSpec::new("items", "Items.", ValueType::Array),
    ])
    .unwrap()
}

/// Keeps only values the field's type can hold.
fn fit(v: Option<FieldValue>, list: bool) -> Option<FieldValue> {
    match (v, list) {
        (Some(FieldValue::List(xs)), false) => Some(FieldValue::Text(xs[0].clone())),
        (Some(FieldValue::Text(s)), true) => Some(FieldValue::List(vec![s])),
        (v, _) => v,
    }
}

fn column(rows: &[(Option<FieldValue>, Option<FieldValue>)]) -> BTreeMap<String, ExtractionResult> {
    rows.chunks(2)
        .enumerate()
        .map(|(d, pair)| {
            let values = [("name", &pair[0]), ("items", &pair[1])]
                .into_iter()
                .map(|(k, (v, _))| (k.to_owned(), fit(v.clone(), k == "items")))
                .collect();
            let r = ExtractionResult { values, thinking_trace: vec![], attempt: 0, strategy_tag: String::new(), diagnostics: vec![] };
            (format!("d{d}"), r)
        })
        .collect()
}

fn as_grades(col: &BTreeMap<String, ExtractionResult>) -> BTreeMap<String, GradeReport> {
    col.iter()
        .map(|(d, r)| {
            let fields = r
                .values
                .iter()
                .map(|(k, v)| (k.clone(), FieldGrade { score: 1.0, agent_value: None, corrected_value: v.clone() }))
                .collect();
            (d.clone(), GradeReport { doc_id: d.clone(), fields, raw_trace: String::new(), diagnostics: vec![] })
        })
        .collect()
}

proptest! {
    #[test]
    fn borda_ignores_increasing_transforms(
        (scores, w, family) in (1usize..8, 1usize..4).prop_flat_map(|(n, f)| (matrix(n, f), weights(), 0usize..4))
    ) {
        let mut moved = scores.clone();
        match family {
            0 => moved.per_field_cos.iter_mut().flatten().for_each(|x| *x = rising(*x)),
            1 => moved.per_field_ner.iter_mut().flatten().for_each(|x| *x = rising(*x)),
            2 => moved.total_cos.iter_mut().for_each(|x| *x = rising(*x)),
            _ => moved.total_ner.iter_mut().for_each(|x| *x = rising(*x)),
        }
        for f in 0..scores.num_fields() {
            prop_assert_eq!(borda_rank(&scores, &w, f), borda_rank(&moved, &w, f));
        }
        prop_assert_eq!(global_rank(&scores, &w), global_rank(&moved, &w));
    }

    #[test]
    fn packing_stays_in_budget_without_duplicates(
        (sizes, per_field, global, frac, top_m, budget) in packing_case()
    ) {
        let chunks: Vec<Chunk> = sizes.iter().enumerate().map(|(i, &s)| chunk(i, s)).collect();
        let rankings = Rankings {
            per_field: per_field.into_iter().enumerate().map(|(f, r)| FieldRanking { key: format!("f{f}"), ranking: r }).collect(),
            global,
        };
        let params = CoverageParams { coverage_fraction: (frac + 1) as f64 / 4.0, top_m };
        let ctx = pack_context(&rankings, &chunks, budget, &params);
        let idx = ctx.indices();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]), "not strictly in document order: {:?}", idx);
        prop_assert_eq!(ctx.total_tokens, idx.iter().map(|&i| sizes[i]).sum::<usize>());
        prop_assert!(ctx.total_tokens <= budget);
        prop_assert!(ctx.per_field_coverage.iter().all(|c| (0.0..=1.0).contains(&c.coverage)));
    }

    #[test]
    fn reranker_order_survives_output_rescaling(
        seed in 0u64..1000,
        scale in 0.1f64..10.0,
        rows in vec((vec(-2.0f64..2.0, 3), vec(-1.0f64..1.0, 4)), 2..12),
    ) {
        let model = RerankerModel::seeded(3, 4, 4, seed);
        let mut rescaled = model.clone();
        let last = rescaled.layers.last_mut().unwrap();
        last.weights.iter_mut().chain(last.bias.iter_mut()).for_each(|w| *w *= scale);
        let features: Vec<FeatureVector> = rows
            .into_iter()
            .map(|(s, e)| FeatureVector { scalars: s, field_embedding: e.clone(), chunk_embedding: e.iter().map(|x| -x).collect() })
            .collect();
        let predict = |m: &RerankerModel| features.iter().map(|f| m.predict(f).unwrap()).collect::<Vec<f64>>();
        let (a, b) = (predict(&model), predict(&rescaled));
        // reversing the inputs must not change any prediction
        let reversed: Vec<f64> = features.iter().rev().map(|f| model.predict(f).unwrap()).rev().collect();
        prop_assert_eq!(&a, &reversed);
        let distinct = a.windows(2).all(|w| (w[0] - w[1]).abs() > 1e-9);
        prop_assume!(distinct);
        prop_assert_eq!(rank_descending(&a), rank_descending(&b));
    }

    #[test]
    fn match_rates_symmetric_and_bounded(
        rows in (1usize..5).prop_flat_map(|docs| vec((bag(), bag()), docs * 2)),
        truth_rows in vec(vec("[abc]", 0..3), 8),
    ) {
        let template = rates_template();
        let agents = column(&rows);
        let swapped: Vec<_> = rows.iter().map(|(a, g)| (g.clone(), a.clone())).collect();
        let graders = column(&swapped);
        let mut truth = GroundTruth::default();
        for (d, _) in agents.iter().enumerate() {
            let fields = BTreeMap::from([
                ("name".to_owned(), truth_rows[2 * d].iter().take(1).cloned().collect()),
                ("items".to_owned(), truth_rows[2 * d + 1].clone()),
            ]);
            truth.docs.insert(format!("d{d}"), fields);
        }
        let ab = match_rates(&as_grades(&graders), &agents, &truth, &template, &agent_failures).unwrap().all;
        let ba = match_rates(&as_grades(&agents), &graders, &truth, &template, &agent_failures).unwrap().all;
        prop_assert_eq!(ab.grader_vs_agent, ba.grader_vs_agent);
        prop_assert_eq!(ab.grader_vs_gt, ba.agent_vs_gt);
        prop_assert_eq!(ab.agent_vs_gt, ba.grader_vs_gt);
        for r in [ab.grader_vs_agent, ab.grader_vs_gt, ab.agent_vs_gt] {
            prop_assert!((0.0..=100.0).contains(&r));
        }
        let same = match_rates(&as_grades(&agents), &agents, &truth, &template, &agent_failures).unwrap().all;
        prop_assert_eq!(same.grader_vs_agent, 100.0);
        prop_assert_eq!(same.grader_vs_gt, same.agent_vs_gt);
    }
}
