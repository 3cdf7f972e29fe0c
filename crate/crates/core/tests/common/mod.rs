//! Seeded synthetic lease corpus shared by the integration tests.
//!
//! Every document is a shuffled sequence of blocks, each padded to exactly
//! one chunk, so a block never straddles a chunk boundary. Evidence blocks
//! state one field's value; decoy blocks are summaries that name every field
//! but carry no value; the rest is filler.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use metaforge_core::config::RunConfig;
use metaforge_core::eval::GroundTruth;
use metaforge_core::select::CoverageParams;
use metaforge_core::{count_tokens, ChunkingConfig, Document, DocumentFormat, EntityLabel, FieldSpec, Template, ValueType};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CHUNK_TOKENS: usize = 32;

pub fn lease_template() -> Template {
    Template::new(vec![
        FieldSpec::new("Effective Date", "The date on which the lease takes effect.", ValueType::Date)
            .with_labels([EntityLabel::Date]),
        FieldSpec::new("Landlord", "The company that owns the property and leases it out.", ValueType::String)
            .with_labels([EntityLabel::Org]),
        FieldSpec::new("Monthly Rent", "The rent payable every month under the lease.", ValueType::Number)
            .with_labels([EntityLabel::Money]),
        FieldSpec::new("Governing Law", "The state whose law governs the lease.", ValueType::String)
            .with_labels([EntityLabel::Gpe]),
    ])
    .unwrap()
}

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];
const OWNERS: [&str; 8] = [
    "Acme Holdings LLC",
    "Brightwater Partners Inc.",
    "Cedar Ridge Properties LLC",
    "Dunmore Realty Corp.",
    "Elmstead Capital LLC",
    "Foxglove Estates Inc.",
    "Granite Peak Ventures LLC",
    "Harbor Lane Trust Corp.",
];
const STATES: [&str; 8] = ["Oregon", "Texas", "Ohio", "Vermont", "Nevada", "Georgia", "Maine", "Colorado"];

const DECOYS: [&str; 4] = [
    "Summary of terms: effective date, landlord, monthly rent, governing law.",
    "Index: landlord; monthly rent; governing law; effective date.",
    "Terms: governing law, effective date, monthly rent, landlord.",
    "Defined terms: landlord, rent, date, law.",
];

const FILLER: [&str; 10] = [
    "Maintenance requests must be submitted in writing to the building office.",
    "Pets are permitted only with prior written consent.",
    "The occupant shall keep the premises clean and free of hazards.",
    "Smoking is prohibited in all common areas of the building.",
    "Parking spaces are allocated on a first come basis.",
    "Alterations to fixtures require approval from management.",
    "Keys must be returned when occupancy ends.",
    "Noise should be kept to a minimum after ten in the evening.",
    "Trash collection occurs twice weekly from the service alley.",
    "Insurance for personal belongings is the occupant's responsibility.",
];

/// Extends `sentence` with ` .` tokens to exactly `tokens` tokens.
pub fn pad_block(sentence: &str, tokens: usize) -> String {
    let n = count_tokens(sentence);
    assert!(n <= tokens, "block sentence too long: {sentence}");
    format!("{sentence}{}", " .".repeat(tokens - n))
}

pub struct Lease {
    pub docs: Vec<Document>,
    pub template: Template,
    pub truth: GroundTruth,
}

/// `n` leases. Every fifth document omits the governing-law clause, so that
/// field's truth is empty there. `plant` is inserted into one filler block of
/// every document.
pub fn lease_corpus(n: usize, seed: u64, plant: Option<&str>) -> Lease {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = lease_template();
    let mut docs = Vec::new();
    let mut truth = GroundTruth::default();
    for i in 0..n {
        let id = format!("lease-{i:03}");
        let date = format!("{} {}, {}", MONTHS.choose(&mut rng).unwrap(), rng.random_range(1..=28), rng.random_range(2015..=2024));
        let owner = *OWNERS.choose(&mut rng).unwrap();
        let rent = format!("${},{:03}", rng.random_range(1..=4), rng.random_range(0..1000) / 50 * 50);
        let state = *STATES.choose(&mut rng).unwrap();
        let has_law = i % 5 != 4;
        let mut sentences = vec![
            format!("The effective date of this lease is {date}."),
            format!("The landlord is {owner}, owner of the property."),
            format!("Monthly rent of {rent} is payable under the lease."),
        ];
        if has_law {
            sentences.push(format!("This lease is governed by the law of the state of {state}."));
        }
        sentences.extend(DECOYS.iter().map(|s| s.to_string()));
        let mut filler: Vec<String> = FILLER.choose_multiple(&mut rng, 8).map(|s| s.to_string()).collect();
        if let Some(p) = plant {
            filler[0] = format!("Reference {p} is kept on file.");
        }
        sentences.extend(filler);
        sentences.shuffle(&mut rng);
        let text = sentences
            .iter()
            .map(|s| pad_block(s, CHUNK_TOKENS))
            .collect::<Vec<_>>()
            .join("\n\n");
        docs.push(Document::new(id.clone(), &text, DocumentFormat::Plain, "synthetic").unwrap());
        let mut fields = BTreeMap::new();
        fields.insert("Effective Date".to_owned(), vec![date]);
        fields.insert("Landlord".to_owned(), vec![owner.to_owned()]);
        fields.insert("Monthly Rent".to_owned(), vec![rent]);
        fields.insert("Governing Law".to_owned(), if has_law { vec![state.to_owned()] } else { vec![] });
        truth.docs.insert(id, fields);
    }
    Lease { docs, template, truth }
}

/// Writes the corpus, template and truth under `dir` and returns a config
/// pointing at them: one block per chunk, a four-chunk budget with each
/// field guaranteed one of its top two chunks, the grounded mock client and
/// `dir/run` as output.
pub fn write_fixture(dir: &Path, lease: &Lease) -> RunConfig {
    let docs_dir = dir.join("docs");
    std::fs::create_dir_all(&docs_dir).unwrap();
    let mut manifest = Vec::new();
    for d in &lease.docs {
        let p = docs_dir.join(format!("{}.txt", d.id));
        std::fs::write(&p, &d.text).unwrap();
        manifest.push(serde_json::json!({"id": d.id, "path": format!("docs/{}.txt", d.id), "conversion_tag": "synthetic"}));
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    std::fs::write(dir.join("template.json"), lease.template.to_json()).unwrap();
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&lease.truth).unwrap()).unwrap();
    RunConfig {
        manifest: dir.join("manifest.json"),
        template: dir.join("template.json"),
        ground_truth: Some(dir.join("truth.json")),
        budget_tokens: 4 * CHUNK_TOKENS,
        chunking: ChunkingConfig::new(CHUNK_TOKENS, 0).unwrap(),
        coverage: CoverageParams { coverage_fraction: 0.5, top_m: 2 },
        out_dir: dir.join("run"),
        ..RunConfig::default()
    }
}
