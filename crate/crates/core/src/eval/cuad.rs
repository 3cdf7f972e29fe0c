//! Conversion from CUAD's clause-annotation release (SQuAD-style JSON) into
//! documents, a template and a ground-truth file.
//!
//! Each CUAD question id has the shape `<contract title>__<category>`. For the
//! categories below, every annotated answer span becomes a truth value: the
//! acceptable alternatives for scalar fields, the expected list for `Parties`.
//! Unanswered questions become empty truth lists.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::GroundTruth;
use crate::corpus::{Document, DocumentFormat};
use crate::labels::EntityLabel;
use crate::template::{FieldSpec, Template, ValueType};

/// `(category, value type, prompt, entity label)` for each converted category.
pub const CUAD_FIELDS: [(&str, ValueType, &str, EntityLabel); 8] = [
    ("Document Name", ValueType::String, "The name of the contract.", EntityLabel::WorkOfArt),
    ("Parties", ValueType::Array, "The two or more parties who signed the contract.", EntityLabel::Org),
    ("Agreement Date", ValueType::Date, "The date of the contract.", EntityLabel::Date),
    ("Effective Date", ValueType::Date, "The date when the contract is effective.", EntityLabel::Date),
    ("Expiration Date", ValueType::String, "On what date will the contract's initial term expire?", EntityLabel::Date),
    ("Renewal Term", ValueType::String, "What is the renewal term after the initial term expires?", EntityLabel::Date),
    ("Notice Period To Terminate Renewal", ValueType::String, "What is the notice period required to terminate renewal?", EntityLabel::Date),
    ("Governing Law", ValueType::String, "Which state or country's law governs the interpretation of the contract?", EntityLabel::Gpe),
];

#[derive(Debug, Deserialize)]
struct Release {
    data: Vec<Contract>,
}

#[derive(Debug, Deserialize)]
struct Contract {
    title: String,
    paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Question>,
}

#[derive(Debug, Deserialize)]
struct Question {
    id: String,
    #[serde(default)]
    answers: Vec<Answer>,
}

#[derive(Debug, Deserialize)]
struct Answer {
    text: String,
}

#[derive(Debug)]
pub struct CuadConversion {
    pub documents: Vec<Document>,
    pub template: Template,
    pub truth: GroundTruth,
}

pub fn cuad_template() -> Template {
    Template::new(
        CUAD_FIELDS
            .iter()
            .map(|(key, vt, prompt, label)| FieldSpec::new(*key, *prompt, *vt).with_labels([*label]))
            .collect(),
    )
    .expect("CUAD template is valid")
}

/// A filesystem-safe document id derived from a contract title.
pub fn document_id(title: &str) -> String {
    let id: String = title
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if id.is_empty() {
        "contract".to_owned()
    } else {
        id
    }
}

pub fn convert_cuad(json: &str) -> Result<CuadConversion, serde_json::Error> {
    let release: Release = serde_json::from_str(json)?;
    let mut documents = Vec::new();
    let mut truth = GroundTruth::default();
    for contract in release.data {
        let id = document_id(&contract.title);
        let text = contract.paragraphs.iter().map(|p| p.context.as_str()).collect::<Vec<_>>().join("\n\n");
        let mut fields: BTreeMap<String, Vec<String>> =
            CUAD_FIELDS.iter().map(|(k, ..)| ((*k).to_owned(), Vec::new())).collect();
        for q in contract.paragraphs.iter().flat_map(|p| &p.qas) {
            let Some((_, category)) = q.id.rsplit_once("__") else { continue };
            let Some(values) = fields.get_mut(category) else { continue };
            for a in &q.answers {
                let v = a.text.split_whitespace().collect::<Vec<_>>().join(" ");
                if !v.is_empty() && !values.contains(&v) {
                    values.push(v);
                }
            }
        }
        truth.docs.insert(id.clone(), fields);
        documents.push(Document::new(id, &text, DocumentFormat::Plain, "cuad").expect("document id is non-empty"));
    }
    Ok(CuadConversion {
        documents,
        template: cuad_template(),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{"version": "aok_v1.0", "data": [{"title": "ACME-Globex Supply Agreement", "paragraphs": [{
        "context": "SUPPLY AGREEMENT\nThis Supply Agreement is made on March 24, 2024 between Acme Corp and Globex LLC. It is governed by the laws of Delaware.",
        "qas": [
            {"id": "ACME-Globex Supply Agreement__Document Name", "question": "...", "answers": [{"text": "SUPPLY AGREEMENT", "answer_start": 0}], "is_impossible": false},
            {"id": "ACME-Globex Supply Agreement__Parties", "question": "...", "answers": [{"text": "Acme Corp", "answer_start": 80}, {"text": "Globex  LLC", "answer_start": 94}, {"text": "Acme Corp", "answer_start": 80}], "is_impossible": false},
            {"id": "ACME-Globex Supply Agreement__Agreement Date", "question": "...", "answers": [{"text": "March 24, 2024", "answer_start": 48}], "is_impossible": false},
            {"id": "ACME-Globex Supply Agreement__Governing Law", "question": "...", "answers": [{"text": "laws of Delaware", "answer_start": 120}], "is_impossible": false},
            {"id": "ACME-Globex Supply Agreement__Cap On Liability", "question": "...", "answers": [{"text": "ignored", "answer_start": 0}], "is_impossible": false},
            {"id": "ACME-Globex Supply Agreement__Effective Date", "question": "...", "answers": [], "is_impossible": true}
        ]}]}]}"#;

    #[test]
    fn converts_the_eight_categories() {
        let c = convert_cuad(SAMPLE).unwrap();
        assert_eq!(c.template.len(), 8);
        assert_eq!(c.documents.len(), 1);
        let id = &c.documents[0].id;
        assert_eq!(id, "ACME-Globex_Supply_Agreement");
        assert_eq!(c.truth.values(id, "Parties"), ["Acme Corp", "Globex LLC"]);
        assert_eq!(c.truth.values(id, "Agreement Date"), ["March 24, 2024"]);
        assert!(c.truth.values(id, "Effective Date").is_empty());
        assert!(c.truth.docs[id].get("Cap On Liability").is_none());
        assert_eq!(c.truth.docs[id].len(), 8);
    }
}
