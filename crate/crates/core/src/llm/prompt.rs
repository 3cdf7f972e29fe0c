//! Extraction prompts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ExtractionResult;
use crate::select::SelectedContext;
use crate::template::{FieldSpec, Template, ValueType};

pub const EXTRACTION_SYSTEM_PROMPT: &str = "You are a meticulous contract analyst. You extract metadata values from document excerpts. Use only information stated in or directly derivable from the excerpts, and never invent values.";

const COT_INSTRUCTIONS: &str = "Reason step by step before answering. Write each reasoning step inside its own <thinking></thinking> block: locate the relevant clause, carry out any date or amount arithmetic explicitly, and resolve references between sections. After the last </thinking> block, give the final answer.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Plain,
    Cot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system_text: String,
    pub user_text: String,
    pub mode: PromptMode,
}

fn type_hint(f: &FieldSpec) -> String {
    let quoted = |xs: Vec<&str>| xs.iter().map(|o| format!("\"{o}\"")).collect::<Vec<_>>().join(", ");
    match f.value_type {
        ValueType::String => "text".into(),
        ValueType::Integer => "integer".into(),
        ValueType::Number => "number".into(),
        ValueType::Date => "date, YYYY-MM-DD".into(),
        ValueType::Enum => format!("one of {}", quoted(f.option_keys().collect())),
        ValueType::MultiSelect => format!("list, any of {}", quoted(f.option_keys().collect())),
        ValueType::Array => "list of text".into(),
    }
}

/// Header line that opens each excerpt block.
pub fn chunk_open_tag(index: usize) -> String {
    format!("<chunk index=\"{index}\">")
}

pub const CHUNK_CLOSE_TAG: &str = "</chunk>";

/// Builds the extraction prompt. Excerpts appear once each, in document
/// order; `prior` adds the already-extracted values for a retry.
pub fn build_prompt(
    context: &SelectedContext,
    template: &Template,
    mode: PromptMode,
    prior: Option<&ExtractionResult>,
    tool_use: bool,
) -> Prompt {
    let mut u = String::new();
    if let Some(doc) = context.chunks.first().map(|c| c.doc_id.as_str()) {
        let _ = writeln!(u, "Document: {doc}\n");
    }
    u.push_str("## Document excerpts\n\n");
    if context.chunks.is_empty() {
        u.push_str("(no excerpts were selected)\n\n");
    }
    let mut ordered: Vec<_> = context.chunks.iter().collect();
    ordered.sort_by_key(|c| c.index);
    for c in ordered {
        let _ = writeln!(u, "{}\n{}\n{}\n", chunk_open_tag(c.index), c.text.trim_end(), CHUNK_CLOSE_TAG);
    }

    u.push_str("## Fields to extract\n\n");
    for f in &template.fields {
        let _ = writeln!(u, "- \"{}\" ({}): {}", f.key, type_hint(f), f.prompt.trim());
    }

    if let Some(prior) = prior {
        u.push_str("\n## Previously extracted values\n\n");
        u.push_str("Keep these values unless the excerpts contradict them:\n");
        for (k, v) in prior.values.iter() {
            if let Some(v) = v {
                let _ = writeln!(u, "- \"{k}\": {}", v.to_json());
            }
        }
        let missing = prior.missing_keys();
        if !missing.is_empty() {
            u.push_str("These fields are still missing; look again and fill them if the excerpts allow:\n");
            for k in missing {
                let _ = writeln!(u, "- \"{k}\"");
            }
        }
    }

    u.push_str("\n## Answer format\n\n");
    if tool_use {
        u.push_str("Call the `extract_metadata` tool exactly once, with one argument per field key. ");
    } else {
        u.push_str("Reply with one JSON object whose keys are exactly the field keys above. ");
    }
    u.push_str("Use null for any field the excerpts do not state. Lists must be JSON arrays.\n");
    if mode == PromptMode::Cot {
        u.push('\n');
        u.push_str(COT_INSTRUCTIONS);
        u.push('\n');
    }

    Prompt {
        system_text: EXTRACTION_SYSTEM_PROMPT.to_owned(),
        user_text: u,
        mode,
    }
}

/// Texts of the excerpt blocks in a rendered prompt, keyed by chunk index.
pub fn excerpts(user_text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut rest = user_text;
    while let Some(start) = rest.find("<chunk index=\"") {
        let after = &rest[start + 14..];
        let Some(q) = after.find('"') else { break };
        let idx = after[..q].parse().unwrap_or(usize::MAX);
        let Some(body_start) = after.find(">\n") else { break };
        let body = &after[body_start + 2..];
        let Some(end) = body.find(CHUNK_CLOSE_TAG) else { break };
        out.push((idx, body[..end].trim_end_matches('\n').to_owned()));
        rest = &body[end..];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;
    use crate::llm::FieldValue;
    use crate::select::SelectedContext;

    fn ctx() -> SelectedContext {
        let mk = |i: usize, t: &str| Chunk {
            doc_id: "lease-7".into(),
            index: i,
            char_span: 0..t.len(),
            text: t.into(),
            token_count: 3,
        };
        SelectedContext {
            chunks: vec![mk(2, "Term begins February 2nd, 2024."), mk(5, "Acme Corp is the tenant.")],
            total_tokens: 6,
            budget_tokens: 10,
            per_field_coverage: vec![],
            warning: None,
        }
    }

    fn template() -> Template {
        Template::new(vec![
            FieldSpec::new("Parties", "Who signed?", ValueType::Array),
            FieldSpec::new("End Date", "When does the lease end?", ValueType::Date),
        ])
        .unwrap()
    }

    #[test]
    fn plain_mode_has_no_thinking_tags() {
        let p = build_prompt(&ctx(), &template(), PromptMode::Plain, None, false);
        assert_eq!(p.user_text.matches("<thinking>").count(), 0);
        assert!(p.user_text.contains("JSON object"));
    }

    #[test]
    fn cot_mode_requests_thinking_blocks() {
        let p = build_prompt(&ctx(), &template(), PromptMode::Cot, None, true);
        assert!(p.user_text.contains("<thinking></thinking>"));
        assert!(p.user_text.contains("extract_metadata"));
    }

    #[test]
    fn each_chunk_once_in_document_order() {
        let mut c = ctx();
        c.chunks.reverse();
        let p = build_prompt(&c, &template(), PromptMode::Plain, None, false);
        let ex = excerpts(&p.user_text);
        assert_eq!(ex.iter().map(|e| e.0).collect::<Vec<_>>(), vec![2, 5]);
        assert_eq!(ex[0].1, "Term begins February 2nd, 2024.");
        assert_eq!(p.user_text.matches("Acme Corp is the tenant.").count(), 1);
    }

    #[test]
    fn prior_values_listed_and_missing_named() {
        let mut prior = ExtractionResult::empty(&template());
        prior.values["Parties"] = Some(FieldValue::List(vec!["Acme".into()]));
        let p = build_prompt(&ctx(), &template(), PromptMode::Plain, Some(&prior), false);
        let section = &p.user_text[p.user_text.find("## Previously extracted values").unwrap()..];
        assert!(section.contains("- \"Parties\": [\"Acme\"]"));
        let missing = &section[section.find("still missing").unwrap()..];
        assert!(missing.contains("- \"End Date\""));
        assert!(!missing.contains("Parties"));
    }
}
