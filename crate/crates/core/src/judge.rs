//! LLM-as-judge grading and agreement rates between grader, agent and truth.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::eval::{truth_keys, value_keys, values_match, GroundTruth};
use crate::llm::client::{ChatMessage, ChatRequest, LlmClient, LlmError, LlmResponse, Role};
use crate::llm::parse::{coerce_value, last_json_object, strip_thinking};
use crate::llm::prompt::{build_prompt, PromptMode};
use crate::llm::schema::{field_value_schema, object_schema_for, ToolSchema};
use crate::llm::{Diagnostic, ExtractionResult, FieldValue};
use crate::select::SelectedContext;
use crate::template::{FieldSpec, Template};

pub const GRADE_TOOL_NAME: &str = "grade_extraction";

/// Heading under which the grading prompt lists the agent's values as JSON.
pub const AGENT_VALUES_HEADING: &str = "## Values proposed by the extraction agent";

pub const GRADER_SYSTEM_PROMPT: &str = "You are a senior reviewer checking metadata that another analyst extracted from document excerpts. Judge each value only against the excerpts.";

const GRADER_INSTRUCTIONS: &str = "For every field, give a score between 0 and 1 for how certain you are that the proposed value is correct, where 1 means certainly correct and 0 means certainly wrong. A null proposal is correct when the excerpts do not state the value. Also give a corrected_value: the value you believe is right, which may equal the proposal or be null.";

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("grader response has no grading payload")]
    Parse { raw: String },
    #[error(transparent)]
    Client(#[from] LlmError),
    #[error("sources do not cover the same (document, field) pairs: {0}")]
    CoverageMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrade {
    pub score: f64,
    pub agent_value: Option<FieldValue>,
    pub corrected_value: Option<FieldValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub doc_id: String,
    /// One entry per template field, in template order.
    pub fields: IndexMap<String, FieldGrade>,
    pub raw_trace: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

impl GradeReport {
    pub fn score(&self, key: &str) -> Option<f64> {
        self.fields.get(key).map(|g| g.score)
    }

    /// The agent result with the grader's corrections adopted.
    pub fn apply_corrections(&self, agent: &ExtractionResult) -> ExtractionResult {
        let mut out = agent.clone();
        for (k, g) in &self.fields {
            if let Some(slot) = out.values.get_mut(k) {
                *slot = g.corrected_value.clone();
            }
        }
        out
    }

    /// One JSON line per field.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for (k, g) in &self.fields {
            let rec = json!({
                "doc_id": self.doc_id,
                "field": k,
                "score": g.score,
                "agent_value": g.agent_value,
                "corrected_value": g.corrected_value,
            });
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }
}

pub fn grade_tool_schema(template: &Template) -> ToolSchema {
    let property = |f: &FieldSpec| {
        json!({
            "type": "object",
            "properties": {
                "score": {"type": "number", "minimum": 0, "maximum": 1},
                "corrected_value": field_value_schema(f),
            },
            "required": ["score", "corrected_value"],
        })
    };
    ToolSchema {
        name: GRADE_TOOL_NAME.to_owned(),
        description: "Record a confidence score and a corrected value for every extracted field.".to_owned(),
        parameters: object_schema_for(template, property),
    }
}

/// The grading request: the extraction prompt's excerpts and field list, the
/// agent's values, and the grading instructions.
pub fn grading_request(
    context: &SelectedContext,
    template: &Template,
    agent: &ExtractionResult,
    model: &str,
    tool_use: bool,
) -> ChatRequest {
    let extraction = build_prompt(context, template, PromptMode::Plain, None, tool_use).user_text;
    let shared = extraction.split("\n## Answer format").next().unwrap_or(&extraction);
    let mut user = format!("{shared}\n{AGENT_VALUES_HEADING}\n\n{}\n\n## Grading\n\n{GRADER_INSTRUCTIONS}\n", agent.values_json());
    if tool_use {
        user.push_str("Call the `grade_extraction` tool exactly once.\n");
    } else {
        user.push_str("Reply with one JSON object mapping each field key to {\"score\": ..., \"corrected_value\": ...}.\n");
    }
    let (tools, tool_choice) = if tool_use {
        (vec![grade_tool_schema(template).definition()], Some(GRADE_TOOL_NAME.to_owned()))
    } else {
        (Vec::new(), None)
    };
    ChatRequest {
        model: model.to_owned(),
        messages: vec![
            ChatMessage { role: Role::System, content: GRADER_SYSTEM_PROMPT.to_owned() },
            ChatMessage { role: Role::User, content: user },
        ],
        temperature: 0.0,
        tools,
        tool_choice,
    }
}

/// Agent values embedded in a grading prompt.
pub fn agent_values_in_prompt(user_text: &str) -> Option<Map<String, Value>> {
    let after = user_text.split_once(AGENT_VALUES_HEADING)?.1;
    let section = after.split("\n## ").next().unwrap_or(after);
    last_json_object(section)
}

pub fn parse_grade(
    response: &LlmResponse,
    doc_id: &str,
    template: &Template,
    agent: &ExtractionResult,
) -> Result<GradeReport, JudgeError> {
    let raw = response.raw();
    let (_, stripped) = strip_thinking(response.content.as_deref().unwrap_or(""));
    let payload = response
        .tool_calls
        .iter()
        .find(|c| c.name == GRADE_TOOL_NAME)
        .and_then(|c| c.arguments.as_object().cloned())
        .or_else(|| last_json_object(&stripped))
        .ok_or_else(|| JudgeError::Parse { raw: raw.clone() })?;

    let mut fields = IndexMap::new();
    let mut diagnostics = Vec::new();
    for f in &template.fields {
        let agent_value = agent.get(&f.key).cloned();
        let entry = payload.get(&f.key);
        let score = match entry.and_then(|e| e.get("score")).and_then(Value::as_f64) {
            Some(s) if (0.0..=1.0).contains(&s) => s,
            Some(s) if s.is_finite() => {
                let c = s.clamp(0.0, 1.0);
                diagnostics.push(Diagnostic::field(&f.key, format!("score {s} clamped to {c}")));
                c
            }
            _ => {
                diagnostics.push(Diagnostic::field(&f.key, "missing score; recorded as 0"));
                0.0
            }
        };
        let corrected_value = match entry.and_then(|e| e.get("corrected_value")) {
            Some(v) => coerce_value(f, v).unwrap_or_else(|msg| {
                diagnostics.push(Diagnostic::field(&f.key, format!("corrected value rejected: {msg}")));
                agent_value.clone()
            }),
            None => agent_value.clone(),
        };
        fields.insert(f.key.clone(), FieldGrade { score, agent_value, corrected_value });
    }
    Ok(GradeReport { doc_id: doc_id.to_owned(), fields, raw_trace: raw, diagnostics })
}

/// Asks the grader to score the agent's values over the same context the
/// agent saw. The agent result is only read.
pub fn grade<C: LlmClient + ?Sized>(
    client: &C,
    context: &SelectedContext,
    template: &Template,
    agent: &ExtractionResult,
    doc_id: &str,
    model: &str,
    tool_use: bool,
) -> Result<GradeReport, JudgeError> {
    let request = grading_request(context, template, agent, model, tool_use);
    let response = client.complete(&request)?;
    parse_grade(&response, doc_id, template, agent)
}

/// Normalized values of one (document, field) pair from the three sources.
#[derive(Debug, Clone, PartialEq)]
pub struct PairView<'a> {
    pub doc_id: &'a str,
    pub key: &'a str,
    pub is_list: bool,
    pub agent: Vec<String>,
    pub grader: Vec<String>,
    pub truth: Vec<String>,
}

impl PairView<'_> {
    pub fn agent_matches_truth(&self) -> bool {
        values_match(&self.agent, &self.truth, self.is_list)
    }
}

/// Default hard-case filter: pairs the agent got wrong.
pub fn agent_failures(p: &PairView<'_>) -> bool {
    !p.agent_matches_truth()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub pairs: usize,
    pub grader_vs_agent: f64,
    pub grader_vs_gt: f64,
    pub agent_vs_gt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRates {
    pub all: RateRow,
    /// `None` when the filter selects no pairs.
    pub hard: Option<RateRow>,
}

fn rate_row(pairs: &[&PairView<'_>]) -> Option<RateRow> {
    if pairs.is_empty() {
        return None;
    }
    let pct = |f: &dyn Fn(&PairView<'_>) -> bool| 100.0 * pairs.iter().filter(|p| f(p)).count() as f64 / pairs.len() as f64;
    Some(RateRow {
        pairs: pairs.len(),
        grader_vs_agent: pct(&|p| values_match(&p.grader, &p.agent, p.is_list)),
        grader_vs_gt: pct(&|p| values_match(&p.grader, &p.truth, p.is_list)),
        agent_vs_gt: pct(&|p| values_match(&p.agent, &p.truth, p.is_list)),
    })
}

/// Percent agreement between grader corrections, agent values and truth over
/// every (document, template field) pair, plus the same rates restricted to
/// the pairs `hard_case` selects.
pub fn match_rates(
    grades: &BTreeMap<String, GradeReport>,
    agents: &BTreeMap<String, ExtractionResult>,
    truth: &GroundTruth,
    template: &Template,
    hard_case: &dyn Fn(&PairView<'_>) -> bool,
) -> Result<MatchRates, JudgeError> {
    let g: BTreeSet<&String> = grades.keys().collect();
    let a: BTreeSet<&String> = agents.keys().collect();
    let t: BTreeSet<&String> = truth.docs.keys().collect();
    if g != a || g != t {
        return Err(JudgeError::CoverageMismatch(format!(
            "{} graded, {} extracted, {} labeled documents",
            g.len(),
            a.len(),
            t.len()
        )));
    }
    let mut views = Vec::new();
    for (doc, report) in grades {
        let agent = &agents[doc];
        for f in &template.fields {
            let (Some(grade), true) = (report.fields.get(&f.key), agent.values.contains_key(&f.key)) else {
                return Err(JudgeError::CoverageMismatch(format!("{doc}: field {} missing", f.key)));
            };
            views.push(PairView {
                doc_id: doc,
                key: &f.key,
                is_list: f.value_type.is_list(),
                agent: value_keys(agent.get(&f.key), f.value_type),
                grader: value_keys(grade.corrected_value.as_ref(), f.value_type),
                truth: truth_keys(truth.values(doc, &f.key), f.value_type),
            });
        }
    }
    let all: Vec<&PairView<'_>> = views.iter().collect();
    let hard: Vec<&PairView<'_>> = views.iter().filter(|p| hard_case(p)).collect();
    Ok(MatchRates {
        all: rate_row(&all).ok_or_else(|| JudgeError::CoverageMismatch("no pairs to compare".into()))?,
        hard: rate_row(&hard),
    })
}

/// Builds the grader reply a perfect judge would give: full marks where the
/// agent agrees with `answer`, zero and `answer` as the correction elsewhere.
pub fn reference_grade(template: &Template, agent: &Map<String, Value>, answer: &Map<String, Value>) -> Value {
    let mut out = Map::new();
    for f in &template.fields {
        let want = answer.get(&f.key).cloned().unwrap_or(Value::Null);
        let got = agent.get(&f.key).cloned().unwrap_or(Value::Null);
        let keys = |v: &Value| value_keys(coerce_value(f, v).ok().flatten().as_ref(), f.value_type);
        let score = if values_match(&keys(&want), &keys(&got), f.value_type.is_list()) { 1.0 } else { 0.0 };
        out.insert(f.key.clone(), json!({"score": score, "corrected_value": want}));
    }
    Value::Object(out)
}
