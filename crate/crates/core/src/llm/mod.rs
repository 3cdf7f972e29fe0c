//! LLM-side of the pipeline: prompts, tool schemas, transports, response
//! parsing and the retry loop.

pub mod client;
pub mod dates;
pub mod http;
pub mod mock;
pub mod parse;
pub mod prompt;
pub mod retry;
pub mod schema;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::template::Template;

pub use client::{canonical_json, ChatMessage, ChatRequest, LlmClient, LlmError, LlmResponse, Role, ToolCall};
pub use parse::{parse_response, ParseFailure};
pub use prompt::{build_prompt, Prompt, PromptMode};
pub use retry::{extract_with_retry, ExtractError, ExtractOptions};
pub use schema::{build_tool_schema, ToolSchema, EXTRACT_TOOL_NAME};

/// A validated field value. Dates are stored as ISO-8601 text and choices as
/// their option key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Integer(i64),
    Number(f64),
    Text(String),
    List(Vec<String>),
}

impl FieldValue {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("field values serialize")
    }

    /// The value as a list of strings (one element for scalars).
    pub fn as_strings(&self) -> Vec<String> {
        match self {
            FieldValue::Integer(i) => vec![i.to_string()],
            FieldValue::Number(x) => vec![x.to_string()],
            FieldValue::Text(s) => vec![s.clone()],
            FieldValue::List(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn field(key: &str, message: impl Into<String>) -> Self {
        Self {
            field: Some(key.to_owned()),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    /// One entry per template field, in template order; `None` is null.
    pub values: IndexMap<String, Option<FieldValue>>,
    #[serde(default)]
    pub thinking_trace: Vec<String>,
    #[serde(default)]
    pub attempt: u32,
    #[serde(default)]
    pub strategy_tag: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

impl ExtractionResult {
    /// All fields null.
    pub fn empty(template: &Template) -> Self {
        Self {
            values: template.keys().map(|k| (k.to_owned(), None)).collect(),
            thinking_trace: Vec::new(),
            attempt: 0,
            strategy_tag: String::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&FieldValue> {
        self.values.get(key).and_then(Option::as_ref)
    }

    pub fn non_null_count(&self) -> usize {
        self.values.values().filter(|v| v.is_some()).count()
    }

    pub fn missing_keys(&self) -> Vec<&str> {
        self.values
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.values.values().all(Option::is_some)
    }

    /// Values as a JSON object, nulls included.
    pub fn values_json(&self) -> Value {
        Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), v.as_ref().map_or(Value::Null, FieldValue::to_json)))
                .collect(),
        )
    }
}
