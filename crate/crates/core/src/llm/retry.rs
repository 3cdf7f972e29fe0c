//! Extraction with retries for fields the model left null.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{ChatMessage, ChatRequest, LlmClient, LlmError, Role};
use super::parse::parse_response;
use super::prompt::{build_prompt, PromptMode};
use super::schema::{build_tool_schema, EXTRACT_TOOL_NAME};
use super::ExtractionResult;
use crate::select::SelectedContext;
use crate::template::Template;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    pub model: String,
    pub mode: PromptMode,
    pub max_retries: u32,
    pub tool_use: bool,
    pub temperature: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            model: "default".to_owned(),
            mode: PromptMode::Plain,
            max_retries: 1,
            tool_use: true,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("every extraction attempt failed to parse ({} response(s))", raw_responses.len())]
    AllAttemptsFailed { raw_responses: Vec<String> },
    #[error(transparent)]
    Client(#[from] LlmError),
}

/// The chat request for one attempt.
pub fn extraction_request(
    context: &SelectedContext,
    template: &Template,
    opts: &ExtractOptions,
    prior: Option<&ExtractionResult>,
) -> ChatRequest {
    let prompt = build_prompt(context, template, opts.mode, prior, opts.tool_use);
    let (tools, tool_choice) = if opts.tool_use {
        (vec![build_tool_schema(template).definition()], Some(EXTRACT_TOOL_NAME.to_owned()))
    } else {
        (Vec::new(), None)
    };
    ChatRequest {
        model: opts.model.clone(),
        messages: vec![
            ChatMessage { role: Role::System, content: prompt.system_text },
            ChatMessage { role: Role::User, content: prompt.user_text },
        ],
        temperature: opts.temperature,
        tools,
        tool_choice,
    }
}

/// Folds a newer attempt into the running result. A newer non-null value
/// replaces the old one; a newer null never erases a value.
pub fn merge(current: &mut ExtractionResult, newer: ExtractionResult) {
    for (k, v) in newer.values {
        if let (Some(v), Some(slot)) = (v, current.values.get_mut(&k)) {
            *slot = Some(v);
        }
    }
    current.thinking_trace.extend(newer.thinking_trace);
    current.diagnostics.extend(newer.diagnostics);
}

/// Runs attempt 0 without prior values, then retries while any field is
/// null, up to `max_retries` more times, passing the merged result back as
/// the prior. Attempts that fail to parse are skipped over; the call errors
/// only when none parsed.
pub fn extract_with_retry<C: LlmClient + ?Sized>(
    client: &C,
    context: &SelectedContext,
    template: &Template,
    opts: &ExtractOptions,
    strategy_tag: &str,
) -> Result<ExtractionResult, ExtractError> {
    let mut current: Option<ExtractionResult> = None;
    let mut raw_failures = Vec::new();
    for attempt in 0..=opts.max_retries {
        let request = extraction_request(context, template, opts, current.as_ref());
        let response = client.complete(&request)?;
        match parse_response(&response, template) {
            Ok(parsed) => {
                let merged = match current.take() {
                    None => parsed,
                    Some(mut c) => {
                        merge(&mut c, parsed);
                        c
                    }
                };
                current = Some(ExtractionResult { attempt, ..merged });
            }
            Err(fail) => {
                log::debug!("attempt {attempt} produced no parsable payload");
                raw_failures.push(fail.raw);
                if let Some(c) = current.as_mut() {
                    c.attempt = attempt;
                }
            }
        }
        if current.as_ref().is_some_and(ExtractionResult::is_complete) {
            break;
        }
    }
    let mut result = current.ok_or(ExtractError::AllAttemptsFailed { raw_responses: raw_failures })?;
    result.strategy_tag = strategy_tag.to_owned();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;
    use crate::llm::mock::MockClient;
    use crate::llm::{FieldValue, LlmResponse};
    use crate::template::{FieldSpec, ValueType};
    use serde_json::json;

    fn ctx() -> SelectedContext {
        SelectedContext {
            chunks: vec![Chunk { doc_id: "d".into(), index: 0, char_span: 0..4, text: "text".into(), token_count: 1 }],
            total_tokens: 1,
            budget_tokens: 8,
            per_field_coverage: vec![],
            warning: None,
        }
    }

    fn ab() -> Template {
        Template::new(vec![FieldSpec::new("A", "a", ValueType::String), FieldSpec::new("B", "b", ValueType::String)]).unwrap()
    }

    fn opts(max_retries: u32) -> ExtractOptions {
        ExtractOptions { max_retries, tool_use: false, ..Default::default() }
    }

    #[test]
    fn complete_first_answer_means_one_call() {
        let m = MockClient::scripted(vec![LlmResponse::text(r#"{"A":"x","B":"y"}"#); 5]);
        let r = extract_with_retry(&m, &ctx(), &ab(), &opts(4), "s").unwrap();
        assert_eq!(m.calls(), 1);
        assert_eq!(r.attempt, 0);
        assert_eq!(r.strategy_tag, "s");
    }

    #[test]
    fn retry_fills_missing_field() {
        let m = MockClient::scripted(vec![LlmResponse::text(r#"{"A":"x","B":null}"#), LlmResponse::text(r#"{"A":"x","B":"y"}"#)]);
        let r = extract_with_retry(&m, &ctx(), &ab(), &opts(1), "s").unwrap();
        assert_eq!(r.values_json(), json!({"A": "x", "B": "y"}));
        assert_eq!(r.attempt, 1);
        assert_eq!(m.calls(), 2);
    }

    #[test]
    fn no_retries_returns_partial() {
        let m = MockClient::scripted(vec![LlmResponse::text(r#"{"A":"x","B":null}"#)]);
        let r = extract_with_retry(&m, &ctx(), &ab(), &opts(0), "s").unwrap();
        assert_eq!(r.attempt, 0);
        assert_eq!(r.get("B"), None);
    }

    /// Answers in script order with no memoization.
    struct Sequence(std::sync::Mutex<Vec<&'static str>>);

    impl LlmClient for Sequence {
        fn complete(&self, _: &ChatRequest) -> Result<LlmResponse, LlmError> {
            Ok(LlmResponse::text(self.0.lock().unwrap().remove(0)))
        }
    }

    #[test]
    fn newer_value_wins_and_null_never_erases() {
        let m = Sequence(std::sync::Mutex::new(vec![r#"{"A":"x","B":null}"#, r#"{"A":null,"B":null}"#, r#"{"A":"z","B":null}"#]));
        let r = extract_with_retry(&m, &ctx(), &ab(), &opts(2), "s").unwrap();
        assert_eq!(r.get("A"), Some(&FieldValue::Text("z".into())));
        assert_eq!(r.attempt, 2);
    }

    #[test]
    fn all_failures_carry_raw_text() {
        let m = MockClient::scripted(vec![LlmResponse::text("nope"), LlmResponse::text("still nope")]);
        match extract_with_retry(&m, &ctx(), &ab(), &opts(1), "s") {
            // The retry repeats the first request verbatim, so the mock replays its answer.
            Err(ExtractError::AllAttemptsFailed { raw_responses }) => assert_eq!(raw_responses, ["nope", "nope"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tool_use_request_forces_tool() {
        let req = extraction_request(&ctx(), &ab(), &ExtractOptions::default(), None);
        assert_eq!(req.tool_choice.as_deref(), Some(EXTRACT_TOOL_NAME));
        assert_eq!(req.tools[0].parameters["required"], json!(["A", "B"]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn coverage_never_decreases(script in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..5)) {
                let responses: Vec<LlmResponse> = script
                    .iter()
                    .enumerate()
                    .map(|(i, (a, b))| {
                        let v = |on: bool| if on { json!(format!("v{i}")) } else { json!(null) };
                        LlmResponse::text(json!({"A": v(*a), "B": v(*b)}).to_string())
                    })
                    .collect();
                let n = responses.len() as u32;
                let mut best = 0;
                for retries in 0..n {
                    let m = MockClient::scripted(responses.clone());
                    let r = extract_with_retry(&m, &ctx(), &ab(), &opts(retries), "s").unwrap();
                    prop_assert!(r.non_null_count() >= best);
                    best = r.non_null_count();
                }
            }
        }
    }
}
