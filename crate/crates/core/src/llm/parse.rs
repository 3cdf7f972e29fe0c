//! Turning raw model output into a typed [`ExtractionResult`].
//!
//! A tool call wins over free text. Without one, `<thinking>` blocks are
//! lifted into the trace and the last complete top-level JSON object left in
//! the text is taken as the answer.

use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde_json::{Map, Value};
use thiserror::Error;

use super::client::LlmResponse;
use super::dates::canonical_date;
use super::schema::EXTRACT_TOOL_NAME;
use super::{Diagnostic, ExtractionResult, FieldValue};
use crate::template::{FieldSpec, Template, ValueType};

#[derive(Debug, Clone, Error, PartialEq)]
#[error("no JSON payload found in model output")]
pub struct ParseFailure {
    pub raw: String,
    pub thinking_trace: Vec<String>,
}

fn thinking_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?s)<thinking>(.*?)</thinking>").unwrap())
}

/// Splits out `<thinking>` segments (trimmed, in order) and returns the text
/// with them removed.
pub fn strip_thinking(text: &str) -> (Vec<String>, String) {
    let re = thinking_re();
    let trace = re
        .captures_iter(text)
        .map(|c| c[1].trim().to_owned())
        .collect();
    (trace, re.replace_all(text, " ").into_owned())
}

/// Last top-level JSON object in `text`. Objects nested inside another
/// complete object are not considered separately.
pub fn last_json_object(text: &str) -> Option<Map<String, Value>> {
    let mut found = None;
    let mut pos = 0;
    while let Some(off) = text[pos..].find('{') {
        let start = pos + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => {
                found = Some(m);
                pos = start + stream.byte_offset();
            }
            _ => pos = start + 1,
        }
    }
    found
}

fn as_clean_text(v: &Value) -> Option<String> {
    let s = match v {
        Value::String(s) => s.split_whitespace().collect::<Vec<_>>().join(" "),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        _ => return None,
    };
    Some(s)
}

fn numeric_text(s: &str) -> String {
    s.trim().replace([',', '_'], "").trim_start_matches('$').to_owned()
}

fn match_option<'a>(field: &'a FieldSpec, s: &str) -> Option<&'a str> {
    let s = s.trim();
    field
        .option_keys()
        .find(|k| *k == s)
        .or_else(|| field.option_keys().find(|k| k.eq_ignore_ascii_case(s)))
}

fn list_items(v: &Value) -> Option<Vec<&Value>> {
    match v {
        Value::Array(xs) => Some(xs.iter().collect()),
        Value::String(_) => Some(vec![v]),
        _ => None,
    }
}

/// Coerces one JSON value to the field's type. `Ok(None)` is a legitimate
/// null; `Err` carries the diagnostic for an invalid value.
pub fn coerce_value(field: &FieldSpec, v: &Value) -> Result<Option<FieldValue>, String> {
    if v.is_null() || v.as_str().is_some_and(|s| s.trim().is_empty()) {
        return Ok(None);
    }
    match field.value_type {
        ValueType::String => as_clean_text(v)
            .map(|s| Some(FieldValue::Text(s)))
            .ok_or_else(|| "expected text".to_owned()),
        ValueType::Integer => {
            let parsed = match v {
                Value::Number(n) => n
                    .as_i64()
                    .or_else(|| n.as_f64().filter(|x| x.fract() == 0.0 && x.abs() < 9.0e15).map(|x| x as i64)),
                Value::String(s) => numeric_text(s).parse::<i64>().ok(),
                _ => None,
            };
            parsed
                .map(|i| Some(FieldValue::Integer(i)))
                .ok_or_else(|| "expected an integer".to_owned())
        }
        ValueType::Number => {
            let parsed = match v {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => numeric_text(s).parse::<f64>().ok().filter(|x| x.is_finite()),
                _ => None,
            };
            parsed
                .map(|x| Some(FieldValue::Number(x)))
                .ok_or_else(|| "expected a number".to_owned())
        }
        ValueType::Date => v
            .as_str()
            .and_then(canonical_date)
            .map(|d| Some(FieldValue::Text(d)))
            .ok_or_else(|| "unparseable date".to_owned()),
        ValueType::Enum => {
            let s = as_clean_text(v).ok_or_else(|| "expected one option".to_owned())?;
            match_option(field, &s)
                .map(|k| Some(FieldValue::Text(k.to_owned())))
                .ok_or_else(|| "value not in options".to_owned())
        }
        ValueType::MultiSelect => {
            let items = list_items(v).ok_or_else(|| "expected a list of options".to_owned())?;
            let mut out: Vec<String> = Vec::new();
            for item in items {
                let s = as_clean_text(item).ok_or_else(|| "expected a list of options".to_owned())?;
                let key = match_option(field, &s).ok_or_else(|| "value not in options".to_owned())?;
                if !out.iter().any(|o| o == key) {
                    out.push(key.to_owned());
                }
            }
            Ok((!out.is_empty()).then_some(FieldValue::List(out)))
        }
        ValueType::Array => {
            let items = list_items(v).ok_or_else(|| "expected a list".to_owned())?;
            let mut out = Vec::new();
            for item in items {
                match item {
                    Value::Null => {}
                    other => {
                        let s = as_clean_text(other).ok_or_else(|| "expected a list of text".to_owned())?;
                        if !s.is_empty() {
                            out.push(s);
                        }
                    }
                }
            }
            Ok((!out.is_empty()).then_some(FieldValue::List(out)))
        }
    }
}

/// Maps a JSON object onto the template. Every template key appears in the
/// output; keys the template does not define are ignored.
pub fn coerce_object(template: &Template, obj: &Map<String, Value>) -> (IndexMap<String, Option<FieldValue>>, Vec<Diagnostic>) {
    let mut values = IndexMap::new();
    let mut diags = Vec::new();
    for f in &template.fields {
        let v = match obj.get(&f.key) {
            Some(v) => match coerce_value(f, v) {
                Ok(v) => v,
                Err(msg) => {
                    diags.push(Diagnostic::field(&f.key, msg));
                    None
                }
            },
            None => {
                diags.push(Diagnostic::field(&f.key, "missing from response"));
                None
            }
        };
        values.insert(f.key.clone(), v);
    }
    (values, diags)
}

pub fn parse_response(response: &LlmResponse, template: &Template) -> Result<ExtractionResult, ParseFailure> {
    let (trace, stripped) = strip_thinking(response.content.as_deref().unwrap_or(""));
    let call = response
        .tool_calls
        .iter()
        .find(|c| c.name == EXTRACT_TOOL_NAME)
        .or(response.tool_calls.first());
    let payload = match call.map(|c| &c.arguments) {
        Some(Value::Object(m)) => Some(m.clone()),
        Some(Value::String(s)) => last_json_object(s),
        _ => None,
    }
    .or_else(|| last_json_object(&stripped));
    let Some(obj) = payload else {
        return Err(ParseFailure {
            raw: response.raw(),
            thinking_trace: trace,
        });
    };
    let (values, diagnostics) = coerce_object(template, &obj);
    Ok(ExtractionResult {
        values,
        thinking_trace: trace,
        attempt: 0,
        strategy_tag: String::new(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn template() -> Template {
        Template::new(vec![
            FieldSpec::new("Parties", "Who signed?", ValueType::Array),
            FieldSpec::new("End Date", "When does it end?", ValueType::Date),
            FieldSpec::new("MFN", "Most favored nation?", ValueType::Enum).with_options(["Yes", "No"]),
        ])
        .unwrap()
    }

    const COT_TRACE: &str = "The document does not explicitly state an end date.\n\n<thinking>\n\nWe can deduce that the end date would be\n50 days after the effective date.\n\n</thinking>\n\n<thinking>\n\nCalculate the end date by adding 50 days to February 2nd, 2024.\n\nFebruary 2nd, 2024 + 50 days = March 24th, 2024\n\n</thinking>\n\n<thinking>\n\nWe can confidently extract \"End Date: March 24, 2024\".\n\n</thinking>\n\n{\"Parties\": null, \"End Date\": \"March 24, 2024\", \"MFN\": null}";

    #[test]
    fn cot_trace_with_json_payload() {
        let r = parse_response(&LlmResponse::text(COT_TRACE), &template()).unwrap();
        assert_eq!(r.get("End Date"), Some(&FieldValue::Text("2024-03-24".into())));
        assert_eq!(r.thinking_trace.len(), 3);
        assert!(r.thinking_trace[1].starts_with("Calculate the end date"));
        assert!(r.diagnostics.is_empty());
    }

    #[test]
    fn tool_call_pass_through() {
        let args = json!({"Parties": ["Acme Corp", "John Smith"], "End Date": "2024-03-24", "MFN": "No"});
        let r = parse_response(&LlmResponse::tool(EXTRACT_TOOL_NAME, args.clone()), &template()).unwrap();
        assert_eq!(r.values_json(), args);
        assert!(r.thinking_trace.is_empty());
        assert!(r.diagnostics.is_empty());
    }

    #[test]
    fn tool_call_beats_text() {
        let mut resp = LlmResponse::tool(EXTRACT_TOOL_NAME, json!({"MFN": "Yes"}));
        resp.content = Some(r#"{"MFN": "No"}"#.into());
        let r = parse_response(&resp, &template()).unwrap();
        assert_eq!(r.get("MFN"), Some(&FieldValue::Text("Yes".into())));
    }

    #[test]
    fn enum_outside_options_is_null_with_diagnostic() {
        let r = parse_response(&LlmResponse::text(r#"{"MFN": "Maybe"}"#), &template()).unwrap();
        assert_eq!(r.get("MFN"), None);
        assert!(r.diagnostics.iter().any(|d| d.field.as_deref() == Some("MFN") && d.message == "value not in options"));
    }

    #[test]
    fn last_object_wins_and_extra_keys_dropped() {
        let text = r#"Draft: {"MFN": "Yes"} final answer: {"MFN": "No", "Bogus": 1, "nested": {"MFN": "Yes"}} trailing {broken"#;
        let r = parse_response(&LlmResponse::text(text), &template()).unwrap();
        assert_eq!(r.get("MFN"), Some(&FieldValue::Text("No".into())));
        assert_eq!(r.values.keys().collect::<Vec<_>>(), ["Parties", "End Date", "MFN"]);
    }

    #[test]
    fn json_inside_thinking_is_ignored() {
        let text = "<thinking>{\"MFN\": \"Yes\"}</thinking> no answer";
        let err = parse_response(&LlmResponse::text(text), &template()).unwrap_err();
        assert_eq!(err.raw, text);
        assert_eq!(err.thinking_trace.len(), 1);
    }

    #[test]
    fn coercions() {
        let f = FieldSpec::new("n", "", ValueType::Integer);
        assert_eq!(coerce_value(&f, &json!("1,000")), Ok(Some(FieldValue::Integer(1000))));
        assert_eq!(coerce_value(&f, &json!(3.0)), Ok(Some(FieldValue::Integer(3))));
        assert!(coerce_value(&f, &json!("three")).is_err());
        let d = FieldSpec::new("d", "", ValueType::Date);
        assert_eq!(coerce_value(&d, &json!("soon")), Err("unparseable date".into()));
        assert_eq!(coerce_value(&d, &json!("")), Ok(None));
        let m = FieldSpec::new("m", "", ValueType::MultiSelect).with_options(["A", "B"]);
        assert_eq!(coerce_value(&m, &json!(["a", "A", "B"])), Ok(Some(FieldValue::List(vec!["A".into(), "B".into()]))));
        assert!(coerce_value(&m, &json!(["C"])).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn keys_always_match_template(text in ".{0,200}", keys in proptest::collection::vec("[A-Za-z ]{1,8}", 0..4)) {
                let mut obj = Map::new();
                for k in &keys {
                    obj.insert(k.clone(), json!("Yes"));
                }
                let body = format!("{text} {}", Value::Object(obj));
                let t = template();
                let r = parse_response(&LlmResponse::text(body), &t).unwrap();
                prop_assert_eq!(r.values.keys().map(String::as_str).collect::<Vec<_>>(), t.keys().collect::<Vec<_>>());
            }
        }
    }
}
