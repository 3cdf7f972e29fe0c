//! Hermetic clients: scripted mocks, on-disk replay and recording, and a
//! truth-backed mock that answers exactly what the prompt's excerpts support.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Map, Value};

use super::client::{canonical_json, ChatRequest, LlmClient, LlmError, LlmResponse};
use super::dates::{canonical_date, find_dates};
use super::prompt::excerpts;
use super::schema::EXTRACT_TOOL_NAME;
use crate::judge::{agent_values_in_prompt, reference_grade, GRADE_TOOL_NAME};
use crate::template::Template;

type Responder = dyn Fn(&ChatRequest) -> Result<LlmResponse, LlmError> + Send + Sync;

/// Responses keyed by request fingerprint. The first response produced for a
/// fingerprint is memoized, so equal requests always see equal responses.
pub struct MockClient {
    responder: Box<Responder>,
    memo: Mutex<HashMap<String, LlmResponse>>,
    calls: AtomicUsize,
}

impl MockClient {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<LlmResponse, LlmError> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(f),
            memo: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    /// The k-th distinct request receives the k-th scripted response.
    pub fn scripted(responses: Vec<LlmResponse>) -> Self {
        let next = AtomicUsize::new(0);
        let total = responses.len();
        Self::from_fn(move |_| {
            let k = next.fetch_add(1, Ordering::SeqCst);
            responses.get(k).cloned().ok_or(LlmError::ScriptExhausted(total))
        })
    }

    /// Number of `complete` calls, memo hits included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for MockClient {
    fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fp = request.fingerprint();
        let mut memo = self.memo.lock().expect("mock memo poisoned");
        if let Some(r) = memo.get(&fp) {
            return Ok(r.clone());
        }
        let r = (self.responder)(request)?;
        memo.insert(fp, r.clone());
        Ok(r)
    }

    fn tag(&self) -> String {
        "mock".to_owned()
    }
}

fn fixture_path(dir: &Path, request: &ChatRequest) -> PathBuf {
    dir.join(format!("{}.json", request.fingerprint()))
}

/// Serves responses from `<dir>/<fingerprint>.json` fixtures.
pub struct ReplayClient {
    dir: PathBuf,
}

impl ReplayClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl LlmClient for ReplayClient {
    fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let path = fixture_path(&self.dir, request);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(LlmError::MissingFixture {
                    fingerprint: request.fingerprint(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let v: Value = serde_json::from_str(&text).map_err(|e| LlmError::Decode(e.to_string()))?;
        LlmResponse::from_wire(v.get("response").unwrap_or(&v))
    }

    fn tag(&self) -> String {
        "replay".to_owned()
    }
}

/// Forwards to an inner client and writes each exchange as a replay fixture.
pub struct RecordingClient<C> {
    inner: C,
    dir: PathBuf,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { inner, dir })
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let resp = self.inner.complete(request)?;
        let body = json!({"request": request.to_wire(), "response": resp.to_wire()});
        fs::write(fixture_path(&self.dir, request), canonical_json(&body))?;
        Ok(resp)
    }

    fn tag(&self) -> String {
        self.inner.tag()
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Whether `value` is supported by `context`: a date present in any common
/// spelling, or the text itself modulo case and spacing.
fn grounded(value: &str, context: &str, context_dates: &[String]) -> bool {
    if let Some(iso) = canonical_date(value) {
        if context_dates.contains(&iso) {
            return true;
        }
    }
    let v = squash(value);
    !v.is_empty() && squash(context).contains(&v)
}

/// A model that is perfect given its context: for the document named in the
/// prompt it returns each true value whose evidence appears in the excerpts
/// and null otherwise. Fields outside its truth table come back null. As a
/// grader it scores the agent against that same grounded answer.
pub struct GroundedMock {
    truth: HashMap<String, Map<String, Value>>,
    template: Template,
}

impl GroundedMock {
    pub fn new(truth: HashMap<String, Map<String, Value>>, template: Template) -> Self {
        Self { truth, template }
    }

    fn answer(&self, request: &ChatRequest) -> (Map<String, Value>, usize) {
        let text = request.user_text();
        let doc = text
            .lines()
            .find_map(|l| l.strip_prefix("Document: "))
            .map(str::trim)
            .unwrap_or("");
        let context: String = excerpts(text).into_iter().map(|(_, t)| t).collect::<Vec<_>>().join("\n");
        let dates = find_dates(&context);
        let mut out = Map::new();
        let mut hits = 0;
        for (k, v) in self.truth.get(doc).into_iter().flatten() {
            let answer = match v {
                Value::String(s) if grounded(s, &context, &dates) => v.clone(),
                Value::Number(n) if grounded(&n.to_string(), &context, &dates) => v.clone(),
                Value::Array(xs) => {
                    let kept: Vec<Value> = xs
                        .iter()
                        .filter(|x| x.as_str().is_some_and(|s| grounded(s, &context, &dates)))
                        .cloned()
                        .collect();
                    if kept.is_empty() { Value::Null } else { Value::Array(kept) }
                }
                _ => Value::Null,
            };
            hits += usize::from(!answer.is_null());
            out.insert(k.clone(), answer);
        }
        (out, hits)
    }
}

impl LlmClient for GroundedMock {
    fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let (answer, hits) = self.answer(request);
        if let Some(agent) = agent_values_in_prompt(request.user_text()) {
            let grade = reference_grade(&self.template, &agent, &answer);
            return Ok(if request.tools.iter().any(|t| t.name == GRADE_TOOL_NAME) {
                LlmResponse::tool(GRADE_TOOL_NAME, grade)
            } else {
                LlmResponse::text(grade.to_string())
            });
        }
        let cot = request.user_text().contains("<thinking></thinking>");
        let preamble = if cot {
            format!(
                "<thinking>\nLocate the clauses that state each field.\n</thinking>\n<thinking>\n{hits} field(s) are supported by the excerpts.\n</thinking>\n"
            )
        } else {
            String::new()
        };
        if request.tools.iter().any(|t| t.name == EXTRACT_TOOL_NAME) {
            let mut r = LlmResponse::tool(EXTRACT_TOOL_NAME, Value::Object(answer));
            if cot {
                r.content = Some(preamble);
            }
            Ok(r)
        } else {
            Ok(LlmResponse::text(format!("{preamble}{}", Value::Object(answer))))
        }
    }

    fn tag(&self) -> String {
        "grounded-mock".to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::client::{ChatMessage, Role};

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage { role: Role::User, content: text.into() }],
            temperature: 0.0,
            tools: vec![],
            tool_choice: None,
        }
    }

    #[test]
    fn scripted_memoizes_by_fingerprint() {
        let m = MockClient::scripted(vec![LlmResponse::text("a"), LlmResponse::text("b")]);
        assert_eq!(m.complete(&req("x")).unwrap(), LlmResponse::text("a"));
        assert_eq!(m.complete(&req("x")).unwrap(), LlmResponse::text("a"));
        assert_eq!(m.complete(&req("y")).unwrap(), LlmResponse::text("b"));
        assert!(matches!(m.complete(&req("z")), Err(LlmError::ScriptExhausted(2))));
        assert_eq!(m.calls(), 4);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingClient::new(MockClient::from_fn(|r| Ok(LlmResponse::text(r.user_text().to_uppercase()))), dir.path()).unwrap();
        let r = rec.complete(&req("hello")).unwrap();
        let replay = ReplayClient::new(dir.path());
        assert_eq!(replay.complete(&req("hello")).unwrap(), r);
        assert!(matches!(replay.complete(&req("other")), Err(LlmError::MissingFixture { .. })));
    }

    #[test]
    fn grounded_mock_only_answers_from_excerpts() {
        let truth: Map<String, Value> = serde_json::from_value(json!({
            "End Date": "2024-03-24",
            "Parties": ["Acme Corp", "Globex LLC"],
            "Law": "Delaware"
        }))
        .unwrap();
        let template = Template::new(vec![
            crate::template::FieldSpec::new("End Date", "?", crate::template::ValueType::Date),
            crate::template::FieldSpec::new("Parties", "?", crate::template::ValueType::Array),
            crate::template::FieldSpec::new("Law", "?", crate::template::ValueType::String),
        ])
        .unwrap();
        let mock = GroundedMock::new(HashMap::from([("d1".to_owned(), truth)]), template);
        let text = "Document: d1\n\n<chunk index=\"0\">\nThis lease between ACME  Corp and the tenant ends March 24, 2024.\n</chunk>\n";
        let resp = mock.complete(&req(text)).unwrap();
        let v: Value = serde_json::from_str(resp.content.as_deref().unwrap()).unwrap();
        assert_eq!(v["End Date"], "2024-03-24");
        assert_eq!(v["Parties"], json!(["Acme Corp"]));
        assert_eq!(v["Law"], Value::Null);
    }
}
