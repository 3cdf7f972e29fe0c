//! Chat-completion request/response types and the client contract.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("LLM request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("LLM endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed LLM response: {0}")]
    Decode(String),
    #[error("no replay fixture for request {fingerprint}")]
    MissingFixture { fingerprint: String },
    #[error("mock script exhausted after {0} response(s)")]
    ScriptExhausted(usize),
    #[error("fixture I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDefinition {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<ToolDefinition>,
    /// Name of a tool the model must call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_choice: Option<String>,
}

impl ChatRequest {
    /// Request body in the common chat-completions wire format.
    pub fn to_wire(&self) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
        });
        if !self.tools.is_empty() {
            body["tools"] = Value::Array(
                self.tools
                    .iter()
                    .map(|t| {
                        json!({
                            "type": "function",
                            "function": {
                                "name": t.name,
                                "description": t.description,
                                "parameters": t.parameters,
                            }
                        })
                    })
                    .collect(),
            );
        }
        if let Some(name) = &self.tool_choice {
            body["tool_choice"] = json!({"type": "function", "function": {"name": name}});
        }
        body
    }

    /// SHA-256 (hex) of the canonical wire body.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(canonical_json(&self.to_wire()).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LlmResponse {
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
}

impl LlmResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: Some(content.into()),
            tool_calls: Vec::new(),
        }
    }

    pub fn tool(name: impl Into<String>, arguments: Value) -> Self {
        Self {
            content: None,
            tool_calls: vec![ToolCall {
                name: name.into(),
                arguments,
            }],
        }
    }

    /// Everything the model returned, for error reports.
    pub fn raw(&self) -> String {
        let mut out = self.content.clone().unwrap_or_default();
        for c in &self.tool_calls {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[tool_call {}] {}", c.name, c.arguments));
        }
        out
    }

    /// Decodes a chat-completions response body (first choice).
    pub fn from_wire(body: &Value) -> Result<Self, LlmError> {
        let msg = body
            .pointer("/choices/0/message")
            .ok_or_else(|| LlmError::Decode("missing choices[0].message".into()))?;
        let content = msg.get("content").and_then(Value::as_str).map(str::to_owned);
        let mut tool_calls = Vec::new();
        if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
            for c in calls {
                let f = c
                    .get("function")
                    .ok_or_else(|| LlmError::Decode("tool call without function".into()))?;
                let name = f
                    .get("name")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_owned();
                let arguments = match f.get("arguments") {
                    Some(Value::String(s)) => serde_json::from_str(s).unwrap_or(Value::String(s.clone())),
                    Some(v) => v.clone(),
                    None => Value::Null,
                };
                tool_calls.push(ToolCall { name, arguments });
            }
        }
        Ok(Self { content, tool_calls })
    }

    pub fn to_wire(&self) -> Value {
        let calls: Vec<Value> = self
            .tool_calls
            .iter()
            .enumerate()
            .map(|(i, c)| {
                json!({
                    "id": format!("call_{i}"),
                    "type": "function",
                    "function": {"name": c.name, "arguments": c.arguments.to_string()},
                })
            })
            .collect();
        let mut message = json!({"role": "assistant", "content": self.content});
        if !calls.is_empty() {
            message["tool_calls"] = Value::Array(calls);
        }
        json!({"choices": [{"index": 0, "message": message}]})
    }
}

/// Anything that turns a chat request into a response. Implementations are
/// shared across worker threads.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError>;

    /// Short tag naming the backing model, for reports.
    fn tag(&self) -> String {
        "llm".to_owned()
    }
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(request)
    }

    fn tag(&self) -> String {
        (**self).tag()
    }
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&m[k], out);
                }
                out.push('}');
            }
            Value::Array(xs) => {
                out.push('[');
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(x, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![
                ChatMessage { role: Role::System, content: "sys".into() },
                ChatMessage { role: Role::User, content: "hello".into() },
            ],
            temperature: 0.0,
            tools: vec![],
            tool_choice: None,
        }
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":{"y":[1,{"d":2,"c":3}],"x":null}}"#).unwrap();
        assert_eq!(canonical_json(&a), r#"{"a":{"x":null,"y":[1,{"c":3,"d":2}]},"b":1}"#);
    }

    #[test]
    fn fingerprint_stable_and_sensitive() {
        let r = req();
        assert_eq!(r.fingerprint(), req().fingerprint());
        assert_eq!(r.fingerprint().len(), 64);
        let mut other = req();
        other.messages[1].content = "hello!".into();
        assert_ne!(r.fingerprint(), other.fingerprint());
    }

    #[test]
    fn wire_round_trip_with_tool_call() {
        let resp = LlmResponse {
            content: Some("thinking".into()),
            tool_calls: vec![ToolCall { name: "extract_metadata".into(), arguments: json!({"a": 1}) }],
        };
        assert_eq!(LlmResponse::from_wire(&resp.to_wire()).unwrap(), resp);
        assert!(LlmResponse::from_wire(&json!({})).is_err());
    }

    #[test]
    fn request_wire_has_tools_and_choice() {
        let mut r = req();
        r.tools.push(ToolDefinition { name: "t".into(), description: "d".into(), parameters: json!({"type": "object"}) });
        r.tool_choice = Some("t".into());
        let w = r.to_wire();
        assert_eq!(w["tools"][0]["function"]["name"], "t");
        assert_eq!(w["tool_choice"]["function"]["name"], "t");
        assert_eq!(w["messages"][0]["role"], "system");
    }
}
