//! JSON-schema tool definitions derived from a template.

use serde_json::{json, Map, Value};

use super::client::{canonical_json, ToolDefinition};
use crate::template::{FieldSpec, Template, ValueType};

pub const EXTRACT_TOOL_NAME: &str = "extract_metadata";

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

impl ToolSchema {
    pub fn canonical_json(&self) -> String {
        canonical_json(&json!({
            "name": self.name,
            "description": self.description,
            "parameters": self.parameters,
        }))
    }

    pub fn definition(&self) -> ToolDefinition {
        ToolDefinition {
            name: self.name.clone(),
            description: self.description.clone(),
            parameters: self.parameters.clone(),
        }
    }

    pub fn property_names(&self) -> Vec<String> {
        self.parameters["properties"]
            .as_object()
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }
}

/// Nullable JSON-schema for one field's value.
pub fn field_value_schema(field: &FieldSpec) -> Value {
    let options: Vec<Value> = field.option_keys().map(|o| json!(o)).collect();
    let mut s = match field.value_type {
        ValueType::String => json!({"type": ["string", "null"]}),
        ValueType::Integer => json!({"type": ["integer", "null"]}),
        ValueType::Number => json!({"type": ["number", "null"]}),
        ValueType::Date => json!({"type": ["string", "null"], "format": "date"}),
        ValueType::Enum => {
            let mut with_null = options.clone();
            with_null.push(Value::Null);
            json!({"type": ["string", "null"], "enum": with_null})
        }
        ValueType::MultiSelect => json!({
            "type": ["array", "null"],
            "items": {"type": "string", "enum": options},
            "uniqueItems": true,
        }),
        ValueType::Array => json!({"type": ["array", "null"], "items": {"type": "string"}}),
    };
    s["description"] = json!(field.prompt);
    s
}

fn object_schema<'a>(
    fields: impl Iterator<Item = &'a FieldSpec>,
    property: impl Fn(&FieldSpec) -> Value,
) -> Value {
    let mut sorted: Vec<&FieldSpec> = fields.collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let mut props = Map::new();
    for f in &sorted {
        props.insert(f.key.clone(), property(f));
    }
    let required: Vec<Value> = sorted.iter().map(|f| json!(f.key)).collect();
    json!({"type": "object", "properties": props, "required": required})
}

/// The extraction tool: one required, nullable property per template key.
/// Properties and the `required` list are in key order, so templates that
/// differ only in field order give identical schemas.
pub fn build_tool_schema(template: &Template) -> ToolSchema {
    ToolSchema {
        name: EXTRACT_TOOL_NAME.to_owned(),
        description: "Record the metadata values found in the document excerpts. Use null for any field the excerpts do not state.".to_owned(),
        parameters: object_schema(template.fields.iter(), field_value_schema),
    }
}

/// An object schema with one required property per template key.
pub fn object_schema_for(template: &Template, property: impl Fn(&FieldSpec) -> Value) -> Value {
    object_schema(template.fields.iter(), property)
}
