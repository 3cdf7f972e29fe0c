//! Extraction templates: typed fields, options, and entity-label assignment.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, EmbedError, Embedder};
use crate::labels::{EntityLabel, LabelDefinition};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("malformed template JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("template must contain at least one field")]
    Empty,
    #[error("field `{key}`: {reason}")]
    Field { key: String, reason: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl TemplateError {
    fn field(key: &str, reason: impl Into<String>) -> Self {
        Self::Field {
            key: key.to_owned(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ValueType {
    #[default]
    #[serde(rename = "string")]
    String,
    #[serde(rename = "integer")]
    Integer,
    #[serde(rename = "number")]
    Number,
    #[serde(rename = "date")]
    Date,
    #[serde(rename = "enum")]
    Enum,
    #[serde(rename = "multiSelect")]
    MultiSelect,
    #[serde(rename = "array")]
    Array,
}

impl ValueType {
    pub fn has_options(self) -> bool {
        matches!(self, ValueType::Enum | ValueType::MultiSelect)
    }

    /// Types whose values are lists.
    pub fn is_list(self) -> bool {
        matches!(self, ValueType::MultiSelect | ValueType::Array)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Integer => "integer",
            ValueType::Number => "number",
            ValueType::Date => "date",
            ValueType::Enum => "enum",
            ValueType::MultiSelect => "multiSelect",
            ValueType::Array => "array",
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionKey {
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub key: String,
    pub prompt: String,
    #[serde(rename = "type", default)]
    pub value_type: ValueType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<OptionKey>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ner_labels: Vec<EntityLabel>,
}

impl FieldSpec {
    pub fn new(key: impl Into<String>, prompt: impl Into<String>, value_type: ValueType) -> Self {
        Self {
            key: key.into(),
            prompt: prompt.into(),
            value_type,
            options: Vec::new(),
            ner_labels: Vec::new(),
        }
    }

    pub fn with_options<I, S>(mut self, options: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.options = options.into_iter().map(|k| OptionKey { key: k.into() }).collect();
        self
    }

    pub fn with_labels(mut self, labels: impl IntoIterator<Item = EntityLabel>) -> Self {
        self.ner_labels = labels.into_iter().collect();
        self
    }

    pub fn option_keys(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.key.as_str())
    }

    /// The `key: prompt` text used for embedding a field.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.key, self.prompt)
    }

    fn validate(&self) -> Result<(), TemplateError> {
        if self.key.trim().is_empty() {
            return Err(TemplateError::field(&self.key, "key must not be empty"));
        }
        if self.value_type.has_options() {
            if self.options.len() < 2 {
                return Err(TemplateError::field(
                    &self.key,
                    format!("{} field needs at least 2 options", self.value_type),
                ));
            }
            let mut seen = HashSet::new();
            for o in &self.options {
                if o.key.is_empty() {
                    return Err(TemplateError::field(&self.key, "option key must not be empty"));
                }
                if !seen.insert(o.key.as_str()) {
                    return Err(TemplateError::field(
                        &self.key,
                        format!("duplicate option `{}`", o.key),
                    ));
                }
            }
        } else if !self.options.is_empty() {
            return Err(TemplateError::field(
                &self.key,
                format!("{} field must not declare options", self.value_type),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Template {
    pub fields: Vec<FieldSpec>,
}

#[derive(Deserialize)]
struct RawTemplate {
    fields: Vec<FieldSpec>,
}

impl Template {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, TemplateError> {
        if fields.is_empty() {
            return Err(TemplateError::Empty);
        }
        let mut keys = HashSet::new();
        for f in &fields {
            f.validate()?;
            if !keys.insert(f.key.as_str()) {
                return Err(TemplateError::field(&f.key, "duplicate field key"));
            }
        }
        Ok(Self { fields })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, TemplateError> {
        let raw: RawTemplate = serde_json::from_slice(bytes)?;
        Self::new(raw.fields)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    pub fn field(&self, key: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.key == key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.key.as_str())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// All fields' `key: prompt` strings joined in template order.
    pub fn aggregate_text(&self) -> String {
        self.fields
            .iter()
            .map(FieldSpec::embedding_text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Union of all fields' labels, in scheme order.
    pub fn all_labels(&self) -> Vec<EntityLabel> {
        let set: HashSet<EntityLabel> = self
            .fields
            .iter()
            .flat_map(|f| f.ner_labels.iter().copied())
            .collect();
        EntityLabel::ALL.into_iter().filter(|l| set.contains(l)).collect()
    }

    /// Fills `ner_labels` for every field that has none; explicit labels are kept.
    pub fn assign_missing_labels(
        &mut self,
        defs: &[LabelDefinition],
        embedder: &dyn Embedder,
        params: &LabelAssignment,
    ) -> Result<(), TemplateError> {
        let def_vecs = defs
            .iter()
            .map(|d| Ok((d.label, embedder.embed(&d.definition)?)))
            .collect::<Result<Vec<_>, EmbedError>>()?;
        for field in &mut self.fields {
            if field.ner_labels.is_empty() {
                field.ner_labels = rank_labels(field, &def_vecs, embedder, params)?
                    .into_iter()
                    .map(|(l, _)| l)
                    .collect();
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub threshold: f64,
    pub top_k: usize,
}

impl Default for LabelAssignment {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            top_k: 2,
        }
    }
}

/// Labels whose definition is at least `threshold`-similar to the field text,
/// best first (ties by label name), at most `top_k`. Fields that already carry
/// labels get them back unchanged.
pub fn assign_field_labels(
    field: &FieldSpec,
    defs: &[LabelDefinition],
    embedder: &dyn Embedder,
    params: &LabelAssignment,
) -> Result<Vec<EntityLabel>, TemplateError> {
    if !field.ner_labels.is_empty() {
        return Ok(field.ner_labels.clone());
    }
    let def_vecs = defs
        .iter()
        .map(|d| Ok((d.label, embedder.embed(&d.definition)?)))
        .collect::<Result<Vec<_>, EmbedError>>()?;
    Ok(rank_labels(field, &def_vecs, embedder, params)?
        .into_iter()
        .map(|(l, _)| l)
        .collect())
}

/// Scored label candidates passing the threshold, truncated to `top_k`.
pub fn rank_labels(
    field: &FieldSpec,
    def_vecs: &[(EntityLabel, crate::embed::EmbeddingVector)],
    embedder: &dyn Embedder,
    params: &LabelAssignment,
) -> Result<Vec<(EntityLabel, f64)>, TemplateError> {
    let fv = embedder.embed(&field.embedding_text())?;
    let mut scored = def_vecs
        .iter()
        .map(|(l, v)| Ok((*l, cosine(&fv, v)?)))
        .collect::<Result<Vec<_>, EmbedError>>()?;
    scored.retain(|(_, s)| *s >= params.threshold);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.as_str().cmp(b.0.as_str())));
    scored.truncate(params.top_k);
    Ok(scored)
}
