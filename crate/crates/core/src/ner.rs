//! Deterministic rule-based named-entity recognition over the 18-label scheme.
//!
//! Candidates come from three sources: regular-expression patterns (numeric,
//! temporal and monetary entities plus a few suffix and title heuristics), a
//! token-level gazetteer, and a given-name heuristic (a known first name
//! followed by one or two TitleCase words is a PERSON). Overlapping candidates
//! are resolved longest first, then leftmost, then by source priority.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{token_spans, Chunk};
use crate::labels::EntityLabel;

const BUILTIN_GAZETTEER: &str = include_str!("../data/gazetteer.tsv");
const BUILTIN_GIVEN_NAMES: &str = include_str!("../data/given_names.txt");

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("line {line}: expected `LABEL<TAB>phrase`")]
    Syntax { line: usize },
    #[error("line {line}: {source}")]
    Label {
        line: usize,
        #[source]
        source: crate::labels::UnknownLabel,
    },
    #[error("failed to read gazetteer: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub label: EntityLabel,
    pub char_span: Range<usize>,
    pub surface: String,
}

/// Phrase lists keyed by their first token.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    by_first: HashMap<String, Vec<(Vec<String>, EntityLabel)>>,
    len: usize,
}

impl Gazetteer {
    pub fn parse(source: &str) -> Result<Self, GazetteerError> {
        let mut g = Gazetteer::default();
        for (i, line) in source.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, phrase) = line
                .split_once('\t')
                .ok_or(GazetteerError::Syntax { line: i + 1 })?;
            let label = label
                .parse::<EntityLabel>()
                .map_err(|source| GazetteerError::Label { line: i + 1, source })?;
            g.insert(label, phrase.trim());
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self, GazetteerError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_GAZETTEER).expect("built-in gazetteer is well formed")
    }

    pub fn insert(&mut self, label: EntityLabel, phrase: &str) {
        let toks: Vec<String> = token_spans(phrase)
            .into_iter()
            .map(|r| phrase[r].to_owned())
            .collect();
        if let Some(first) = toks.first().cloned() {
            self.by_first.entry(first).or_default().push((toks, label));
            self.len += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

struct Pattern {
    label: EntityLabel,
    re: Regex,
}

const MONTH: &str = r"(?:Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?)";
const NUM: &str = r"(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?";
const SMALL_NUMBER_WORDS: &str = r"(?:one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|fifteen|twenty|thirty|forty|forty-five|fifty|sixty|ninety)";

fn builtin_patterns() -> Vec<Pattern> {
    let p = |label, src: String| Pattern {
        label,
        re: Regex::new(&src).expect("built-in pattern compiles"),
    };
    vec![
        // DATE
        p(EntityLabel::Date, format!(r"\b{MONTH}\.?\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+\d{{4}}\b")),
        p(EntityLabel::Date, format!(r"\b\d{{1,2}}(?:st|nd|rd|th)?\s+(?:day\s+of\s+)?{MONTH},?\s+\d{{4}}\b")),
        p(EntityLabel::Date, format!(r"\b{MONTH}\s+\d{{4}}\b")),
        p(EntityLabel::Date, r"\b\d{4}-\d{2}-\d{2}\b".into()),
        p(EntityLabel::Date, r"\b\d{1,2}/\d{1,2}/\d{2,4}\b".into()),
        p(
            EntityLabel::Date,
            format!(r"(?i)\b(?:\d+|{SMALL_NUMBER_WORDS})(?:\s+\(\d+\))?\s+(?:calendar\s+|business\s+)?(?:days?|weeks?|months?|years?)\b"),
        ),
        p(EntityLabel::Date, r"\b(?:19|20)\d{2}\b".into()),
        // TIME
        p(EntityLabel::Time, r"(?i)\b\d{1,2}:\d{2}(?:\s*[ap]\.?m\.?)?".into()),
        p(EntityLabel::Time, r"(?i)\b\d{1,2}\s*[ap]\.m\.".into()),
        p(EntityLabel::Time, r"\b(?:noon|midnight)\b".into()),
        // PERCENT
        p(EntityLabel::Percent, format!(r"\b{NUM}\s*(?:%|percent\b|per\s+cent\b)")),
        // MONEY
        p(EntityLabel::Money, format!(r"[$€£]\s?{NUM}(?:\s?(?:million|billion|thousand)\b)?")),
        p(EntityLabel::Money, format!(r"\b(?:USD|EUR|GBP|US\$)\s?{NUM}")),
        p(EntityLabel::Money, format!(r"\b{NUM}\s+(?:dollars|euros|pounds\s+sterling|USD)\b")),
        // QUANTITY
        p(
            EntityLabel::Quantity,
            format!(r"\b{NUM}\s+(?:square\s+feet|square\s+foot|sq\.?\s*ft\.?|rentable\s+square\s+feet|feet|foot|miles?|kilometers?|km|meters?|acres?|pounds|lbs?|kilograms?|kg|tons?|gallons?|liters?)\b"),
        ),
        // LAW
        p(
            EntityLabel::Law,
            r"\b(?:[A-Z][A-Za-z\-]*\s+){1,6}(?:Act|Code|Regulations?|Statutes?)\b(?:\s+of\s+\d{4})?".into(),
        ),
        p(EntityLabel::Law, r"\b(?:Section|Article)\s+\d+(?:\.\d+)*\b".into()),
        // ORG
        p(
            EntityLabel::Org,
            r"\b[A-Z][A-Za-z0-9&'\-]*(?:[ \t]+(?:[A-Z][A-Za-z0-9&'\-]*|&|of|and))*[ \t]+(?:Corp\.?|Corporation|Inc\.?|Incorporated|LLC|L\.L\.C\.|Ltd\.?|Limited|LLP|L\.P\.|LP|Co\.|Company|PLC|GmbH|AG|N\.A\.|Holdings|Group|Bank|Trust|Partners)(?:\b|$)".into(),
        ),
        // PERSON by honorific
        p(EntityLabel::Person, r"\b(?:Mr|Mrs|Ms|Dr|Prof)\.?\s+[A-Z][a-z]+(?:\s+[A-Z][a-z]+)?".into()),
        // ORDINAL
        p(
            EntityLabel::Ordinal,
            r"(?i)\b(?:first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth|\d+(?:st|nd|rd|th))\b".into(),
        ),
        // CARDINAL
        p(EntityLabel::Cardinal, format!(r"\b{NUM}\b")),
        p(EntityLabel::Cardinal, format!(r"(?i)\b{SMALL_NUMBER_WORDS}\b")),
    ]
}

struct Candidate {
    span: Range<usize>,
    label: EntityLabel,
    priority: usize,
}

pub struct Recognizer {
    patterns: Vec<Pattern>,
    gazetteer: Gazetteer,
    given_names: HashSet<String>,
}

impl Default for Recognizer {
    fn default() -> Self {
        Self::with_gazetteer(Gazetteer::builtin())
    }
}

impl Recognizer {
    pub fn with_gazetteer(gazetteer: Gazetteer) -> Self {
        Self {
            patterns: builtin_patterns(),
            gazetteer,
            given_names: BUILTIN_GIVEN_NAMES
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
        }
    }

    /// Process-wide recognizer with the built-in data.
    pub fn shared() -> &'static Recognizer {
        static SHARED: OnceLock<Recognizer> = OnceLock::new();
        SHARED.get_or_init(Recognizer::default)
    }

    pub fn recognize(&self, text: &str) -> Vec<EntitySpan> {
        let mut cands = Vec::new();
        for (i, p) in self.patterns.iter().enumerate() {
            for m in p.re.find_iter(text) {
                let s = m.as_str();
                let trimmed = s.trim_end();
                if trimmed.is_empty() {
                    continue;
                }
                cands.push(Candidate {
                    span: m.start()..m.start() + trimmed.len(),
                    label: p.label,
                    priority: i,
                });
            }
        }
        let base = self.patterns.len();
        let toks = token_spans(text);
        for (ti, t) in toks.iter().enumerate() {
            let word = &text[t.clone()];
            if let Some(phrases) = self.gazetteer.by_first.get(word) {
                for (phrase, label) in phrases {
                    let end = ti + phrase.len();
                    if end > toks.len() {
                        continue;
                    }
                    if phrase
                        .iter()
                        .zip(&toks[ti..end])
                        .all(|(p, r)| p.as_str() == &text[r.clone()])
                        && contiguous(text, &toks[ti..end])
                    {
                        cands.push(Candidate {
                            span: t.start..toks[end - 1].end,
                            label: *label,
                            priority: base,
                        });
                    }
                }
            }
            if self.given_names.contains(word) {
                let mut last = ti;
                let mut j = ti + 1;
                // optional middle initial "Q."
                if j + 1 < toks.len()
                    && is_initial(&text[toks[j].clone()])
                    && &text[toks[j + 1].clone()] == "."
                {
                    j += 2;
                }
                let mut surnames = 0;
                while j < toks.len() && surnames < 2 && is_title_word(&text[toks[j].clone()]) {
                    if !same_line_gap(text, toks[j - 1].end, toks[j].start) {
                        break;
                    }
                    last = j;
                    j += 1;
                    surnames += 1;
                }
                if surnames > 0 {
                    cands.push(Candidate {
                        span: t.start..toks[last].end,
                        label: EntityLabel::Person,
                        priority: base + 1,
                    });
                }
            }
        }
        resolve(cands, text)
    }
}

fn is_initial(w: &str) -> bool {
    let mut cs = w.chars();
    matches!((cs.next(), cs.next()), (Some(c), None) if c.is_uppercase())
}

fn is_title_word(w: &str) -> bool {
    let mut cs = w.chars();
    match cs.next() {
        Some(c) if c.is_uppercase() => {
            let rest: Vec<char> = cs.collect();
            !rest.is_empty() && rest.iter().all(|c| c.is_lowercase())
        }
        _ => false,
    }
}

fn same_line_gap(text: &str, from: usize, to: usize) -> bool {
    text[from..to].chars().all(|c| c == ' ' || c == '\t')
}

/// Phrase tokens must be separated by at most plain spaces (or nothing).
fn contiguous(text: &str, toks: &[Range<usize>]) -> bool {
    toks.windows(2)
        .all(|w| same_line_gap(text, w[0].end, w[1].start))
}

fn resolve(mut cands: Vec<Candidate>, text: &str) -> Vec<EntitySpan> {
    cands.sort_by(|a, b| {
        (b.span.end - b.span.start)
            .cmp(&(a.span.end - a.span.start))
            .then(a.span.start.cmp(&b.span.start))
            .then(a.priority.cmp(&b.priority))
    });
    let mut taken: Vec<Range<usize>> = Vec::new();
    let mut out = Vec::new();
    for c in cands {
        if taken
            .iter()
            .any(|t| c.span.start < t.end && t.start < c.span.end)
        {
            continue;
        }
        taken.push(c.span.clone());
        out.push(EntitySpan {
            label: c.label,
            surface: text[c.span.clone()].to_owned(),
            char_span: c.span,
        });
    }
    out.sort_by_key(|e| (e.char_span.start, e.char_span.end));
    out
}

/// Number of `spans` whose label is in `labels`.
pub fn count_matching(spans: &[EntitySpan], labels: &[EntityLabel]) -> usize {
    spans.iter().filter(|s| labels.contains(&s.label)).count()
}

/// Entities in the chunk matching `labels`, divided by `max(1, token_count)`.
pub fn ner_count(recognizer: &Recognizer, chunk: &Chunk, labels: &[EntityLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let spans = recognizer.recognize(&chunk.text);
    normalized_count(&spans, labels, chunk.token_count)
}

pub fn normalized_count(spans: &[EntitySpan], labels: &[EntityLabel], token_count: usize) -> f64 {
    count_matching(spans, labels) as f64 / token_count.max(1) as f64
}
