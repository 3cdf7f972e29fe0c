//! Calendar-date recognition for extracted values.
//!
//! Accepted shapes (case-insensitive, surrounding whitespace ignored):
//! `2024-03-24`, `03/24/2024` (month first), `March 24, 2024`,
//! `Mar. 24th 2024`, `24 March 2024`, `24th of March, 2024`.

use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;

fn month_number(name: &str) -> Option<u32> {
    let n = name.trim_end_matches('.').to_ascii_lowercase();
    const MONTHS: [&str; 12] = [
        "january", "february", "march", "april", "may", "june", "july", "august", "september",
        "october", "november", "december",
    ];
    MONTHS
        .iter()
        .position(|m| *m == n || (n.len() == 3 && m.starts_with(&n)) || (n == "sept" && *m == "september"))
        .map(|i| i as u32 + 1)
}

struct Patterns {
    iso: Regex,
    us_numeric: Regex,
    month_first: Regex,
    day_first: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        iso: Regex::new(r"^(\d{4})-(\d{1,2})-(\d{1,2})$").unwrap(),
        us_numeric: Regex::new(r"^(\d{1,2})/(\d{1,2})/(\d{4})$").unwrap(),
        month_first: Regex::new(r"(?i)^([a-z]+\.?)\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})$").unwrap(),
        day_first: Regex::new(r"(?i)^(\d{1,2})(?:st|nd|rd|th)?\s+(?:of\s+)?([a-z]+\.?),?\s+(\d{4})$").unwrap(),
    })
}

pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let s = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let s = s.trim_end_matches('.');
    let p = patterns();
    let num = |x: &str| x.parse::<u32>().ok();
    let (y, m, d) = if let Some(c) = p.iso.captures(s) {
        (c[1].parse::<i32>().ok()?, num(&c[2])?, num(&c[3])?)
    } else if let Some(c) = p.us_numeric.captures(s) {
        (c[3].parse::<i32>().ok()?, num(&c[1])?, num(&c[2])?)
    } else if let Some(c) = p.month_first.captures(s) {
        (c[3].parse::<i32>().ok()?, month_number(&c[1])?, num(&c[2])?)
    } else if let Some(c) = p.day_first.captures(s) {
        (c[3].parse::<i32>().ok()?, month_number(&c[2])?, num(&c[1])?)
    } else {
        return None;
    };
    NaiveDate::from_ymd_opt(y, m, d)
}

/// Every recognizable date mention in free text, canonicalized, in order of
/// appearance.
pub fn find_dates(text: &str) -> Vec<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    let re = R.get_or_init(|| {
        Regex::new(concat!(
            r"(?i)\b(?:\d{4}-\d{1,2}-\d{1,2}",
            r"|\d{1,2}/\d{1,2}/\d{4}",
            r"|[a-z]{3,9}\.?\s+\d{1,2}(?:st|nd|rd|th)?,?\s+\d{4}",
            r"|\d{1,2}(?:st|nd|rd|th)?\s+(?:of\s+)?[a-z]{3,9}\.?,?\s+\d{4})\b"
        ))
        .unwrap()
    });
    re.find_iter(text).filter_map(|m| canonical_date(m.as_str())).collect()
}

/// ISO-8601 calendar date string, when `text` is a recognized date.
pub fn canonical_date(text: &str) -> Option<String> {
    parse_date(text).map(|d| d.format("%Y-%m-%d").to_string())
}
