//! The 18-label OntoNotes entity scheme and its built-in glosses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityLabel {
    Person,
    Norp,
    Fac,
    Org,
    Gpe,
    Loc,
    Product,
    Event,
    WorkOfArt,
    Law,
    Language,
    Date,
    Time,
    Percent,
    Money,
    Quantity,
    Ordinal,
    Cardinal,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 18] = [
        EntityLabel::Person,
        EntityLabel::Norp,
        EntityLabel::Fac,
        EntityLabel::Org,
        EntityLabel::Gpe,
        EntityLabel::Loc,
        EntityLabel::Product,
        EntityLabel::Event,
        EntityLabel::WorkOfArt,
        EntityLabel::Law,
        EntityLabel::Language,
        EntityLabel::Date,
        EntityLabel::Time,
        EntityLabel::Percent,
        EntityLabel::Money,
        EntityLabel::Quantity,
        EntityLabel::Ordinal,
        EntityLabel::Cardinal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityLabel::Person => "PERSON",
            EntityLabel::Norp => "NORP",
            EntityLabel::Fac => "FAC",
            EntityLabel::Org => "ORG",
            EntityLabel::Gpe => "GPE",
            EntityLabel::Loc => "LOC",
            EntityLabel::Product => "PRODUCT",
            EntityLabel::Event => "EVENT",
            EntityLabel::WorkOfArt => "WORK_OF_ART",
            EntityLabel::Law => "LAW",
            EntityLabel::Language => "LANGUAGE",
            EntityLabel::Date => "DATE",
            EntityLabel::Time => "TIME",
            EntityLabel::Percent => "PERCENT",
            EntityLabel::Money => "MONEY",
            EntityLabel::Quantity => "QUANTITY",
            EntityLabel::Ordinal => "ORDINAL",
            EntityLabel::Cardinal => "CARDINAL",
        }
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl fmt::Display for UnknownLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown entity label `{}`", self.0)
    }
}

impl std::error::Error for UnknownLabel {}

impl FromStr for EntityLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownLabel(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDefinition {
    pub label: EntityLabel,
    pub definition: String,
}

const GLOSSES: [(EntityLabel, &str); 18] = [
    (EntityLabel::Person, "People, including fictional: names of individuals, persons, signatories and parties who are people."),
    (EntityLabel::Norp, "Nationalities or religious or political groups."),
    (EntityLabel::Fac, "Facilities: buildings, airports, highways, bridges, premises and property sites."),
    (EntityLabel::Org, "Organizations: companies, corporations, agencies, institutions and other organizations or parties that are entities."),
    (EntityLabel::Gpe, "Geopolitical entities: countries, cities, states, and the jurisdiction or state whose governing law applies."),
    (EntityLabel::Loc, "Non-GPE locations, mountain ranges, bodies of water, regions."),
    (EntityLabel::Product, "Products: objects, vehicles, foods, software and goods (not services)."),
    (EntityLabel::Event, "Named events: hurricanes, battles, wars, sports events, conferences."),
    (EntityLabel::WorkOfArt, "Titles of books, songs, documents, and other works of art."),
    (EntityLabel::Law, "Named documents made into laws: acts, statutes, codes, regulations and governing law."),
    (EntityLabel::Language, "Any named language."),
    (EntityLabel::Date, "Absolute or relative dates or periods: the date, day, month, year or term when something happens, becomes effective, expires or ends."),
    (EntityLabel::Time, "Times smaller than a day: hours, minutes, time of day."),
    (EntityLabel::Percent, "Percentage, including the percent sign."),
    (EntityLabel::Money, "Monetary values, including unit: amounts, prices, fees, rent and payments in dollars."),
    (EntityLabel::Quantity, "Measurements, as of weight, distance, area or volume."),
    (EntityLabel::Ordinal, "Ordinal numbers: first, second, third."),
    (EntityLabel::Cardinal, "Numerals that do not fall under another type: counts and numbers."),
];

/// Built-in one-line definitions for all 18 labels, in scheme order.
pub fn builtin_definitions() -> Vec<LabelDefinition> {
    GLOSSES
        .iter()
        .map(|(label, def)| LabelDefinition {
            label: *label,
            definition: (*def).to_owned(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn eighteen_distinct_definitions() {
        let defs = builtin_definitions();
        assert_eq!(defs.len(), 18);
        let labels: HashSet<_> = defs.iter().map(|d| d.label).collect();
        assert_eq!(labels.len(), 18);
    }

    #[test]
    fn label_names_round_trip() {
        for l in EntityLabel::ALL {
            assert_eq!(l.as_str().parse::<EntityLabel>().unwrap(), l);
            let json = serde_json::to_string(&l).unwrap();
            assert_eq!(json, format!("\"{}\"", l.as_str()));
        }
        assert!("SPECIES".parse::<EntityLabel>().is_err());
    }
}
