//! Ranked destination ids from free-form completion text.

use std::collections::HashSet;
use std::ops::Range;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::graph::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseStatus {
    ExactTemplate,
    FallbackInteger,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub ranked: Vec<NodeId>,
    pub status: ParseStatus,
}

// "`Destination Node' is 8228", with any quoting (or none) around the phrase.
static TEMPLATE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r#"(?i)destination[ _]node\s*[`'"‘’“”]*\s*(?:is|:|=)\s*[`'"‘’“”*]*\s*(\d+)"#,
    )
    .unwrap()
});

// Integers with an optional decimal part; decimals are skipped by the caller.
static NUMBER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\d+(?:\.\d+)?").unwrap());

fn push_unique(out: &mut Vec<NodeId>, seen: &mut HashSet<NodeId>, id: NodeId) {
    if seen.insert(id) {
        out.push(id);
    }
}

/// Template matches first; otherwise every in-range integer in order of
/// appearance. Ids outside `valid` (timestamps echoed back, for example) are
/// dropped.
pub fn parse_prediction(text: &str, valid: &Range<NodeId>) -> ParsedPrediction {
    let mut ranked = Vec::new();
    let mut seen = HashSet::new();

    for cap in TEMPLATE.captures_iter(text) {
        if let Ok(id) = cap[1].parse::<NodeId>() {
            if valid.contains(&id) {
                push_unique(&mut ranked, &mut seen, id);
            }
        }
    }
    if !ranked.is_empty() {
        return ParsedPrediction {
            ranked,
            status: ParseStatus::ExactTemplate,
        };
    }

    for m in NUMBER.find_iter(text) {
        let token = m.as_str();
        if token.contains('.') {
            continue;
        }
        if let Ok(id) = token.parse::<NodeId>() {
            if valid.contains(&id) {
                push_unique(&mut ranked, &mut seen, id);
            }
        }
    }
    let status = if ranked.is_empty() {
        ParseStatus::Unparseable
    } else {
        ParseStatus::FallbackInteger
    };
    ParsedPrediction { ranked, status }
}
