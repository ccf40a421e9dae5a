//! Deterministic in-process chat transports.
//!
//! The heuristic mocks read the prompt text itself (the query line and its
//! listed interactions), so they exercise the same encoding a real model sees.
//! `Perfect` and `AlwaysWrong` consult the stream for the true destination.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::explain::{explanation_section, ExplanationCategory};
use crate::graph::{EdgeStream, NodeId, Timestamp};
use crate::llm::{ChatRequest, ChatTransport, RequestKind, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockOracle {
    Perfect,
    AlwaysWrong,
    Recency,
    Frequency,
    Scripted,
}

impl MockOracle {
    pub fn name(self) -> &'static str {
        match self {
            MockOracle::Perfect => "perfect",
            MockOracle::AlwaysWrong => "always-wrong",
            MockOracle::Recency => "recency",
            MockOracle::Frequency => "frequency",
            MockOracle::Scripted => "scripted",
        }
    }
}

impl FromStr for MockOracle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perfect" => Ok(MockOracle::Perfect),
            "always-wrong" => Ok(MockOracle::AlwaysWrong),
            "recency" => Ok(MockOracle::Recency),
            "frequency" => Ok(MockOracle::Frequency),
            "scripted" => Ok(MockOracle::Scripted),
            other => Err(format!("unknown mock oracle {other:?}")),
        }
    }
}

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub query_id: u64,
    #[serde(default)]
    pub kind: RequestKind,
    pub text: String,
}

pub fn load_script(path: &Path) -> std::io::Result<Vec<ScriptEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

pub struct MockTransport {
    oracle: MockOracle,
    truth: Arc<[NodeId]>,
    dst_range: Range<NodeId>,
    script: HashMap<(u64, RequestKind), String>,
}

impl MockTransport {
    pub fn new(oracle: MockOracle, stream: &EdgeStream) -> Self {
        Self {
            oracle,
            truth: stream.edges().iter().map(|e| e.dst).collect(),
            dst_range: stream.space().destination_range(),
            script: HashMap::new(),
        }
    }

    pub fn scripted(stream: &EdgeStream, entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut mock = Self::new(MockOracle::Scripted, stream);
        mock.script = entries
            .into_iter()
            .map(|e| ((e.query_id, e.kind), e.text))
            .collect();
        mock
    }

    fn true_destination(&self, query_id: u64) -> Result<NodeId, TransportError> {
        self.truth
            .get(query_id as usize)
            .copied()
            .ok_or_else(|| TransportError::Fatal(format!("unknown query {query_id}")))
    }

    fn predict(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let answer = match self.oracle {
            MockOracle::Perfect => Some(self.true_destination(request.query_id)?),
            MockOracle::AlwaysWrong => {
                let d = self.true_destination(request.query_id)?;
                Some(if d + 1 < self.dst_range.end { d + 1 } else { self.dst_range.start })
            }
            MockOracle::Recency => QueryView::parse(&request.user).and_then(|q| q.most_recent()),
            MockOracle::Frequency => QueryView::parse(&request.user).and_then(|q| q.most_frequent()),
            MockOracle::Scripted => unreachable!("scripted handled by caller"),
        };
        Ok(match answer {
            Some(d) => format!("`Destination Node' is {d}."),
            None => "I cannot determine the destination from the given information.".to_owned(),
        })
    }

    fn explain(&self, request: &ChatRequest) -> String {
        let Some(view) = QueryView::parse(&request.user) else {
            return "There are no past interactions to reason from, so there is not enough data and the answer is a plausible guess.".to_owned();
        };
        let src = view.source;
        if view.interactions.is_empty() {
            return format!(
                "`Source Node' {src} has no past interactions, so there is not enough data and the answer is a plausible guess."
            );
        }
        match self.oracle {
            MockOracle::Frequency => format!(
                "Node {} appears most frequently in the interaction history of `Source Node' {src}.",
                view.most_frequent().unwrap_or_default()
            ),
            MockOracle::Perfect => format!(
                "Extrapolating from the observed interaction patterns of `Source Node' {src}, the next destination follows the same pattern."
            ),
            _ => {
                let (n, t) = view.interactions[view.interactions.len() - 1];
                if view.interactions.len() > 1 && view.interactions.iter().all(|&(m, _)| m == n) {
                    format!(
                        "`Source Node' {src} has repeatedly interacted with node {n} at multiple timestamps, so this pattern will continue."
                    )
                } else {
                    format!("The most recent interaction of `Source Node' {src} was with node {n} at `Timestamp' {t}.")
                }
            }
        }
    }
}

impl ChatTransport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        if self.oracle == MockOracle::Scripted {
            return self
                .script
                .get(&(request.query_id, request.kind))
                .cloned()
                .ok_or_else(|| {
                    TransportError::Fatal(format!(
                        "no scripted {:?} reply for query {}",
                        request.kind, request.query_id
                    ))
                });
        }
        match request.kind {
            RequestKind::Predict => self.predict(request),
            RequestKind::Explain => Ok(self.explain(request)),
            RequestKind::Classify => {
                let explanation = explanation_section(&request.user).unwrap_or("");
                Ok(keyword_classifier_reply(explanation))
            }
        }
    }

    fn identity(&self) -> String {
        format!("mock:{}", self.oracle.name())
    }
}

/// Keyword rules used by the mock classifier; first match wins.
pub const KEYWORD_RULES: &[(&str, ExplanationCategory)] = &[
    ("not enough data", ExplanationCategory::LackOfData),
    ("no past interactions", ExplanationCategory::LackOfData),
    ("repeatedly", ExplanationCategory::RepeatedInteractionPattern),
    ("most frequently", ExplanationCategory::MostFrequentPastDestination),
    ("most recent", ExplanationCategory::MostRecentInteraction),
    ("alternat", ExplanationCategory::SequenceOrAlternationLogic),
    ("extrapolat", ExplanationCategory::PatternContinuation),
    ("most common", ExplanationCategory::DefaultOrMostCommonNode),
    ("new node", ExplanationCategory::NewNode),
    ("candidates", ExplanationCategory::AmbiguousCandidates),
];

pub fn keyword_classifier_reply(explanation: &str) -> String {
    let lower = explanation.to_lowercase();
    match KEYWORD_RULES.iter().find(|(k, _)| lower.contains(k)) {
        Some((_, c)) => format!("Category: {}", c.label()),
        None => "Category: Others: Unlabelled Reasoning - no listed pattern applies".to_owned(),
    }
}

static SOURCE: Lazy<Regex> = Lazy::new(|| Regex::new(r"`Source Node' (\d+)").unwrap());
static TUPLE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\((\d+),(\d+),(\d+)\)").unwrap());
const QUERY_MARK: &str = "Please predict the most likely `Destination Node'";

/// The query line of a prompt: source node and its listed interactions as
/// `(neighbor, ts)`, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryView {
    pub source: NodeId,
    pub interactions: Vec<(NodeId, Timestamp)>,
}

impl QueryView {
    /// Reads the last line that asks for a prediction and has no answer.
    pub fn parse(prompt: &str) -> Option<Self> {
        let line = prompt
            .lines()
            .rev()
            .find(|l| l.contains(QUERY_MARK) && !l.contains("Answer:"))?;
        let source: NodeId = SOURCE.captures(line)?[1].parse().ok()?;
        let interactions = TUPLE
            .captures_iter(line)
            .filter_map(|c| {
                let s: NodeId = c[1].parse().ok()?;
                let d: NodeId = c[2].parse().ok()?;
                let t: Timestamp = c[3].parse().ok()?;
                Some((if s == source { d } else { s }, t))
            })
            .collect();
        Some(Self { source, interactions })
    }

    pub fn most_recent(&self) -> Option<NodeId> {
        self.interactions.last().map(|&(n, _)| n)
    }

    /// Most frequent neighbor; ties go to the most recently seen.
    pub fn most_frequent(&self) -> Option<NodeId> {
        let mut counts: HashMap<NodeId, (usize, usize)> = HashMap::new();
        for (pos, &(n, _)) in self.interactions.iter().enumerate() {
            let entry = counts.entry(n).or_default();
            entry.0 += 1;
            entry.1 = pos;
        }
        counts
            .into_iter()
            .max_by_key(|&(_, (count, last))| (count, last))
            .map(|(n, _)| n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, NodeSpace};

    fn stream() -> EdgeStream {
        EdgeStream::from_edges(
            vec![Edge::new(0, 3, 0), Edge::new(1, 4, 1), Edge::new(2, 4, 2)],
            NodeSpace::Bipartite {
                num_sources: 3,
                num_destinations: 2,
            },
        )
        .unwrap()
    }

    fn req(query_id: u64, user: &str) -> ChatRequest {
        ChatRequest {
            query_id,
            kind: RequestKind::Predict,
            system: String::new(),
            user: user.into(),
        }
    }

    #[test]
    fn perfect_and_wrong() {
        let s = stream();
        let perfect = MockTransport::new(MockOracle::Perfect, &s);
        assert_eq!(perfect.send(&req(1, "")).unwrap(), "`Destination Node' is 4.");
        let wrong = MockTransport::new(MockOracle::AlwaysWrong, &s);
        assert_eq!(wrong.send(&req(1, "")).unwrap(), "`Destination Node' is 3.");
        assert_eq!(wrong.send(&req(0, "")).unwrap(), "`Destination Node' is 4.");
        assert!(perfect.send(&req(9, "")).is_err());
    }

    #[test]
    fn query_view_reads_last_unanswered_line() {
        let prompt = "`Source Node' 1 has the following past interactions: (1,5,3). Please predict the most likely `Destination Node' for `Source Node' 1 at `Timestamp' 4. Answer: `Destination Node' is 5.\n`Source Node' 2 has the following past interactions: (2,7,1), (9,2,2), (2,7,3). Please predict the most likely `Destination Node' for `Source Node' 2 at `Timestamp' 9.";
        let v = QueryView::parse(prompt).unwrap();
        assert_eq!(v.source, 2);
        assert_eq!(v.interactions, [(7, 1), (9, 2), (7, 3)]);
        assert_eq!(v.most_recent(), Some(7));
        assert_eq!(v.most_frequent(), Some(7));
    }

    #[test]
    fn frequency_tie_prefers_recent() {
        let v = QueryView {
            source: 0,
            interactions: vec![(5, 1), (6, 2)],
        };
        assert_eq!(v.most_frequent(), Some(6));
    }

    #[test]
    fn recency_without_interactions_gives_no_id() {
        let s = stream();
        let m = MockTransport::new(MockOracle::Recency, &s);
        let text = m
            .send(&req(0, "Please predict the most likely `Destination Node' for `Source Node' 2 at `Timestamp' 9."))
            .unwrap();
        assert!(!text.chars().any(|c| c.is_ascii_digit()));
    }

    #[test]
    fn scripted_lookup() {
        let s = stream();
        let m = MockTransport::scripted(
            &s,
            [ScriptEntry { query_id: 2, kind: RequestKind::Classify, text: "LackOfData".into() }],
        );
        let mut r = req(2, "");
        r.kind = RequestKind::Classify;
        assert_eq!(m.send(&r).unwrap(), "LackOfData");
        assert!(m.send(&req(2, "")).is_err());
    }

    #[test]
    fn keyword_replies() {
        assert_eq!(
            keyword_classifier_reply("There is not enough data here."),
            "Category: Lack of Data"
        );
        assert!(keyword_classifier_reply("hmm").starts_with("Category: Others:"));
    }
}
