//! Link explanations: generation prompts, ten-way classification, and the
//! category composition / per-category MRR report.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::PredictionRecord;
use crate::llm::{ChatRequest, Completion, LlmClient, LlmError, RequestKind};
use crate::prompt::PromptBundle;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("explanation for query {0} has no matching prediction")]
    MissingPrediction(u64),
    #[error("query {0} appears more than once")]
    DuplicateQuery(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExplanationCategory {
    MostRecentInteraction,
    RepeatedInteractionPattern,
    MostFrequentPastDestination,
    PatternContinuation,
    SequenceOrAlternationLogic,
    DefaultOrMostCommonNode,
    LackOfData,
    NewNode,
    AmbiguousCandidates,
    Others,
}

use ExplanationCategory::*;

impl ExplanationCategory {
    pub const ALL: [ExplanationCategory; 10] = [
        MostRecentInteraction,
        RepeatedInteractionPattern,
        MostFrequentPastDestination,
        PatternContinuation,
        SequenceOrAlternationLogic,
        DefaultOrMostCommonNode,
        LackOfData,
        NewNode,
        AmbiguousCandidates,
        Others,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MostRecentInteraction => "Most Recent Interaction",
            RepeatedInteractionPattern => "Repeated Interaction Pattern",
            MostFrequentPastDestination => "Most Frequent Past Destination",
            PatternContinuation => "Pattern Continuation",
            SequenceOrAlternationLogic => "Sequence or Alternation Logic",
            DefaultOrMostCommonNode => "Default or Most Common Node",
            LackOfData => "Lack of Data",
            NewNode => "New Node",
            AmbiguousCandidates => "Ambiguous Candidates",
            Others => "Others",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            MostRecentInteraction => "the model predicts the destination node as the one with which the source node had its most recent interaction before (or closest to) the given timestamp.",
            RepeatedInteractionPattern => "if a source node has repeatedly interacted with the same destination node at multiple timestamps, the model predicts that this pattern will continue.",
            MostFrequentPastDestination => "when multiple past interactions exist, the explanation chooses the destination node that appears most frequently in the interaction history.",
            PatternContinuation => "The model infers the next likely destination by extrapolating from observed interaction patterns, even when the exact match isn’t present.",
            SequenceOrAlternationLogic => "the model uses the order of interactions (e.g., alternating between nodes) to predict the next likely destination.",
            DefaultOrMostCommonNode => "in the absence of a clear match, the explanation may default to the most common or logical node, or state that any node could be chosen.",
            LackOfData => "when no clear pattern or sufficient data is available, the model defaults to a plausible guess, sometimes stating the lack of information.",
            NewNode => "the model infers that the next interaction might be with a new node that hasn’t appeared in the source node’s history, especially if all previous interactions are exhausted.",
            AmbiguousCandidates => "the explanation discusses more than one plausible destination (e.g., similar timestamps), and may use additional heuristics to select among them.",
            Others => "use this only if none of the above apply. Include a proposed new category name and brief justification in the required format.",
        }
    }

    /// Identifier form, e.g. `LackOfData`.
    pub fn key(self) -> String {
        self.label()
            .split_whitespace()
            .map(|w| {
                let mut c = w.chars();
                c.next()
                    .map(|f| f.to_uppercase().chain(c).collect::<String>())
                    .unwrap_or_default()
            })
            .collect()
    }
}

impl fmt::Display for ExplanationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub query_id: u64,
    pub explanation_text: String,
    pub category: ExplanationCategory,
    /// Only set when `category` is `Others`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposed_new_category: Option<String>,
    pub classifier_model: String,
    pub classifier_output: String,
}

pub const EXPLAIN_INSTRUCTION: &str = "Explain the reasoning behind your answer. Describe which interactions in the temporal graph led you to predict this `Destination Node'.";

pub const CLASSIFIER_SYSTEM: &str = "You are an expert temporal graph learning agent. You classify explanations given for temporal link predictions.";

pub const EXPLANATION_MARKER: &str = "Explanation: ";
pub const REPLY_INSTRUCTION: &str = "Reply with a single line of the form \"Category: <category name>\". If you choose Others, reply with \"Category: Others: <proposed new category name> - <brief justification>\".";

/// The prediction context, the model's answer, and a request to explain it.
pub fn build_explanation_prompt(bundle: &PromptBundle, answer: &Completion) -> String {
    format!(
        "{}\nYour answer: {}\n{}",
        bundle.user_message(),
        answer.text.trim(),
        EXPLAIN_INSTRUCTION
    )
}

pub fn build_classification_prompt(query: &str, answer: &str, explanation: &str) -> String {
    let mut text = String::from(
        "Below are a link prediction question on a temporal graph, the answer given, and the explanation for that answer. Classify the explanation into exactly one of the following categories.\n",
    );
    for (i, c) in ExplanationCategory::ALL.iter().enumerate() {
        text.push_str(&format!("{}. {}: {}\n", i + 1, c.label(), c.description()));
    }
    text.push_str(&format!("Question: {}\n", query.trim()));
    text.push_str(&format!("Answer: {}\n", answer.trim()));
    text.push_str(&format!("{EXPLANATION_MARKER}{}\n", explanation.trim()));
    text.push_str(REPLY_INSTRUCTION);
    text
}

/// Explanation text embedded in a classification prompt.
pub fn explanation_section(prompt: &str) -> Option<&str> {
    let start = prompt.rfind(&format!("\n{EXPLANATION_MARKER}"))? + 1 + EXPLANATION_MARKER.len();
    let end = prompt.rfind(&format!("\n{REPLY_INSTRUCTION}"))?;
    prompt.get(start..end)
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn category_names() -> Vec<(String, ExplanationCategory)> {
    // Longest names first so no label shadows a longer one.
    let mut names: Vec<_> = ExplanationCategory::ALL
        .iter()
        .flat_map(|&c| [(normalize(c.label()), c), (normalize(&c.key()), c)])
        .collect();
    names.push(("other".into(), Others));
    names.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
    names.dedup();
    names
}

fn proposed_name(rest: &str) -> Option<String> {
    let rest = rest.trim_start_matches(|c: char| c == ':' || c == '-' || c.is_whitespace());
    let name = rest.split(" - ").next().unwrap_or("").trim().trim_end_matches('.');
    (!name.is_empty()).then(|| name.to_owned())
}

/// Category from classifier output: the label alone or `Category: <label>`,
/// with `Others: <name>` capturing a proposed name. Anything unrecognised
/// becomes `Others` without a proposal.
pub fn parse_classification(output: &str) -> (ExplanationCategory, Option<String>) {
    let names = category_names();
    for line in output.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let body = line.trim_start_matches(['*', '#', '-', ' ']);
        let body = match body.get(..9) {
            Some(p) if p.eq_ignore_ascii_case("category:") => body[9..].trim(),
            _ => body,
        };
        let body = body.trim_start_matches(['*', '"', '\'', '`', ' ']);
        let normalized = normalize(body);
        for (name, category) in &names {
            if !normalized.starts_with(name.as_str()) {
                continue;
            }
            if *category != Others {
                return (*category, None);
            }
            // Skip past the word "Others"/"Other" in the original text.
            let cut = body
                .char_indices()
                .filter(|(_, c)| c.is_alphanumeric())
                .nth(name.len() - 1)
                .map(|(i, c)| i + c.len_utf8())
                .unwrap_or(body.len());
            let rest = &body[cut..];
            let rest = rest.strip_prefix('s').unwrap_or(rest);
            return (Others, proposed_name(rest));
        }
    }
    // Free text: accept it only if exactly one label is mentioned.
    let normalized = normalize(output);
    let mut found: Vec<ExplanationCategory> = ExplanationCategory::ALL
        .iter()
        .copied()
        .filter(|&c| c != Others && normalized.contains(&normalize(c.label())))
        .collect();
    found.dedup();
    match found.as_slice() {
        [only] => (*only, None),
        _ => (Others, None),
    }
}

/// Generate explanations for answered prompts, then classify each with the
/// same client. Failures are returned in place.
pub fn explain_and_classify(
    client: &LlmClient,
    answered: &[(PromptBundle, Completion)],
) -> Vec<Result<ExplanationRecord, LlmError>> {
    let explain_requests: Vec<ChatRequest> = answered
        .iter()
        .map(|(bundle, answer)| ChatRequest {
            query_id: bundle.query_id,
            kind: RequestKind::Explain,
            system: bundle.system.clone(),
            user: build_explanation_prompt(bundle, answer),
        })
        .collect();
    let explanations = client.complete_batch(&explain_requests);

    let mut classify_requests = Vec::new();
    let mut slots = Vec::new();
    for ((bundle, answer), explanation) in answered.iter().zip(&explanations) {
        match explanation {
            Ok(e) => {
                slots.push(Ok(classify_requests.len()));
                classify_requests.push(ChatRequest {
                    query_id: bundle.query_id,
                    kind: RequestKind::Classify,
                    system: CLASSIFIER_SYSTEM.to_owned(),
                    user: build_classification_prompt(&bundle.query, &answer.text, &e.text),
                });
            }
            Err(err) => slots.push(Err(err.clone())),
        }
    }
    let classified = client.complete_batch(&classify_requests);
    let model = client.identity();

    slots
        .into_iter()
        .zip(explanations)
        .map(|(slot, explanation)| {
            let i = slot?;
            let explanation = explanation?;
            let output = classified[i].clone()?;
            Ok(record_from_output(
                explanation.query_id,
                explanation.text,
                output.text,
                &model,
            ))
        })
        .collect()
}

/// Classify one explanation.
pub fn classify_explanation(
    client: &LlmClient,
    query_id: u64,
    query: &str,
    answer: &str,
    explanation: &str,
) -> Result<ExplanationRecord, LlmError> {
    let request = ChatRequest {
        query_id,
        kind: RequestKind::Classify,
        system: CLASSIFIER_SYSTEM.to_owned(),
        user: build_classification_prompt(query, answer, explanation),
    };
    let output = client.complete(&request)?;
    Ok(record_from_output(
        query_id,
        explanation.to_owned(),
        output.text,
        &client.identity(),
    ))
}

fn record_from_output(
    query_id: u64,
    explanation_text: String,
    classifier_output: String,
    model: &str,
) -> ExplanationRecord {
    let (category, proposed_new_category) = parse_classification(&classifier_output);
    ExplanationRecord {
        query_id,
        explanation_text,
        category,
        proposed_new_category,
        classifier_model: model.to_owned(),
        classifier_output,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: ExplanationCategory,
    pub label: String,
    pub count: usize,
    pub fraction: f64,
    /// `None` for empty categories.
    pub mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub classified: usize,
    pub overall_mrr: Option<f64>,
    pub categories: Vec<CategoryRow>,
    pub proposed_new_categories: BTreeMap<String, usize>,
}

impl CategoryReport {
    pub fn row(&self, category: ExplanationCategory) -> &CategoryRow {
        self.categories
            .iter()
            .find(|r| r.category == category)
            .expect("every category has a row")
    }

    /// Composition and MRR table for plotting; empty categories are left out.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,count,fraction,mrr\n");
        for row in self.categories.iter().filter(|r| r.count > 0) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.label,
                row.count,
                row.fraction,
                row.mrr.unwrap_or_default()
            ));
        }
        out
    }
}

/// Join explanations to predictions on `query_id` and summarise per category.
pub fn aggregate_report(
    predictions: &[PredictionRecord],
    explanations: &[ExplanationRecord],
) -> Result<CategoryReport, ExplainError> {
    let mut by_query: HashMap<u64, f64> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_query.insert(p.query_id, p.reciprocal_rank).is_some() {
            return Err(ExplainError::DuplicateQuery(p.query_id));
        }
    }
    let mut joined: BTreeMap<u64, (ExplanationCategory, f64, Option<&str>)> = BTreeMap::new();
    for e in explanations {
        let rr = *by_query
            .get(&e.query_id)
            .ok_or(ExplainError::MissingPrediction(e.query_id))?;
        let proposal = e.proposed_new_category.as_deref();
        if joined.insert(e.query_id, (e.category, rr, proposal)).is_some() {
            return Err(ExplainError::DuplicateQuery(e.query_id));
        }
    }

    let total = joined.len();
    let mut sums: BTreeMap<ExplanationCategory, (usize, f64)> = BTreeMap::new();
    let mut proposed: BTreeMap<String, usize> = BTreeMap::new();
    let mut rr_total = 0.0;
    for (category, rr, proposal) in joined.values() {
        let entry = sums.entry(*category).or_default();
        entry.0 += 1;
        entry.1 += rr;
        rr_total += rr;
        if let Some(name) = proposal {
            *proposed.entry((*name).to_owned()).or_default() += 1;
        }
    }
    let categories = ExplanationCategory::ALL
        .iter()
        .map(|&category| {
            let (count, sum) = sums.get(&category).copied().unwrap_or_default();
            CategoryRow {
                category,
                label: category.label().to_owned(),
                count,
                fraction: if total > 0 { count as f64 / total as f64 } else { 0.0 },
                mrr: (count > 0).then(|| sum / count as f64),
            }
        })
        .collect();
    Ok(CategoryReport {
        classified: total,
        overall_mrr: (total > 0).then(|| rr_total / total as f64),
        categories,
        proposed_new_categories: proposed,
    })
}
