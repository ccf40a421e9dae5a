//! Streaming evaluation over the test split and EdgeBank baselines.
//!
//! Test edges are processed in batches. Every query in a batch sees only state
//! built from edges before the batch start; the batch's own edges are folded
//! into the state after it has been scored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, EdgeStream, NodeId, Timestamp};
use crate::llm::{ChatRequest, Completion, LlmClient, LlmError};
use crate::negatives::{LinkQuery, NegativeSampler, NegativeSet};
use crate::neighbors::{Direction, NeighborError, NeighborIndex};
use crate::parse::{parse_prediction, ParseStatus};
use crate::prompt::{BatchContext, PromptBundle, PromptConfig, PromptError};

pub const METHOD_LLM: &str = "llm";
pub const METHOD_EDGEBANK_INF: &str = "edgebank_inf";
pub const METHOD_EDGEBANK_TW: &str = "edgebank_tw";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test split is empty")]
    EmptyTestSet,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    #[error("endpoint error: {0}")]
    Endpoint(LlmError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: u64,
    pub src: NodeId,
    pub true_dst: NodeId,
    pub ts: Timestamp,
    pub method: String,
    pub ranked: Vec<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_status: Option<ParseStatus>,
    pub candidates: Vec<NodeId>,
    pub historical_count: usize,
    pub reciprocal_rank: f64,
    /// Raw completion text, kept so explanations can be produced later.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `1/k` where `k` is the position of `true_dst` in `ranked` after dropping
/// ids outside `{true_dst} ∪ candidates`; 0 when it never appears.
pub fn reciprocal_rank(ranked: &[NodeId], true_dst: NodeId, candidates: &[NodeId]) -> f64 {
    let pool: HashSet<NodeId> = candidates.iter().copied().chain([true_dst]).collect();
    ranked
        .iter()
        .filter(|id| pool.contains(id))
        .position(|&id| id == true_dst)
        .map_or(0.0, |k| 1.0 / (k + 1) as f64)
}

/// How parsed LLM output is turned into a reciprocal rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Position of the positive in the pool-filtered ranked list.
    #[default]
    RankedList,
    /// 1 if the first parsed id is the positive, else 0.
    StrictTop1,
}

impl ScoringMode {
    pub fn score(self, ranked: &[NodeId], true_dst: NodeId, candidates: &[NodeId]) -> f64 {
        match self {
            ScoringMode::RankedList => reciprocal_rank(ranked, true_dst, candidates),
            ScoringMode::StrictTop1 => {
                if ranked.first() == Some(&true_dst) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Reciprocal of the tie-averaged rank of a positive among candidates:
/// `rank = 1 + higher + tied / 2`.
pub fn tie_average_reciprocal_rank(positive: f64, candidates: impl IntoIterator<Item = f64>) -> f64 {
    let (mut higher, mut tied) = (0usize, 0usize);
    for s in candidates {
        if s > positive {
            higher += 1;
        } else if s == positive {
            tied += 1;
        }
    }
    1.0 / (1.0 + higher as f64 + tied as f64 / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeBankWindow {
    Unlimited,
    /// Pairs seen within the last `w` time units.
    Window(u64),
}

/// Memorisation baseline: a pair scores 1 iff it was seen (within the window).
#[derive(Debug, Clone)]
pub struct EdgeBank {
    window: EdgeBankWindow,
    last_seen: HashMap<(NodeId, NodeId), Timestamp>,
}

impl EdgeBank {
    pub fn new(window: EdgeBankWindow) -> Self {
        Self {
            window,
            last_seen: HashMap::new(),
        }
    }

    pub fn window(&self) -> EdgeBankWindow {
        self.window
    }

    pub fn update(&mut self, edge: &Edge) {
        let ts = self.last_seen.entry(edge.pair()).or_insert(edge.ts);
        *ts = (*ts).max(edge.ts);
    }

    pub fn extend<'a>(&mut self, edges: impl IntoIterator<Item = &'a Edge>) {
        edges.into_iter().for_each(|e| self.update(e));
    }

    fn in_window(&self, last: Timestamp, t: Timestamp) -> bool {
        match self.window {
            EdgeBankWindow::Unlimited => true,
            EdgeBankWindow::Window(w) => (last as u128) + (w as u128) > t as u128,
        }
    }

    /// Drop pairs whose last occurrence has left the window at time `t`.
    pub fn prune(&mut self, t: Timestamp) {
        if let EdgeBankWindow::Window(w) = self.window {
            self.last_seen
                .retain(|_, &mut last| (last as u128) + (w as u128) > t as u128);
        }
    }

    pub fn stored_pairs(&self) -> usize {
        self.last_seen.len()
    }

    pub fn score(&self, src: NodeId, dst: NodeId, t: Timestamp) -> u8 {
        match self.last_seen.get(&(src, dst)) {
            Some(&last) if self.in_window(last, t) => 1,
            _ => 0,
        }
    }

    pub fn rank(&self, src: NodeId, true_dst: NodeId, candidates: &[NodeId], t: Timestamp) -> f64 {
        let positive = self.score(src, true_dst, t) as f64;
        tie_average_reciprocal_rank(
            positive,
            candidates.iter().map(|&d| self.score(src, d, t) as f64),
        )
    }
}

/// Default window: the time spanned by the train split.
pub fn train_duration(stream: &EdgeStream) -> u64 {
    match (stream.train().first(), stream.train().last()) {
        (Some(f), Some(l)) => l.ts - f.ts,
        _ => 0,
    }
}

/// Test-edge index ranges of at least `batch_size` edges, extended so that
/// edges sharing a timestamp are never split across batches.
pub fn test_batches(
    stream: &EdgeStream,
    batch_size: usize,
    max_queries: Option<usize>,
) -> Result<Vec<Range<usize>>, EvalError> {
    if batch_size == 0 {
        return Err(EvalError::ZeroBatch);
    }
    let test = stream.test_range();
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let end = match max_queries {
        Some(n) => (test.start + n).min(test.end),
        None => test.end,
    };
    let edges = stream.edges();
    let mut out = Vec::new();
    let mut start = test.start;
    while start < end {
        let mut stop = (start + batch_size).min(end);
        while stop < end && edges[stop].ts == edges[stop - 1].ts {
            stop += 1;
        }
        out.push(start..stop);
        start = stop;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub prompt: PromptConfig,
    pub direction: Direction,
    pub scoring: ScoringMode,
    /// Evaluate only the first `n` test edges.
    pub max_queries: Option<usize>,
    /// Keep prompt/answer pairs for the first `n` queries (for explanations).
    pub retain_exchanges: usize,
    pub method: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            prompt: PromptConfig::default(),
            direction: Direction::Bidirectional,
            scoring: ScoringMode::RankedList,
            max_queries: None,
            retain_exchanges: 0,
            method: METHOD_LLM.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub bundle: PromptBundle,
    pub completion: Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub num_queries: usize,
    pub mrr: f64,
    pub hits_at_1: f64,
    pub num_errors: usize,
    pub parse_status: BTreeMap<String, usize>,
}

pub fn summarize(method: &str, records: &[PredictionRecord]) -> MethodSummary {
    let n = records.len();
    let mut parse_status = BTreeMap::new();
    for r in records {
        if let Some(s) = r.parse_status {
            let key = serde_json::to_value(s)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            *parse_status.entry(key).or_insert(0) += 1;
        }
    }
    let mean = |f: &dyn Fn(&PredictionRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    MethodSummary {
        method: method.to_owned(),
        num_queries: n,
        mrr: mean(&|r| r.reciprocal_rank),
        hits_at_1: mean(&|r| if r.reciprocal_rank == 1.0 { 1.0 } else { 0.0 }),
        num_errors: records.iter().filter(|r| r.error.is_some()).count(),
        parse_status,
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub records: Vec<PredictionRecord>,
    pub negatives: Vec<NegativeSet>,
    pub summary: MethodSummary,
    pub exchanges: Vec<Exchange>,
}

fn base_record(method: &str, query: &LinkQuery, negatives: &NegativeSet) -> PredictionRecord {
    PredictionRecord {
        query_id: query.query_id,
        src: query.src,
        true_dst: query.dst,
        ts: query.ts,
        method: method.to_owned(),
        candidates: negatives.candidates.clone(),
        historical_count: negatives.historical_count,
        ..Default::default()
    }
}

/// Walk the test batches, handing each batch's queries and prompts to `visit`
/// before folding the batch into the neighbor index.
fn for_each_batch<F>(stream: &EdgeStream, config: &EvalConfig, mut visit: F) -> Result<(), EvalError>
where
    F: FnMut(Vec<LinkQuery>, Vec<PromptBundle>) -> Result<(), EvalError>,
{
    let batches = test_batches(stream, config.prompt.batch_size, config.max_queries)?;
    let edges = stream.edges();
    let mut index = NeighborIndex::new(config.direction);
    index.extend(&edges[..stream.split().val_end])?;

    for batch in batches {
        let t_start = edges[batch.start].ts;
        let context = BatchContext::build(&config.prompt, stream, &index, t_start);
        let queries: Vec<LinkQuery> = batch
            .clone()
            .map(|i| LinkQuery::from_edge(i, &edges[i]))
            .collect();
        let bundles = queries
            .iter()
            .map(|q| context.bundle(&config.prompt, &index, q.query_id, q.src, q.ts))
            .collect::<Result<Vec<_>, _>>()?;
        visit(queries, bundles)?;
        index.extend(&edges[batch])?;
    }
    Ok(())
}

/// The prediction prompts [`run_eval`] would send, without sending them.
pub fn replay_bundles(stream: &EdgeStream, config: &EvalConfig) -> Result<Vec<PromptBundle>, EvalError> {
    let mut out = Vec::new();
    for_each_batch(stream, config, |_, bundles| {
        out.extend(bundles);
        Ok(())
    })?;
    Ok(out)
}

/// Prompted link prediction over the test split.
///
/// All edges before the test split are replayed into the neighbor index
/// first. Per batch: shared background and examples at the batch start,
/// one request per query, parse, score, then fold the batch into the index.
/// Per-query client failures score 0 and carry an error message; an
/// authentication failure aborts the run.
pub fn run_eval(
    stream: &EdgeStream,
    config: &EvalConfig,
    client: &LlmClient,
    sampler: &NegativeSampler,
) -> Result<EvalOutput, EvalError> {
    let valid = stream.space().destination_range();
    let mut records = Vec::new();
    let mut negatives = Vec::new();
    let mut exchanges = Vec::new();
    for_each_batch(stream, config, |queries, bundles| {
        let requests: Vec<ChatRequest> = bundles.iter().map(ChatRequest::predict).collect();
        let completions = client.complete_batch(&requests);

        for ((query, bundle), completion) in queries.iter().zip(bundles).zip(completions) {
            let negative_set = sampler.generate(query);
            let mut record = base_record(&config.method, query, &negative_set);
            match completion {
                Ok(completion) => {
                    let parsed = parse_prediction(&completion.text, &valid);
                    record.reciprocal_rank =
                        config
                            .scoring
                            .score(&parsed.ranked, query.dst, &negative_set.candidates);
                    record.ranked = parsed.ranked;
                    record.parse_status = Some(parsed.status);
                    record.response = Some(completion.text.clone());
                    if records.len() < config.retain_exchanges {
                        exchanges.push(Exchange { bundle, completion });
                    }
                }
                Err(e @ LlmError::Auth(_)) => return Err(EvalError::Endpoint(e)),
                Err(e) => record.error = Some(e.to_string()),
            }
            records.push(record);
            negatives.push(negative_set);
        }
        Ok(())
    })?;
    let summary = summarize(&config.method, &records);
    Ok(EvalOutput {
        records,
        negatives,
        summary,
        exchanges,
    })
}

/// EdgeBank over the same batches and negatives as [`run_eval`].
pub fn run_edgebank(
    stream: &EdgeStream,
    window: EdgeBankWindow,
    batch_size: usize,
    max_queries: Option<usize>,
    sampler: &NegativeSampler,
) -> Result<EvalOutput, EvalError> {
    let method = match window {
        EdgeBankWindow::Unlimited => METHOD_EDGEBANK_INF,
        EdgeBankWindow::Window(_) => METHOD_EDGEBANK_TW,
    };
    let batches = test_batches(stream, batch_size, max_queries)?;
    let edges = stream.edges();
    let mut bank = EdgeBank::new(window);
    bank.extend(&edges[..stream.split().val_end]);

    let mut records = Vec::new();
    let mut negatives = Vec::new();
    for batch in batches {
        bank.prune(edges[batch.start].ts);
        for i in batch.clone() {
            let query = LinkQuery::from_edge(i, &edges[i]);
            let negative_set = sampler.generate(&query);
            let mut record = base_record(method, &query, &negative_set);
            record.reciprocal_rank =
                bank.rank(query.src, query.dst, &negative_set.candidates, query.ts);
            records.push(record);
            negatives.push(negative_set);
        }
        bank.extend(&edges[batch]);
    }
    let summary = summarize(method, &records);
    Ok(EvalOutput {
        records,
        negatives,
        summary,
        exchanges: Vec::new(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), EvalError> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|source| EvalError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| EvalError::Json { line: i + 1, source })?);
    }
    Ok(out)
}
