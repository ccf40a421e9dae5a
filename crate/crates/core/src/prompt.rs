//! Text encoding of temporal graph context and link queries.
//!
//! A prompt has five blocks, always in this order: system text, a short
//! description of the tuple format, the background set (recent edges), the
//! example set (solved demonstrations) and the query. Empty blocks are
//! skipped; the rest are joined with a newline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, EdgeStream, NodeId, Timestamp};
use crate::neighbors::NeighborIndex;

pub const SYSTEM_PROMPT: &str = "You are an expert temporal graph learning agent. Your task is to predict the next interaction (i.e. Destination Node) given the `Source Node' and `Timestamp'.";

pub const TG_PREAMBLE: &str = "Description of the temporal graph is provided below, where each line is a tuple of (`Source Node`, `Destination Node`, `Timestamp`).";

const BLOCK_SEPARATOR: &str = "\n";
const TUPLE_SEPARATOR: &str = ", ";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt without background needs {needed} characters, budget is {budget}")]
    QueryExceedsBudget { needed: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Background set size in edges.
    pub background_size: usize,
    /// Temporal neighbors listed per source node.
    pub neighbors: usize,
    /// Example set size.
    pub shots: usize,
    /// Queries per evaluation batch.
    pub batch_size: usize,
    pub max_prompt_chars: usize,
    pub include_background: bool,
    pub include_examples: bool,
    pub include_neighbors: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            background_size: 300,
            neighbors: 2,
            shots: 5,
            batch_size: 200,
            max_prompt_chars: 48_000,
            include_background: true,
            include_examples: true,
            include_neighbors: true,
        }
    }
}

impl PromptConfig {
    /// Neighbor count after applying the ablation flag.
    pub fn effective_neighbors(&self) -> usize {
        if self.include_neighbors {
            self.neighbors
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub query_id: u64,
    pub system: String,
    pub tg_preamble: String,
    pub background: String,
    pub examples: String,
    pub query: String,
    pub assembled: String,
}

impl PromptBundle {
    /// Everything after the system block: the user message of a chat request.
    pub fn user_message(&self) -> String {
        join_blocks(&[&self.tg_preamble, &self.background, &self.examples, &self.query])
    }
}

fn join_blocks(blocks: &[&str]) -> String {
    blocks
        .iter()
        .filter(|b| !b.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(BLOCK_SEPARATOR)
}

pub fn render_edge(e: &Edge) -> String {
    format!("({},{},{})", e.src, e.dst, e.ts)
}

pub fn render_edges(edges: &[Edge]) -> String {
    edges
        .iter()
        .map(render_edge)
        .collect::<Vec<_>>()
        .join(TUPLE_SEPARATOR)
}

/// The `b` most recent edges strictly before `t_start`, oldest first.
pub fn background_edges(stream: &EdgeStream, t_start: Timestamp, b: usize) -> &[Edge] {
    let before = stream.before(t_start);
    &before[before.len().saturating_sub(b)..]
}

pub fn build_background(stream: &EdgeStream, t_start: Timestamp, b: usize) -> String {
    render_edges(background_edges(stream, t_start, b))
}

/// Question text for one source node. `m == 0` drops the interaction
/// sentence altogether; neighbors are drawn strictly before `cutoff`.
fn question(index: &NeighborIndex, src: NodeId, ts: Timestamp, cutoff: Timestamp, m: usize) -> String {
    let mut text = String::new();
    if m > 0 {
        let recent = index.recent_neighbors(src, cutoff, m);
        if recent.is_empty() {
            text.push_str(&format!("`Source Node' {src} has no past interactions. "));
        } else {
            let edges: Vec<Edge> = recent.iter().map(|i| i.edge(src)).collect();
            text.push_str(&format!(
                "`Source Node' {src} has the following past interactions: {}. ",
                render_edges(&edges)
            ));
        }
    }
    text.push_str(&format!(
        "Please predict the most likely `Destination Node' for `Source Node' {src} at `Timestamp' {ts}."
    ));
    text
}

pub fn answer_clause(dst: NodeId) -> String {
    format!("Answer: `Destination Node' is {dst}.")
}

/// Solved demonstrations from the `shots` most recent edges before `t_start`,
/// one per line.
pub fn build_examples(
    stream: &EdgeStream,
    index: &NeighborIndex,
    t_start: Timestamp,
    shots: usize,
    m: usize,
) -> String {
    background_edges(stream, t_start, shots)
        .iter()
        .map(|e| format!("{} {}", question(index, e.src, e.ts, e.ts, m), answer_clause(e.dst)))
        .collect::<Vec<_>>()
        .join(BLOCK_SEPARATOR)
}

pub fn encode_query(index: &NeighborIndex, src: NodeId, ts: Timestamp, m: usize) -> String {
    question(index, src, ts, ts, m)
}

/// Like [`encode_query`] but samples neighbors strictly before `cutoff`
/// (the batch start) rather than the query's own timestamp.
pub fn encode_query_with_cutoff(
    index: &NeighborIndex,
    src: NodeId,
    ts: Timestamp,
    cutoff: Timestamp,
    m: usize,
) -> String {
    question(index, src, ts, cutoff.min(ts), m)
}

/// Combine blocks into a bundle, dropping the oldest background edges until
/// the assembled text fits `config.max_prompt_chars`.
pub fn assemble(
    config: &PromptConfig,
    query_id: u64,
    system: &str,
    background: &[Edge],
    examples: &str,
    query: &str,
) -> Result<PromptBundle, PromptError> {
    let examples = if config.include_examples { examples } else { "" };
    let background = if config.include_background { background } else { &[] };

    let fixed = join_blocks(&[system, TG_PREAMBLE, examples, query]);
    let budget = config.max_prompt_chars;
    if fixed.chars().count() > budget {
        return Err(PromptError::QueryExceedsBudget {
            needed: fixed.chars().count(),
            budget,
        });
    }

    // Length of `fixed` plus the background suffix starting at `skip`.
    let tuple_lens: Vec<usize> = background.iter().map(|e| render_edge(e).len()).collect();
    let mut suffix_len: usize = tuple_lens.iter().sum::<usize>()
        + TUPLE_SEPARATOR.len() * tuple_lens.len().saturating_sub(1);
    let base = fixed.chars().count();
    let mut skip = 0;
    while skip < background.len() && base + BLOCK_SEPARATOR.len() + suffix_len > budget {
        suffix_len -= tuple_lens[skip];
        if skip + 1 < background.len() {
            suffix_len -= TUPLE_SEPARATOR.len();
        }
        skip += 1;
    }
    let background = render_edges(&background[skip..]);

    let assembled = join_blocks(&[system, TG_PREAMBLE, &background, examples, query]);
    Ok(PromptBundle {
        query_id,
        system: system.to_owned(),
        tg_preamble: TG_PREAMBLE.to_owned(),
        background,
        examples: examples.to_owned(),
        query: query.to_owned(),
        assembled,
    })
}

/// Context shared by every query of one evaluation batch.
#[derive(Debug, Clone)]
pub struct BatchContext {
    pub t_start: Timestamp,
    pub background: Vec<Edge>,
    pub examples: String,
}

impl BatchContext {
    pub fn build(
        config: &PromptConfig,
        stream: &EdgeStream,
        index: &NeighborIndex,
        t_start: Timestamp,
    ) -> Self {
        let m = config.effective_neighbors();
        let background = if config.include_background {
            background_edges(stream, t_start, config.background_size).to_vec()
        } else {
            Vec::new()
        };
        let examples = if config.include_examples {
            build_examples(stream, index, t_start, config.shots, m)
        } else {
            String::new()
        };
        Self {
            t_start,
            background,
            examples,
        }
    }

    pub fn bundle(
        &self,
        config: &PromptConfig,
        index: &NeighborIndex,
        query_id: u64,
        src: NodeId,
        ts: Timestamp,
    ) -> Result<PromptBundle, PromptError> {
        let query = encode_query_with_cutoff(index, src, ts, self.t_start, config.effective_neighbors());
        assemble(
            config,
            query_id,
            SYSTEM_PROMPT,
            &self.background,
            &self.examples,
            &query,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeSpace;

    fn e(s: u64, d: u64, t: u64) -> Edge {
        Edge::new(s, d, t)
    }

    fn toy() -> (EdgeStream, NeighborIndex) {
        let edges = vec![e(0, 8227, 0), e(1, 8228, 36), e(1, 8228, 77), e(2, 8229, 131)];
        let mut index = NeighborIndex::default();
        index.extend(&edges).unwrap();
        let stream = EdgeStream::from_edges(
            edges,
            NodeSpace::Bipartite {
                num_sources: 8227,
                num_destinations: 1000,
            },
        )
        .unwrap();
        (stream, index)
    }

    #[test]
    fn empty_blocks() {
        let (s, idx) = toy();
        assert_eq!(build_background(&s, 150, 0), "");
        assert_eq!(build_examples(&s, &idx, 150, 0, 2), "");
        assert_eq!(build_background(&s, 0, 10), "");
    }

    #[test]
    fn no_history_wording() {
        let idx = NeighborIndex::default();
        assert_eq!(
            encode_query(&idx, 5, 10, 2),
            "`Source Node' 5 has no past interactions. Please predict the most likely `Destination Node' for `Source Node' 5 at `Timestamp' 10."
        );
        assert_eq!(
            encode_query(&idx, 5, 10, 0),
            "Please predict the most likely `Destination Node' for `Source Node' 5 at `Timestamp' 10."
        );
    }

    #[test]
    fn disabled_blocks_are_omitted() {
        let (s, idx) = toy();
        let config = PromptConfig {
            include_background: false,
            include_examples: false,
            include_neighbors: false,
            ..Default::default()
        };
        let ctx = BatchContext::build(&config, &s, &idx, 217);
        let b = ctx.bundle(&config, &idx, 0, 1, 217).unwrap();
        assert_eq!(
            b.assembled,
            format!(
                "{SYSTEM_PROMPT}\n{TG_PREAMBLE}\nPlease predict the most likely `Destination Node' for `Source Node' 1 at `Timestamp' 217."
            )
        );
        assert_eq!(b.user_message(), b.assembled[SYSTEM_PROMPT.len() + 1..]);
    }

    #[test]
    fn budget_too_small_for_query() {
        let config = PromptConfig {
            max_prompt_chars: 10,
            ..Default::default()
        };
        assert!(matches!(
            assemble(&config, 0, SYSTEM_PROMPT, &[], "", "q"),
            Err(PromptError::QueryExceedsBudget { .. })
        ));
    }

    #[test]
    fn truncation_keeps_most_recent_edges() {
        let (s, _) = toy();
        let full = assemble(&PromptConfig::default(), 0, "sys", s.edges(), "", "q").unwrap();
        // Budget that fits exactly the last two tuples.
        let tail = "(1,8228,77), (2,8229,131)";
        let budget = "sys\n".len() + TG_PREAMBLE.len() + 1 + tail.len() + 2;
        let config = PromptConfig {
            max_prompt_chars: budget,
            ..Default::default()
        };
        let cut = assemble(&config, 0, "sys", s.edges(), "", "q").unwrap();
        assert_eq!(cut.background, tail);
        assert!(cut.assembled.len() <= budget);
        assert!(full.background.ends_with(&cut.background));
        // One character less drops another edge.
        let config = PromptConfig {
            max_prompt_chars: budget - 1,
            ..Default::default()
        };
        let cut = assemble(&config, 0, "sys", s.edges(), "", "q").unwrap();
        assert_eq!(cut.background, "(2,8229,131)");
    }

    #[test]
    fn assemble_is_idempotent() {
        let (s, idx) = toy();
        let config = PromptConfig::default();
        let ctx = BatchContext::build(&config, &s, &idx, 217);
        let a = ctx.bundle(&config, &idx, 3, 1, 217).unwrap();
        let b = ctx.bundle(&config, &idx, 3, 1, 217).unwrap();
        assert_eq!(a, b);
    }
}
