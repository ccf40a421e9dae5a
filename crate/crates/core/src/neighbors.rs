//! Per-node interaction histories and "last m neighbors before t" sampling.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, EdgeStream, NodeId, Timestamp};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NeighborError {
    #[error("edge at ts {ts} inserted after ts {last}")]
    OutOfOrder { ts: Timestamp, last: Timestamp },
    #[error("hop count must be at least 1")]
    ZeroHops,
}

/// Whether an edge is recorded in both endpoints' histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Bidirectional,
    Directed,
}

/// One entry of a node's history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub neighbor: NodeId,
    pub ts: Timestamp,
    /// True when the owning node was the source of the underlying edge.
    pub outgoing: bool,
}

impl Interaction {
    /// The original edge, seen from `owner`'s history.
    pub fn edge(&self, owner: NodeId) -> Edge {
        if self.outgoing {
            Edge::new(owner, self.neighbor, self.ts)
        } else {
            Edge::new(self.neighbor, owner, self.ts)
        }
    }
}

/// Append-only per-node interaction histories, ordered by timestamp.
#[derive(Debug, Clone, Default)]
pub struct NeighborIndex {
    direction: Direction,
    histories: HashMap<NodeId, Vec<Interaction>>,
    last_ts: Option<Timestamp>,
}

impl NeighborIndex {
    pub fn new(direction: Direction) -> Self {
        Self {
            direction,
            ..Default::default()
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Latest inserted timestamp, if any.
    pub fn last_ts(&self) -> Option<Timestamp> {
        self.last_ts
    }

    pub fn update(&mut self, edge: &Edge) -> Result<(), NeighborError> {
        if let Some(last) = self.last_ts {
            if edge.ts < last {
                return Err(NeighborError::OutOfOrder { ts: edge.ts, last });
            }
        }
        self.last_ts = Some(edge.ts);
        self.histories.entry(edge.src).or_default().push(Interaction {
            neighbor: edge.dst,
            ts: edge.ts,
            outgoing: true,
        });
        if self.direction == Direction::Bidirectional && edge.src != edge.dst {
            self.histories.entry(edge.dst).or_default().push(Interaction {
                neighbor: edge.src,
                ts: edge.ts,
                outgoing: false,
            });
        }
        Ok(())
    }

    pub fn extend<'a>(
        &mut self,
        edges: impl IntoIterator<Item = &'a Edge>,
    ) -> Result<(), NeighborError> {
        edges.into_iter().try_for_each(|e| self.update(e))
    }

    pub fn history(&self, u: NodeId) -> &[Interaction] {
        self.histories.get(&u).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The last `min(m, available)` interactions of `u` strictly before `t`,
    /// oldest first.
    pub fn recent_neighbors(&self, u: NodeId, t: Timestamp, m: usize) -> &[Interaction] {
        let history = self.history(u);
        let end = history.partition_point(|i| i.ts < t);
        &history[end.saturating_sub(m)..end]
    }
}

/// All nodes reachable from `u` by a walk of exactly `k` steps over the
/// undirected graph of edges with `ts < t`.
///
/// Linear-algebra-free reference used to check sampling; it rebuilds the
/// adjacency from the stream on every call.
pub fn khop_bruteforce(
    stream: &EdgeStream,
    u: NodeId,
    t: Timestamp,
    k: usize,
) -> Result<BTreeSet<NodeId>, NeighborError> {
    if k == 0 {
        return Err(NeighborError::ZeroHops);
    }
    let mut adjacency: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
    for e in stream.before(t) {
        adjacency.entry(e.src).or_default().insert(e.dst);
        adjacency.entry(e.dst).or_default().insert(e.src);
    }
    let mut frontier = BTreeSet::from([u]);
    for _ in 0..k {
        frontier = frontier
            .iter()
            .filter_map(|v| adjacency.get(v))
            .flatten()
            .copied()
            .collect();
    }
    Ok(frontier)
}
