//! Per-query negative destinations: half historical, half random.
//!
//! Each query draws from its own ChaCha stream keyed by `(seed, query_id)`, so
//! a query's negatives do not depend on evaluation order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, EdgeStream, NodeId, Timestamp};

#[derive(Debug, Error)]
pub enum NegativeError {
    #[error("destination space has {space} nodes; need at least {needed} to draw {n} negatives")]
    SpaceTooSmall { space: u64, needed: u64, n: usize },
    #[error("negative count must be at least 1")]
    ZeroCount,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("query {0} is not a test edge of the stream")]
    UnknownQuery(u64),
    #[error("query {query_id}: {reason}")]
    InvalidSet { query_id: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A prediction request: the query edge is `stream.edges()[query_id]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkQuery {
    pub query_id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub ts: Timestamp,
}

impl LinkQuery {
    pub fn from_edge(query_id: usize, edge: &Edge) -> Self {
        Self {
            query_id: query_id as u64,
            src: edge.src,
            dst: edge.dst,
            ts: edge.ts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSet {
    pub query_id: u64,
    pub candidates: Vec<NodeId>,
    pub historical_count: usize,
    pub seed: u64,
}

/// Where historical negatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoricalPool {
    /// Train destinations previously paired with the query source.
    #[default]
    SourceConditioned,
    /// Every destination seen in train.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeConfig {
    pub n: usize,
    pub seed: u64,
    pub pool: HistoricalPool,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            n: 20,
            seed: 0,
            pool: HistoricalPool::SourceConditioned,
        }
    }
}

/// Generator bound to one stream. Pools are built once from the train split.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    config: NegativeConfig,
    dst_range: Range<NodeId>,
    by_source: HashMap<NodeId, Vec<NodeId>>,
    global: Vec<NodeId>,
    fixed: BTreeMap<u64, NegativeSet>,
}

impl NegativeSampler {
    pub fn new(stream: &EdgeStream, config: NegativeConfig) -> Result<Self, NegativeError> {
        if config.n == 0 {
            return Err(NegativeError::ZeroCount);
        }
        let dst_range = stream.space().destination_range();
        let space = dst_range.end - dst_range.start;
        let needed = config.n as u64 + 1;
        if space < needed {
            return Err(NegativeError::SpaceTooSmall {
                space,
                needed,
                n: config.n,
            });
        }
        let mut by_source: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
        let mut global = BTreeSet::new();
        for e in stream.train() {
            by_source.entry(e.src).or_default().insert(e.dst);
            global.insert(e.dst);
        }
        Ok(Self {
            config,
            dst_range,
            by_source: by_source
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
            global: global.into_iter().collect(),
            fixed: BTreeMap::new(),
        })
    }

    /// Use pre-computed sets for the queries they cover.
    pub fn with_fixed(
        mut self,
        stream: &EdgeStream,
        fixed: BTreeMap<u64, NegativeSet>,
    ) -> Result<Self, NegativeError> {
        for set in fixed.values() {
            validate_against(stream, set)?;
        }
        self.fixed = fixed;
        Ok(self)
    }

    pub fn config(&self) -> &NegativeConfig {
        &self.config
    }

    fn historical_pool(&self, src: NodeId) -> &[NodeId] {
        match self.config.pool {
            HistoricalPool::SourceConditioned => {
                self.by_source.get(&src).map(Vec::as_slice).unwrap_or(&[])
            }
            HistoricalPool::Global => &self.global,
        }
    }

    pub fn generate(&self, query: &LinkQuery) -> NegativeSet {
        if let Some(set) = self.fixed.get(&query.query_id) {
            return set.clone();
        }
        let n = self.config.n;
        let mut rng = query_rng(self.config.seed, query.query_id);

        let mut pool: Vec<NodeId> = self
            .historical_pool(query.src)
            .iter()
            .copied()
            .filter(|&d| d != query.dst)
            .collect();
        let want = n.div_ceil(2);
        let take = want.min(pool.len());
        // Partial Fisher-Yates: the first `take` slots become the sample.
        for i in 0..take {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(take);

        let mut chosen: HashSet<NodeId> = pool.iter().copied().collect();
        let mut candidates = pool;
        while candidates.len() < n {
            let d = rng.gen_range(self.dst_range.clone());
            if d != query.dst && chosen.insert(d) {
                candidates.push(d);
            }
        }
        NegativeSet {
            query_id: query.query_id,
            candidates,
            historical_count: take,
            seed: self.config.seed,
        }
    }
}

/// Stream-selected generator for one query.
pub fn query_rng(seed: u64, query_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query_id);
    rng
}

/// One-shot generation without keeping a sampler around.
pub fn generate(
    stream: &EdgeStream,
    query: &LinkQuery,
    n: usize,
    seed: u64,
) -> Result<NegativeSet, NegativeError> {
    let sampler = NegativeSampler::new(
        stream,
        NegativeConfig {
            n,
            seed,
            ..Default::default()
        },
    )?;
    Ok(sampler.generate(query))
}

fn validate_against(stream: &EdgeStream, set: &NegativeSet) -> Result<(), NegativeError> {
    let range = stream.test_range();
    let idx = set.query_id as usize;
    if !range.contains(&idx) {
        return Err(NegativeError::UnknownQuery(set.query_id));
    }
    let edge = stream.edges()[idx];
    let invalid = |reason: &str| NegativeError::InvalidSet {
        query_id: set.query_id,
        reason: reason.to_owned(),
    };
    if set.candidates.contains(&edge.dst) {
        return Err(invalid("candidates contain the true destination"));
    }
    let unique: HashSet<_> = set.candidates.iter().collect();
    if unique.len() != set.candidates.len() {
        return Err(invalid("duplicate candidates"));
    }
    if set.historical_count > set.candidates.len() {
        return Err(invalid("historical_count exceeds candidate count"));
    }
    Ok(())
}

/// Read the per-query JSONL format. Blank lines are skipped.
pub fn load_fixed_negatives(path: &Path) -> Result<BTreeMap<u64, NegativeSet>, NegativeError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let set: NegativeSet = serde_json::from_str(&line).map_err(|e| NegativeError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if out.insert(set.query_id, set).is_some() {
            return Err(NegativeError::Malformed {
                line: i + 1,
                reason: "duplicate query_id".into(),
            });
        }
    }
    Ok(out)
}

pub fn save_negatives<'a>(
    path: &Path,
    sets: impl IntoIterator<Item = &'a NegativeSet>,
) -> Result<(), NegativeError> {
    let mut out = BufWriter::new(File::create(path)?);
    for set in sets {
        serde_json::to_writer(&mut out, set)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeSpace, Split};

    fn stream(edges: &[(u64, u64, u64)], n: u64, train_end: usize) -> EdgeStream {
        EdgeStream::from_edges(
            edges.iter().map(|&(s, d, t)| Edge::new(s, d, t)).collect(),
            NodeSpace::Unipartite { num_nodes: n },
        )
        .unwrap()
        .with_split(Split {
            train_end,
            val_end: train_end,
        })
        .unwrap()
    }

    #[test]
    fn no_history_falls_back_to_random() {
        let s = stream(&[(0, 1, 0), (5, 6, 1)], 20, 1);
        let q = LinkQuery::from_edge(1, &s.edges()[1]);
        let set = generate(&s, &q, 4, 7).unwrap();
        assert_eq!(set.historical_count, 0);
        assert_eq!(set.candidates.len(), 4);
        assert!(!set.candidates.contains(&6));
    }

    #[test]
    fn true_destination_excluded_from_history() {
        let s = stream(&[(0, 7, 0), (0, 9, 1), (0, 7, 2)], 20, 2);
        let q = LinkQuery::from_edge(2, &s.edges()[2]);
        let set = generate(&s, &q, 4, 3).unwrap();
        assert!(set.historical_count <= 1);
        assert_eq!(set.candidates[0], 9);
        assert!(!set.candidates.contains(&7));
    }

    #[test]
    fn bipartite_random_draws_stay_in_destination_partition() {
        let s = EdgeStream::from_edges(
            vec![Edge::new(0, 3, 0), Edge::new(1, 4, 1)],
            NodeSpace::Bipartite {
                num_sources: 3,
                num_destinations: 10,
            },
        )
        .unwrap()
        .with_split(Split { train_end: 1, val_end: 1 })
        .unwrap();
        let q = LinkQuery::from_edge(1, &s.edges()[1]);
        let set = generate(&s, &q, 8, 1).unwrap();
        assert!(set.candidates.iter().all(|d| (3..13).contains(d)));
    }

    #[test]
    fn space_too_small() {
        let s = stream(&[(0, 1, 0), (1, 2, 1)], 3, 1);
        assert!(matches!(
            NegativeSampler::new(&s, NegativeConfig { n: 3, ..Default::default() }),
            Err(NegativeError::SpaceTooSmall { .. })
        ));
        assert!(NegativeSampler::new(&s, NegativeConfig { n: 2, ..Default::default() }).is_ok());
    }

    #[test]
    fn global_pool_uses_all_train_destinations() {
        let s = stream(&[(0, 7, 0), (1, 9, 1), (2, 11, 2), (3, 12, 3)], 20, 3);
        let sampler = NegativeSampler::new(
            &s,
            NegativeConfig {
                n: 4,
                seed: 0,
                pool: HistoricalPool::Global,
            },
        )
        .unwrap();
        let set = sampler.generate(&LinkQuery::from_edge(3, &s.edges()[3]));
        assert_eq!(set.historical_count, 2);
        let mut hist = set.candidates[..2].to_vec();
        hist.sort();
        assert!(hist.iter().all(|d| [7, 9, 11].contains(d)));
    }

    #[test]
    fn load_single_record_and_empty_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"query_id":0,"candidates":[3,4],"historical_count":0,"seed":1}}"#).unwrap();
        let m = load_fixed_negatives(f.path()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[&0].candidates, [3, 4]);

        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_fixed_negatives(f.path()).unwrap().is_empty());
    }

    #[test]
    fn malformed_record_reports_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"query_id":0,"candidates":[3],"historical_count":0,"seed":1}}"#).unwrap();
        writeln!(f, r#"{{"query_id":"x"}}"#).unwrap();
        assert!(matches!(
            load_fixed_negatives(f.path()),
            Err(NegativeError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn fixed_sets_validated_against_stream() {
        let s = stream(&[(0, 1, 0), (0, 2, 1)], 10, 1);
        let bad_id = BTreeMap::from([(
            0,
            NegativeSet { query_id: 0, candidates: vec![3], historical_count: 0, seed: 0 },
        )]);
        let sampler = NegativeSampler::new(&s, NegativeConfig { n: 2, ..Default::default() }).unwrap();
        assert!(matches!(
            sampler.clone().with_fixed(&s, bad_id),
            Err(NegativeError::UnknownQuery(0))
        ));
        let contains_true = BTreeMap::from([(
            1,
            NegativeSet { query_id: 1, candidates: vec![2, 3], historical_count: 0, seed: 0 },
        )]);
        assert!(sampler.clone().with_fixed(&s, contains_true).is_err());
        let ok = BTreeMap::from([(
            1,
            NegativeSet { query_id: 1, candidates: vec![5, 3], historical_count: 0, seed: 0 },
        )]);
        let sampler = sampler.with_fixed(&s, ok).unwrap();
        assert_eq!(
            sampler.generate(&LinkQuery::from_edge(1, &s.edges()[1])).candidates,
            [5, 3]
        );
    }
}
