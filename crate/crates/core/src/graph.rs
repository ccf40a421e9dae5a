//! Temporal graph data model.
//!
//! A temporal graph is a chronologically ordered stream of `(src, dst, ts)`
//! interactions. Raw node labels are opaque strings; they are mapped to
//! contiguous integer ids in order of first appearance, per partition when the
//! graph is bipartite. Destination ids of a bipartite graph are offset by the
//! number of sources so the two id ranges never overlap.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u64;
pub type Timestamp = u64;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: timestamp {ts} is earlier than the previous row ({prev}); enable sorting to accept unordered input")]
    Decreasing { row: usize, ts: Timestamp, prev: Timestamp },
    #[error("edge stream is empty")]
    Empty,
    #[error("invalid split fractions: train={train}, val={val}")]
    InvalidFractions { train: f64, val: f64 },
    #[error("test split is empty")]
    EmptyTestSet,
    #[error("edge {index} references node {node} outside the node space of size {size}")]
    NodeOutOfRange { index: usize, node: NodeId, size: u64 },
    #[error("edge {index} is out of chronological order")]
    Unordered { index: usize },
    #[error("invalid split indices ({train_end}, {val_end}) for {len} edges")]
    InvalidSplit { train_end: usize, val_end: usize, len: usize },
    #[error("dataset manifest does not match the edge stream: {0}")]
    ManifestMismatch(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One timestamped interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub ts: Timestamp,
}

impl Edge {
    pub fn new(src: NodeId, dst: NodeId, ts: Timestamp) -> Self {
        Self { src, dst, ts }
    }

    pub fn pair(&self) -> (NodeId, NodeId) {
        (self.src, self.dst)
    }
}

/// End indices of the train and validation splits. Test is `val_end..`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train_end: usize,
    pub val_end: usize,
}

/// Mapping from raw node labels to contiguous integer ids.
///
/// For a unipartite graph there is a single label space. For a bipartite
/// graph sources and destinations are separate namespaces (the same raw label
/// may name one node in each partition), and destination ids start at the
/// final number of sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeIdMap {
    bipartite: bool,
    sources: Vec<String>,
    destinations: Vec<String>,
    source_index: HashMap<String, NodeId>,
    destination_index: HashMap<String, NodeId>,
}

#[derive(Serialize, Deserialize)]
struct NodeIdMapRepr {
    bipartite: bool,
    sources: Vec<String>,
    #[serde(default)]
    destinations: Vec<String>,
}

impl Serialize for NodeIdMap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        NodeIdMapRepr {
            bipartite: self.bipartite,
            sources: self.sources.clone(),
            destinations: self.destinations.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NodeIdMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = NodeIdMapRepr::deserialize(deserializer)?;
        Ok(NodeIdMap::from_labels(repr.bipartite, repr.sources, repr.destinations))
    }
}

fn index_labels(labels: &[String], offset: NodeId) -> HashMap<String, NodeId> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), offset + i as NodeId))
        .collect()
}

impl NodeIdMap {
    fn from_labels(bipartite: bool, sources: Vec<String>, destinations: Vec<String>) -> Self {
        let source_index = index_labels(&sources, 0);
        let destination_index = index_labels(&destinations, sources.len() as NodeId);
        Self {
            bipartite,
            sources,
            destinations,
            source_index,
            destination_index,
        }
    }

    /// Identity labelling (`"0"`, `"1"`, ...) for streams built directly from ids.
    pub fn identity(space: NodeSpace) -> Self {
        match space {
            NodeSpace::Unipartite { num_nodes } => Self::from_labels(
                false,
                (0..num_nodes).map(|i| i.to_string()).collect(),
                Vec::new(),
            ),
            NodeSpace::Bipartite {
                num_sources,
                num_destinations,
            } => Self::from_labels(
                true,
                (0..num_sources).map(|i| i.to_string()).collect(),
                (num_sources..num_sources + num_destinations)
                    .map(|i| i.to_string())
                    .collect(),
            ),
        }
    }

    pub fn is_bipartite(&self) -> bool {
        self.bipartite
    }

    pub fn num_nodes(&self) -> u64 {
        (self.sources.len() + self.destinations.len()) as u64
    }

    /// `(sources, destinations)` when bipartite, `(total, 0)` otherwise.
    pub fn partition_sizes(&self) -> (u64, u64) {
        (self.sources.len() as u64, self.destinations.len() as u64)
    }

    pub fn space(&self) -> NodeSpace {
        if self.bipartite {
            NodeSpace::Bipartite {
                num_sources: self.sources.len() as u64,
                num_destinations: self.destinations.len() as u64,
            }
        } else {
            NodeSpace::Unipartite {
                num_nodes: self.sources.len() as u64,
            }
        }
    }

    pub fn source_id(&self, label: &str) -> Option<NodeId> {
        self.source_index.get(label).copied()
    }

    pub fn destination_id(&self, label: &str) -> Option<NodeId> {
        if self.bipartite {
            self.destination_index.get(label).copied()
        } else {
            self.source_index.get(label).copied()
        }
    }

    pub fn label(&self, id: NodeId) -> Option<&str> {
        let i = id as usize;
        if i < self.sources.len() {
            Some(&self.sources[i])
        } else {
            self.destinations
                .get(i - self.sources.len())
                .map(String::as_str)
        }
    }
}

/// Shape of the id space of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeSpace {
    Unipartite { num_nodes: u64 },
    Bipartite { num_sources: u64, num_destinations: u64 },
}

impl NodeSpace {
    pub fn num_nodes(&self) -> u64 {
        match *self {
            NodeSpace::Unipartite { num_nodes } => num_nodes,
            NodeSpace::Bipartite {
                num_sources,
                num_destinations,
            } => num_sources + num_destinations,
        }
    }

    /// Ids a destination may take.
    pub fn destination_range(&self) -> Range<NodeId> {
        match *self {
            NodeSpace::Unipartite { num_nodes } => 0..num_nodes,
            NodeSpace::Bipartite {
                num_sources,
                num_destinations,
            } => num_sources..num_sources + num_destinations,
        }
    }
}

/// Options for [`ingest_csv`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct IngestOptions {
    pub bipartite: bool,
    pub delimiter: char,
    pub has_header: bool,
    /// Stable-sort rows by timestamp instead of rejecting unordered input.
    pub sort: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            bipartite: false,
            delimiter: ',',
            has_header: true,
            sort: false,
        }
    }
}

/// Chronologically ordered edges with split markers and the id map.
///
/// Once built, a stream is immutable; it can be shared freely between readers.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStream {
    edges: Vec<Edge>,
    split: Split,
    node_map: NodeIdMap,
}

impl EdgeStream {
    /// Build a stream from already-mapped ids. Every edge is placed in the
    /// train split until [`chronological_split`] or [`EdgeStream::with_split`]
    /// is applied.
    pub fn from_edges(edges: Vec<Edge>, space: NodeSpace) -> Result<Self, GraphError> {
        let node_map = NodeIdMap::identity(space);
        Self::from_parts(edges, node_map)
    }

    fn from_parts(edges: Vec<Edge>, node_map: NodeIdMap) -> Result<Self, GraphError> {
        let space = node_map.space();
        let dst_range = space.destination_range();
        let src_limit = match space {
            NodeSpace::Unipartite { num_nodes } => num_nodes,
            NodeSpace::Bipartite { num_sources, .. } => num_sources,
        };
        for (index, e) in edges.iter().enumerate() {
            if e.src >= src_limit {
                return Err(GraphError::NodeOutOfRange {
                    index,
                    node: e.src,
                    size: src_limit,
                });
            }
            if !dst_range.contains(&e.dst) {
                return Err(GraphError::NodeOutOfRange {
                    index,
                    node: e.dst,
                    size: space.num_nodes(),
                });
            }
            if index > 0 && edges[index - 1].ts > e.ts {
                return Err(GraphError::Unordered { index });
            }
        }
        let n = edges.len();
        Ok(Self {
            edges,
            split: Split {
                train_end: n,
                val_end: n,
            },
            node_map,
        })
    }

    /// Replace split indices, checking the chronological invariant.
    pub fn with_split(mut self, split: Split) -> Result<Self, GraphError> {
        let n = self.edges.len();
        let bad = GraphError::InvalidSplit {
            train_end: split.train_end,
            val_end: split.val_end,
            len: n,
        };
        if split.train_end > split.val_end || split.val_end > n {
            return Err(bad);
        }
        for boundary in [split.train_end, split.val_end] {
            if boundary > 0 && boundary < n && self.edges[boundary - 1].ts == self.edges[boundary].ts
            {
                return Err(bad);
            }
        }
        self.split = split;
        Ok(self)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn node_map(&self) -> &NodeIdMap {
        &self.node_map
    }

    pub fn is_bipartite(&self) -> bool {
        self.node_map.is_bipartite()
    }

    pub fn space(&self) -> NodeSpace {
        self.node_map.space()
    }

    pub fn train(&self) -> &[Edge] {
        &self.edges[..self.split.train_end]
    }

    pub fn val(&self) -> &[Edge] {
        &self.edges[self.split.train_end..self.split.val_end]
    }

    pub fn test(&self) -> &[Edge] {
        &self.edges[self.split.val_end..]
    }

    pub fn test_range(&self) -> Range<usize> {
        self.split.val_end..self.edges.len()
    }

    /// Edges with `ts < t`, as a prefix slice.
    pub fn before(&self, t: Timestamp) -> &[Edge] {
        let end = self.edges.partition_point(|e| e.ts < t);
        &self.edges[..end]
    }

    /// Write the stream back out as `src,dst,ts` rows using raw labels.
    pub fn write_csv(&self, path: &Path) -> Result<(), GraphError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "src,dst,ts")?;
        for e in &self.edges {
            let src = self.node_map.label(e.src).unwrap_or_default();
            let dst = self.node_map.label(e.dst).unwrap_or_default();
            writeln!(out, "{src},{dst},{}", e.ts)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn manifest(&self, source: Option<&str>) -> DatasetManifest {
        DatasetManifest {
            source: source.map(str::to_owned),
            num_edges: self.edges.len(),
            split: self.split,
            bipartite: self.is_bipartite(),
            node_map: self.node_map.clone(),
        }
    }
}

/// Sidecar recording everything needed to reproduce an ingested stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: Option<String>,
    pub num_edges: usize,
    pub split: Split,
    pub bipartite: bool,
    pub node_map: NodeIdMap,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<(), GraphError> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, GraphError> {
        let file = std::io::BufReader::new(File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }

    /// Check the manifest describes `stream` and apply its split.
    pub fn apply(&self, stream: EdgeStream) -> Result<EdgeStream, GraphError> {
        if stream.len() != self.num_edges {
            return Err(GraphError::ManifestMismatch(format!(
                "{} edges in manifest, {} in stream",
                self.num_edges,
                stream.len()
            )));
        }
        if stream.node_map != self.node_map {
            return Err(GraphError::ManifestMismatch("node id map differs".into()));
        }
        stream.with_split(self.split)
    }
}

fn parse_timestamp(raw: &str, row: usize) -> Result<Timestamp, GraphError> {
    let raw = raw.trim();
    let malformed = |reason: String| GraphError::MalformedRow { row, reason };
    let (int_part, frac_part) = match raw.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (raw, None),
    };
    if let Some(frac) = frac_part {
        if !frac.chars().all(|c| c == '0') {
            return Err(malformed(format!("fractional timestamp {raw:?}")));
        }
    }
    int_part
        .parse::<Timestamp>()
        .map_err(|_| malformed(format!("invalid timestamp {raw:?}")))
}

/// Read a `src,dst,ts[,extra...]` edge list.
///
/// Rows must be in non-decreasing timestamp order unless `options.sort` is set,
/// in which case they are stably sorted. Ids are assigned by first appearance
/// in the resulting order; ties are broken by row order.
pub fn ingest_csv(path: &Path, options: &IngestOptions) -> Result<EdgeStream, GraphError> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .delimiter(options.delimiter as u8)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));

    let mut rows: Vec<(String, String, Timestamp)> = Vec::new();
    let first_row = if options.has_header { 2 } else { 1 };
    for (i, record) in reader.records().enumerate() {
        let row = first_row + i;
        let record = record?;
        if record.len() < 3 {
            return Err(GraphError::MalformedRow {
                row,
                reason: format!("expected at least 3 fields, found {}", record.len()),
            });
        }
        let src = record[0].to_owned();
        let dst = record[1].to_owned();
        if src.is_empty() || dst.is_empty() {
            return Err(GraphError::MalformedRow {
                row,
                reason: "empty node label".into(),
            });
        }
        let ts = parse_timestamp(&record[2], row)?;
        if let Some(&(_, _, prev)) = rows.last() {
            if ts < prev && !options.sort {
                return Err(GraphError::Decreasing { row, ts, prev });
            }
        }
        rows.push((src, dst, ts));
    }
    if rows.is_empty() {
        return Err(GraphError::Empty);
    }
    if options.sort {
        rows.sort_by_key(|r| r.2);
    }
    Ok(stream_from_labeled_rows(rows, options.bipartite))
}

/// Assign ids to labelled rows that are already in chronological order.
pub fn stream_from_labeled_rows(
    rows: Vec<(String, String, Timestamp)>,
    bipartite: bool,
) -> EdgeStream {
    let mut sources: Vec<String> = Vec::new();
    let mut destinations: Vec<String> = Vec::new();
    let mut source_index: HashMap<String, NodeId> = HashMap::new();
    let mut destination_index: HashMap<String, NodeId> = HashMap::new();

    // First pass: partition-local ordinals in order of first appearance.
    let mut ordinals = Vec::with_capacity(rows.len());
    for (src, dst, _) in &rows {
        let s = *source_index.entry(src.clone()).or_insert_with(|| {
            sources.push(src.clone());
            (sources.len() - 1) as NodeId
        });
        let d = if bipartite {
            *destination_index.entry(dst.clone()).or_insert_with(|| {
                destinations.push(dst.clone());
                (destinations.len() - 1) as NodeId
            })
        } else {
            *source_index.entry(dst.clone()).or_insert_with(|| {
                sources.push(dst.clone());
                (sources.len() - 1) as NodeId
            })
        };
        ordinals.push((s, d));
    }

    // Second pass: destination ordinals are offset by the final source count.
    let offset = if bipartite { sources.len() as NodeId } else { 0 };
    let edges = rows
        .iter()
        .zip(ordinals)
        .map(|((_, _, ts), (s, d))| Edge::new(s, d + offset, *ts))
        .collect::<Vec<_>>();
    let node_map = NodeIdMap::from_labels(bipartite, sources, destinations);
    EdgeStream::from_parts(edges, node_map).expect("ids assigned in range and rows ordered")
}

fn boundary_index(edges: &[Edge], frac: f64, floor: usize) -> usize {
    let n = edges.len();
    let mut idx = ((frac * n as f64) + 1e-9).floor() as usize;
    idx = idx.clamp(floor, n);
    // Keep a timestamp group together on the earlier side.
    while idx > 0 && idx < n && edges[idx].ts == edges[idx - 1].ts {
        idx += 1;
    }
    idx
}

/// Set chronological train/validation/test split indices.
///
/// Edges sharing a timestamp that straddles a boundary are kept on the
/// earlier side, so every train timestamp is strictly below every validation
/// timestamp, and likewise for test.
pub fn chronological_split(
    stream: EdgeStream,
    train_frac: f64,
    val_frac: f64,
) -> Result<EdgeStream, GraphError> {
    let valid = train_frac.is_finite()
        && val_frac.is_finite()
        && train_frac > 0.0
        && val_frac >= 0.0
        && train_frac + val_frac < 1.0;
    if !valid {
        return Err(GraphError::InvalidFractions {
            train: train_frac,
            val: val_frac,
        });
    }
    let train_end = boundary_index(&stream.edges, train_frac, 0);
    let val_end = boundary_index(&stream.edges, train_frac + val_frac, train_end);
    stream.with_split(Split { train_end, val_end })
}

/// Fraction of test edges whose `(src, dst)` pair never occurs in train.
pub fn surprise_index(stream: &EdgeStream) -> Result<f64, GraphError> {
    let test = stream.test();
    if test.is_empty() {
        return Err(GraphError::EmptyTestSet);
    }
    let train: HashSet<(NodeId, NodeId)> = stream.train().iter().map(Edge::pair).collect();
    let unseen = test.iter().filter(|e| !train.contains(&e.pair())).count();
    Ok(unseen as f64 / test.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_nodes: u64,
    pub num_edges: usize,
    pub num_unique_edges: usize,
    pub num_unique_steps: usize,
    /// `None` when the stream has no test split.
    pub surprise: Option<f64>,
    pub duration: (Timestamp, Timestamp),
}

pub fn compute_stats(stream: &EdgeStream) -> Result<DatasetStats, GraphError> {
    let (first, last) = match (stream.edges.first(), stream.edges.last()) {
        (Some(f), Some(l)) => (f.ts, l.ts),
        _ => return Err(GraphError::Empty),
    };
    let unique_edges: HashSet<(NodeId, NodeId)> = stream.edges.iter().map(Edge::pair).collect();
    let mut unique_steps = 1;
    for w in stream.edges.windows(2) {
        if w[1].ts != w[0].ts {
            unique_steps += 1;
        }
    }
    let surprise = match surprise_index(stream) {
        Ok(s) => Some(s),
        Err(GraphError::EmptyTestSet) => None,
        Err(e) => return Err(e),
    };
    Ok(DatasetStats {
        num_nodes: stream.node_map.num_nodes(),
        num_edges: stream.edges.len(),
        num_unique_edges: unique_edges.len(),
        num_unique_steps: unique_steps,
        surprise,
        duration: (first, last),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn uni(edges: &[(u64, u64, u64)], n: u64) -> EdgeStream {
        EdgeStream::from_edges(
            edges.iter().map(|&(s, d, t)| Edge::new(s, d, t)).collect(),
            NodeSpace::Unipartite { num_nodes: n },
        )
        .unwrap()
    }

    #[test]
    fn bipartite_ids_offset_by_source_count() {
        let f = write_tmp("a,X,0\nb,Y,36\nb,Y,77\n");
        let opts = IngestOptions {
            bipartite: true,
            has_header: false,
            ..Default::default()
        };
        let s = ingest_csv(f.path(), &opts).unwrap();
        assert_eq!(
            s.edges(),
            &[Edge::new(0, 2, 0), Edge::new(1, 3, 36), Edge::new(1, 3, 77)]
        );
        let m = s.node_map();
        assert_eq!(m.source_id("a"), Some(0));
        assert_eq!(m.source_id("b"), Some(1));
        assert_eq!(m.destination_id("X"), Some(2));
        assert_eq!(m.destination_id("Y"), Some(3));
        assert_eq!(m.partition_sizes(), (2, 2));
    }

    #[test]
    fn bipartite_partitions_are_separate_namespaces() {
        let f = write_tmp("0,0,1\n1,0,2\n");
        let opts = IngestOptions {
            bipartite: true,
            has_header: false,
            ..Default::default()
        };
        let s = ingest_csv(f.path(), &opts).unwrap();
        assert_eq!(s.edges(), &[Edge::new(0, 2, 1), Edge::new(1, 2, 2)]);
        assert_eq!(s.node_map().num_nodes(), 3);
    }

    #[test]
    fn ties_assign_ids_in_row_order() {
        let f = write_tmp("src,dst,ts\nq,p,5\nz,y,5\n");
        let s = ingest_csv(f.path(), &IngestOptions::default()).unwrap();
        let m = s.node_map();
        assert_eq!(
            ["q", "p", "z", "y"].map(|l| m.source_id(l).unwrap()),
            [0, 1, 2, 3]
        );
    }

    #[test]
    fn extra_columns_and_integral_floats_accepted() {
        let f = write_tmp("u,i,ts,label,f1,f2\n1,2,0.0,0,0.5,0.1\n3,4,36.0,1,0.2,0.3\n");
        let s = ingest_csv(f.path(), &IngestOptions::default()).unwrap();
        assert_eq!(s.edges()[1].ts, 36);
    }

    #[test]
    fn ingest_errors() {
        let opts = IngestOptions {
            has_header: false,
            ..Default::default()
        };
        let f = write_tmp("a,b,1\na,b\n");
        match ingest_csv(f.path(), &opts) {
            Err(GraphError::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("a,b,5\na,c,3\n");
        assert!(matches!(
            ingest_csv(f.path(), &opts),
            Err(GraphError::Decreasing { row: 2, .. })
        ));
        let f = write_tmp("a,b,1.5\n");
        assert!(matches!(
            ingest_csv(f.path(), &opts),
            Err(GraphError::MalformedRow { row: 1, .. })
        ));
        let f = write_tmp("a,b,-1\n");
        assert!(matches!(
            ingest_csv(f.path(), &opts),
            Err(GraphError::MalformedRow { .. })
        ));
        let f = write_tmp("");
        assert!(matches!(ingest_csv(f.path(), &opts), Err(GraphError::Empty)));
    }

    #[test]
    fn sort_option_is_stable() {
        let f = write_tmp("a,b,5\nc,d,3\ne,f,5\ng,h,3\n");
        let opts = IngestOptions {
            has_header: false,
            sort: true,
            ..Default::default()
        };
        let s = ingest_csv(f.path(), &opts).unwrap();
        let labels: Vec<_> = s
            .edges()
            .iter()
            .map(|e| s.node_map().label(e.src).unwrap().to_owned())
            .collect();
        assert_eq!(labels, ["c", "g", "a", "e"]);
    }

    #[test]
    fn split_index_arithmetic() {
        let s = uni(
            &(0..10).map(|i| (0, 1, i)).collect::<Vec<_>>(),
            2,
        );
        let s = chronological_split(s, 0.7, 0.15).unwrap();
        assert_eq!(s.split(), Split { train_end: 7, val_end: 8 });
        assert_eq!(s.test().len(), 2);

        // A tie at the validation boundary pulls the tied edge into validation.
        let mut edges: Vec<_> = (0..10).map(|i| (0, 1, i)).collect();
        edges[8].2 = 7;
        let s = chronological_split(uni(&edges, 2), 0.7, 0.15).unwrap();
        assert_eq!(s.split(), Split { train_end: 7, val_end: 9 });
    }

    #[test]
    fn split_all_tied_lands_in_train() {
        let s = uni(&vec![(0, 1, 0); 10], 2);
        let s = chronological_split(s, 0.7, 0.15).unwrap();
        assert_eq!(s.train().len(), 10);
        assert!(s.test().is_empty());
    }

    #[test]
    fn split_distinct_thousand() {
        let s = uni(&(0..1000).map(|i| (0, 1, i)).collect::<Vec<_>>(), 2);
        let s = chronological_split(s, 0.7, 0.15).unwrap();
        assert_eq!(s.split(), Split { train_end: 700, val_end: 850 });
    }

    #[test]
    fn split_rejects_bad_fractions() {
        for (t, v) in [(0.0, 0.1), (0.9, 0.1), (0.5, -0.1), (f64::NAN, 0.1)] {
            let s = uni(&[(0, 1, 0)], 2);
            assert!(matches!(
                chronological_split(s, t, v),
                Err(GraphError::InvalidFractions { .. })
            ));
        }
    }

    #[test]
    fn surprise_zero_when_test_repeats_train() {
        let s = uni(&[(0, 1, 0), (1, 2, 1), (0, 1, 2), (1, 2, 3)], 3)
            .with_split(Split { train_end: 2, val_end: 2 })
            .unwrap();
        assert_eq!(surprise_index(&s).unwrap(), 0.0);
        let s = uni(&[(0, 1, 0)], 2);
        assert!(matches!(surprise_index(&s), Err(GraphError::EmptyTestSet)));
    }

    #[test]
    fn single_edge_stats() {
        let s = uni(&[(0, 1, 5)], 2);
        let st = compute_stats(&s).unwrap();
        assert_eq!(st.num_nodes, 2);
        assert_eq!(st.num_edges, 1);
        assert_eq!(st.num_unique_edges, 1);
        assert_eq!(st.num_unique_steps, 1);
        assert_eq!(st.duration, (5, 5));
        assert_eq!(st.surprise, None);
    }

    #[test]
    fn from_edges_validates() {
        let r = EdgeStream::from_edges(
            vec![Edge::new(0, 5, 0)],
            NodeSpace::Unipartite { num_nodes: 2 },
        );
        assert!(matches!(r, Err(GraphError::NodeOutOfRange { .. })));
        let r = EdgeStream::from_edges(
            vec![Edge::new(0, 1, 3), Edge::new(0, 1, 2)],
            NodeSpace::Unipartite { num_nodes: 2 },
        );
        assert!(matches!(r, Err(GraphError::Unordered { index: 1 })));
        // Bipartite destinations must fall in the destination partition.
        let r = EdgeStream::from_edges(
            vec![Edge::new(0, 0, 0)],
            NodeSpace::Bipartite {
                num_sources: 1,
                num_destinations: 1,
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn with_split_rejects_straddling_tie() {
        let s = uni(&[(0, 1, 0), (0, 1, 1), (0, 1, 1)], 2);
        assert!(s.with_split(Split { train_end: 2, val_end: 3 }).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let f = write_tmp("a,X,0\nb,Y,36\nb,Y,77\nc,X,80\n");
        let opts = IngestOptions {
            bipartite: true,
            has_header: false,
            ..Default::default()
        };
        let s = chronological_split(ingest_csv(f.path(), &opts).unwrap(), 0.5, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        s.manifest(Some("x.csv")).write(&p).unwrap();
        let m = DatasetManifest::read(&p).unwrap();
        let again = m.apply(ingest_csv(f.path(), &opts).unwrap()).unwrap();
        assert_eq!(again, s);
    }
}
