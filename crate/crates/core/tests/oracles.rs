//! Library behavior checked against small independent reference implementations.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::Range;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tgtext::eval::{self, EdgeBankWindow, EvalConfig, PredictionRecord};
use tgtext::explain::{aggregate_report, ExplanationCategory, ExplanationRecord};
use tgtext::graph::{chronological_split, Edge, EdgeStream, NodeId, NodeSpace};
use tgtext::llm::LlmClient;
use tgtext::mock::{MockOracle, MockTransport};
use tgtext::negatives::{HistoricalPool, LinkQuery, NegativeConfig, NegativeSampler};
use tgtext::neighbors::{khop_bruteforce, Direction, NeighborIndex};
use tgtext::prompt::PromptConfig;

fn random_stream(seed: u64, max_edges: usize, max_nodes: u64, bipartite: bool) -> EdgeStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(60..=max_edges);
    let space = if bipartite {
        let s = rng.gen_range(3..=max_nodes / 2);
        NodeSpace::Bipartite {
            num_sources: s,
            num_destinations: rng.gen_range(25..=(max_nodes - s).max(26)),
        }
    } else {
        NodeSpace::Unipartite {
            num_nodes: rng.gen_range(25..=max_nodes),
        }
    };
    let (src_range, dst_range) = match space {
        NodeSpace::Bipartite { num_sources, .. } => (0..num_sources, space.destination_range()),
        NodeSpace::Unipartite { num_nodes } => (0..num_nodes, 0..num_nodes),
    };
    // A few sticky pairs so that history matters.
    let mut ts = 0;
    let mut edges = Vec::with_capacity(len);
    for _ in 0..len {
        ts += rng.gen_range(0..4u64);
        let src = rng.gen_range(src_range.clone());
        let dst = if rng.gen_bool(0.5) {
            dst_range.start + (src * 7) % (dst_range.end - dst_range.start)
        } else {
            rng.gen_range(dst_range.clone())
        };
        edges.push(Edge::new(src, dst, ts));
    }
    let stream = EdgeStream::from_edges(edges, space).unwrap();
    chronological_split(stream, 0.7, 0.15).unwrap()
}

/// Batches written out independently of the library.
fn oracle_batches(stream: &EdgeStream, size: usize) -> Vec<Range<usize>> {
    let edges = stream.edges();
    let mut out = Vec::new();
    let mut i = stream.split().val_end;
    while i < edges.len() {
        let mut j = (i + size).min(edges.len());
        while j < edges.len() && edges[j].ts == edges[j - 1].ts {
            j += 1;
        }
        out.push(i..j);
        i = j;
    }
    out
}

fn sampler(stream: &EdgeStream, seed: u64) -> NegativeSampler {
    NegativeSampler::new(
        stream,
        NegativeConfig {
            n: 20,
            seed,
            pool: HistoricalPool::SourceConditioned,
        },
    )
    .unwrap()
}

fn mock_client(oracle: MockOracle, stream: &EdgeStream, parallel: usize) -> LlmClient {
    LlmClient::new(Arc::new(MockTransport::new(oracle, stream))).with_max_parallel(parallel)
}

fn small_eval_config() -> EvalConfig {
    EvalConfig {
        prompt: PromptConfig {
            background_size: 20,
            shots: 3,
            neighbors: 3,
            batch_size: 7,
            ..Default::default()
        },
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn recent_neighbors_match_filter_suffix(seed in any::<u64>(), directed in any::<bool>()) {
        let s = random_stream(seed, 300, 40, false);
        let direction = if directed { Direction::Directed } else { Direction::Bidirectional };
        let mut index = NeighborIndex::new(direction);
        index.extend(s.edges()).unwrap();
        let mut times: Vec<u64> = s.edges().iter().map(|e| e.ts).collect();
        times.dedup();
        times.push(times.last().unwrap() + 1);
        for u in 0..s.space().num_nodes() {
            let incident: Vec<(NodeId, u64)> = s
                .edges()
                .iter()
                .filter_map(|e| {
                    if e.src == u {
                        Some((e.dst, e.ts))
                    } else if e.dst == u && !directed {
                        Some((e.src, e.ts))
                    } else {
                        None
                    }
                })
                .collect();
            for &t in &times {
                let before: Vec<_> = incident.iter().copied().filter(|&(_, ts)| ts < t).collect();
                for m in [0usize, 1, 2, 5, 10] {
                    let expect = &before[before.len().saturating_sub(m)..];
                    let got: Vec<_> = index.recent_neighbors(u, t, m).iter().map(|i| (i.neighbor, i.ts)).collect();
                    prop_assert_eq!(got.as_slice(), expect);
                }
            }
        }
    }

    #[test]
    fn khop_matches_adjacency_power(seed in any::<u64>()) {
        let s = random_stream(seed, 200, 30, false);
        let n = s.space().num_nodes() as usize;
        let t = s.edges()[s.len() / 2].ts + 1;
        let mut a = vec![vec![0u64; n]; n];
        for e in s.before(t) {
            a[e.src as usize][e.dst as usize] = 1;
            a[e.dst as usize][e.src as usize] = 1;
        }
        let mul = |x: &Vec<Vec<u64>>, y: &Vec<Vec<u64>>| {
            let mut z = vec![vec![0u64; n]; n];
            for i in 0..n {
                for k in 0..n {
                    if x[i][k] != 0 {
                        for j in 0..n {
                            z[i][j] = (z[i][j] + x[i][k] * y[k][j]).min(1);
                        }
                    }
                }
            }
            z
        };
        let mut power = a.clone();
        for k in 1..=3 {
            for u in 0..n {
                let expect: BTreeSet<NodeId> = (0..n).filter(|&v| power[u][v] != 0).map(|v| v as NodeId).collect();
                prop_assert_eq!(khop_bruteforce(&s, u as NodeId, t, k).unwrap(), expect);
            }
            power = mul(&power, &a);
        }
    }

    #[test]
    fn negatives_match_reference(seed in any::<u64>(), bipartite in any::<bool>(), neg_seed in any::<u64>()) {
        let s = random_stream(seed, 300, 60, bipartite);
        let sampler = sampler(&s, neg_seed);
        let dst_range = s.space().destination_range();
        let mut by_source: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
        for e in s.train() {
            by_source.entry(e.src).or_default().insert(e.dst);
        }
        for i in s.test_range() {
            let q = LinkQuery::from_edge(i, &s.edges()[i]);
            let got = sampler.generate(&q);

            let mut rng = ChaCha8Rng::seed_from_u64(neg_seed);
            rng.set_stream(q.query_id);
            let mut pool: Vec<NodeId> = by_source
                .get(&q.src)
                .map(|p| p.iter().copied().filter(|&d| d != q.dst).collect())
                .unwrap_or_default();
            let take = 10.min(pool.len());
            for k in 0..take {
                let j = rng.gen_range(k..pool.len());
                pool.swap(k, j);
            }
            pool.truncate(take);
            let mut expect = pool;
            while expect.len() < 20 {
                let d = rng.gen_range(dst_range.clone());
                if d != q.dst && !expect.contains(&d) {
                    expect.push(d);
                }
            }
            prop_assert_eq!(&got.candidates, &expect);
            prop_assert_eq!(got.historical_count, take);
            prop_assert!(!got.candidates.contains(&q.dst));
            prop_assert!(got.candidates.iter().all(|d| dst_range.contains(d)));
        }
    }

    #[test]
    fn edgebank_matches_prefix_rescan(seed in any::<u64>(), w in 0u64..60, batch in 1usize..30) {
        let s = random_stream(seed, 300, 60, seed % 2 == 0);
        let sampler = sampler(&s, seed);
        let edges = s.edges();
        for window in [EdgeBankWindow::Unlimited, EdgeBankWindow::Window(w)] {
            let out = eval::run_edgebank(&s, window, batch, None, &sampler).unwrap();
            let mut records = out.records.iter();
            for b in oracle_batches(&s, batch) {
                let seen = &edges[..b.start];
                for i in b {
                    let q = edges[i];
                    let score = |d: NodeId| {
                        seen.iter().any(|e| {
                            e.src == q.src
                                && e.dst == d
                                && match window {
                                    EdgeBankWindow::Unlimited => true,
                                    EdgeBankWindow::Window(w) => e.ts + w > q.ts,
                                }
                        })
                    };
                    let r = records.next().unwrap();
                    let pos = score(q.dst);
                    let higher = r.candidates.iter().filter(|&&d| score(d) && !pos).count();
                    let tied = r.candidates.iter().filter(|&&d| score(d) == pos).count();
                    let expect = 1.0 / (1.0 + higher as f64 + tied as f64 / 2.0);
                    prop_assert_eq!(r.query_id, i as u64);
                    prop_assert_eq!(r.reciprocal_rank, expect);
                }
            }
            prop_assert!(records.next().is_none());
        }
    }

    #[test]
    fn recency_mock_matches_standalone_oracle(seed in any::<u64>()) {
        let s = random_stream(seed, 250, 50, seed % 3 == 0);
        let config = small_eval_config();
        let out = eval::run_eval(&s, &config, &mock_client(MockOracle::Recency, &s, 4), &sampler(&s, 1)).unwrap();
        let edges = s.edges();
        let mut records = out.records.iter();
        for b in oracle_batches(&s, config.prompt.batch_size) {
            let t0 = edges[b.start].ts;
            for i in b {
                let q = edges[i];
                let cutoff = t0.min(q.ts);
                let last = edges
                    .iter()
                    .rev()
                    .find(|e| e.ts < cutoff && (e.src == q.src || e.dst == q.src))
                    .map(|e| if e.src == q.src { e.dst } else { e.src });
                let expect = if last == Some(q.dst) { 1.0 } else { 0.0 };
                prop_assert_eq!(records.next().unwrap().reciprocal_rank, expect);
            }
        }
    }

    #[test]
    fn metric_endpoints(seed in any::<u64>()) {
        let s = random_stream(seed, 200, 50, seed % 2 == 1);
        let config = small_eval_config();
        let sampler = sampler(&s, seed);
        let perfect = eval::run_eval(&s, &config, &mock_client(MockOracle::Perfect, &s, 3), &sampler).unwrap();
        prop_assert_eq!(perfect.summary.mrr, 1.0);
        let wrong = eval::run_eval(&s, &config, &mock_client(MockOracle::AlwaysWrong, &s, 3), &sampler).unwrap();
        prop_assert_eq!(wrong.summary.mrr, 0.0);
        for r in perfect.records.iter().chain(&wrong.records) {
            // Prompted runs produce 0 or 1/k.
            prop_assert!(r.reciprocal_rank == 0.0 || (1.0 / r.reciprocal_rank).fract() == 0.0);
        }
    }

    #[test]
    fn future_edges_never_reach_prompts(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let s = random_stream(seed, 250, 50, seed % 2 == 0);
        let config = small_eval_config();
        let batches = oracle_batches(&s, config.prompt.batch_size);
        let batch = batches[pick.index(batches.len())].clone();
        let before = eval::replay_bundles(&s, &config).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let mut edges = s.edges().to_vec();
        let dst_range = s.space().destination_range();
        let src_end = match s.space() {
            NodeSpace::Bipartite { num_sources, .. } => num_sources,
            NodeSpace::Unipartite { num_nodes } => num_nodes,
        };
        for (i, e) in edges.iter_mut().enumerate().skip(batch.start) {
            e.dst = rng.gen_range(dst_range.clone());
            if i >= batch.end {
                e.src = rng.gen_range(0..src_end);
            }
        }
        let mutated = EdgeStream::from_edges(edges, s.space()).unwrap().with_split(s.split()).unwrap();
        let after = eval::replay_bundles(&mutated, &config).unwrap();
        let in_batch = |b: &&tgtext::prompt::PromptBundle| batch.contains(&(b.query_id as usize));
        let x: Vec<_> = before.iter().filter(in_batch).collect();
        let y: Vec<_> = after.iter().filter(in_batch).collect();
        prop_assert_eq!(x.len(), batch.len());
        prop_assert_eq!(x, y);
    }
}

#[test]
fn runs_are_deterministic_across_parallelism() {
    let s = random_stream(11, 400, 60, true);
    let config = small_eval_config();
    let a = eval::run_eval(&s, &config, &mock_client(MockOracle::Frequency, &s, 1), &sampler(&s, 5)).unwrap();
    let b = eval::run_eval(&s, &config, &mock_client(MockOracle::Frequency, &s, 8), &sampler(&s, 5)).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.negatives, b.negatives);
    let c = eval::run_eval(&s, &config, &mock_client(MockOracle::Frequency, &s, 8), &sampler(&s, 6)).unwrap();
    assert_ne!(a.negatives, c.negatives);
}

#[test]
fn report_matches_group_by() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let preds: Vec<PredictionRecord> = (0..500)
        .map(|i| PredictionRecord {
            query_id: i,
            reciprocal_rank: match rng.gen_range(0..4) {
                0 => 0.0,
                k => 1.0 / k as f64,
            },
            ..Default::default()
        })
        .collect();
    // Leave one category empty.
    let used = &ExplanationCategory::ALL[..9];
    let mut expls: Vec<ExplanationRecord> = preds
        .iter()
        .filter_map(|p| {
            rng.gen_bool(0.9).then(|| ExplanationRecord {
                query_id: p.query_id,
                explanation_text: String::new(),
                category: used[rng.gen_range(0..used.len())],
                proposed_new_category: None,
                classifier_model: "test".into(),
                classifier_output: String::new(),
            })
        })
        .collect();
    let report = aggregate_report(&preds, &expls).unwrap();

    let rr: HashMap<u64, f64> = preds.iter().map(|p| (p.query_id, p.reciprocal_rank)).collect();
    let mut groups: HashMap<ExplanationCategory, Vec<f64>> = HashMap::new();
    for e in &expls {
        groups.entry(e.category).or_default().push(rr[&e.query_id]);
    }
    assert_eq!(report.classified, expls.len());
    for row in &report.categories {
        match groups.get(&row.category) {
            Some(v) => {
                assert_eq!(row.count, v.len());
                assert!((row.fraction - v.len() as f64 / expls.len() as f64).abs() < 1e-12);
                let mrr = v.iter().sum::<f64>() / v.len() as f64;
                assert!((row.mrr.unwrap() - mrr).abs() < 1e-12);
            }
            None => {
                assert_eq!(row.count, 0);
                assert_eq!(row.mrr, None);
            }
        }
    }
    let sum: f64 = report.categories.iter().map(|r| r.fraction).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    let weighted: f64 = report
        .categories
        .iter()
        .filter_map(|r| r.mrr.map(|m| m * r.count as f64))
        .sum::<f64>()
        / report.classified as f64;
    assert!((weighted - report.overall_mrr.unwrap()).abs() < 1e-9);
    assert!(!report.to_csv().contains(ExplanationCategory::ALL[9].label()));

    expls.reverse();
    assert_eq!(aggregate_report(&preds, &expls).unwrap(), report);
}

#[test]
fn surprise_matches_pair_set_recount() {
    for seed in 0..20 {
        let s = random_stream(seed, 500, 60, seed % 2 == 0);
        let train: HashSet<(NodeId, NodeId)> = s.train().iter().map(|e| (e.src, e.dst)).collect();
        let unseen = s.test().iter().filter(|e| !train.contains(&(e.src, e.dst))).count();
        let stats = tgtext::graph::compute_stats(&s).unwrap();
        assert_eq!(stats.surprise, Some(unseen as f64 / s.test().len() as f64));
    }
}
