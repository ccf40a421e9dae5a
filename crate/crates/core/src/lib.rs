//! Temporal link prediction with chat-completion models.
//!
//! Recent graph structure is rendered as text (recent edges, solved examples,
//! and the query source's latest interactions), sent to a chat endpoint, and
//! the answer is scored against negative candidates under the streaming
//! protocol. EdgeBank baselines and an explanation-category analysis run over
//! the same queries.

pub mod eval;
pub mod explain;
pub mod graph;
pub mod llm;
pub mod mock;
pub mod negatives;
pub mod neighbors;
pub mod parse;
pub mod prompt;

pub use graph::{Edge, EdgeStream, NodeId, NodeSpace, Timestamp};

/// Sub-seed for one component, derived from the run seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in label.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
