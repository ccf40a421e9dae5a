use tgtext::graph::{Edge, EdgeStream, NodeSpace};
use tgtext::neighbors::NeighborIndex;
use tgtext::prompt::{
    build_background, build_examples, BatchContext, PromptConfig, SYSTEM_PROMPT, TG_PREAMBLE,
};

const SYSTEM: &str = "You are an expert temporal graph learning agent. Your task is to predict the next interaction (i.e. Destination Node) given the `Source Node' and `Timestamp'.";
const PREAMBLE: &str = "Description of the temporal graph is provided below, where each line is a tuple of (`Source Node`, `Destination Node`, `Timestamp`).";
const BACKGROUND: &str = "(0,8227,0), (1,8228,36), (1,8228,77), (2,8229,131)";
const EXAMPLE: &str = "`Source Node' 1 has the following past interactions: (1,8228,36), (1,8228,77). Please predict the most likely `Destination Node' for `Source Node' 1 at `Timestamp' 150. Answer: `Destination Node' is 8228.";
const QUERY: &str = "`Source Node' 1 has the following past interactions: (1,8228,36), (1,8228,77). Please predict the most likely `Destination Node' for `Source Node' 1 at `Timestamp' 217.";

fn toy_stream() -> EdgeStream {
    let edges = vec![
        Edge::new(0, 8227, 0),
        Edge::new(1, 8228, 36),
        Edge::new(1, 8228, 77),
        Edge::new(2, 8229, 131),
        Edge::new(1, 8228, 150),
        Edge::new(1, 8228, 217),
    ];
    EdgeStream::from_edges(
        edges,
        NodeSpace::Bipartite {
            num_sources: 8227,
            num_destinations: 1000,
        },
    )
    .unwrap()
}

fn index_before(stream: &EdgeStream, t: u64) -> NeighborIndex {
    let mut index = NeighborIndex::default();
    index.extend(stream.before(t)).unwrap();
    index
}

#[test]
fn fixed_texts() {
    assert_eq!(SYSTEM_PROMPT, SYSTEM);
    assert_eq!(TG_PREAMBLE, PREAMBLE);
}

#[test]
fn background_block() {
    let s = toy_stream();
    assert_eq!(build_background(&s, 150, 4), BACKGROUND);
}

#[test]
fn example_block() {
    let s = toy_stream();
    // The (1,8228,150) edge is the most recent one before a batch at 217.
    let index = index_before(&s, 217);
    assert_eq!(build_examples(&s, &index, 217, 1, 2), EXAMPLE);
}

#[test]
fn query_block_in_batch_starting_at_150() {
    let s = toy_stream();
    let config = PromptConfig {
        background_size: 4,
        shots: 0,
        ..Default::default()
    };
    let index = index_before(&s, 150);
    let ctx = BatchContext::build(&config, &s, &index, 150);
    let bundle = ctx.bundle(&config, &index, 5, 1, 217).unwrap();
    assert_eq!(bundle.background, BACKGROUND);
    assert_eq!(bundle.query, QUERY);
    assert_eq!(
        bundle.assembled,
        [SYSTEM, PREAMBLE, BACKGROUND, QUERY].join("\n")
    );
}

#[test]
fn full_prompt_layout() {
    let s = toy_stream();
    let config = PromptConfig {
        background_size: 4,
        shots: 1,
        ..Default::default()
    };
    let index = index_before(&s, 150);
    let mut ctx = BatchContext::build(&config, &s, &index, 150);
    ctx.examples = EXAMPLE.to_owned();
    let bundle = ctx.bundle(&config, &index, 5, 1, 217).unwrap();
    assert_eq!(
        bundle.assembled,
        [SYSTEM, PREAMBLE, BACKGROUND, EXAMPLE, QUERY].join("\n")
    );
    assert_eq!(bundle.user_message(), [PREAMBLE, BACKGROUND, EXAMPLE, QUERY].join("\n"));
}
