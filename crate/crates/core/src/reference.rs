//! The seven-function hybrid reference plan and its scaled variants.
//!
//! Topology: sources f1, f3, f4; f1→f2; f2, f3, f4→f5; f5→f6; f6→f7.
//! Enclave 1 holds f1, f2, f4, f5 and enclave 2 holds f3, f6, f7, so the
//! only cross-enclave edges are f3→f5 and f5→f6.

use crate::algebra::Tag;
use crate::plan::{Edge, ExecutionPlan, NodeId, PlanNode};

pub const HYBRID_REQUEST: &str = "hybrid";

const HYBRID_ENCLAVES: [u32; 7] = [1, 1, 2, 1, 1, 2, 2];
const HYBRID_EDGES: [(usize, usize); 6] = [(1, 2), (2, 5), (3, 5), (4, 5), (5, 6), (6, 7)];

fn hybrid_tag(block: u8, position: u8) -> Tag {
    Tag::from_bytes([0xf0, 0, 0, 0, 0, 0, block, position])
}

/// The reference plan with every node running `identity`.
pub fn hybrid_plan() -> ExecutionPlan {
    hybrid_plan_with("identity")
}

pub fn hybrid_plan_with(function: &str) -> ExecutionPlan {
    let nodes = (1..=7)
        .map(|i| PlanNode::new(format!("f{i}"), hybrid_tag(0, i as u8), HYBRID_ENCLAVES[i - 1], function))
        .collect();
    let edges =
        HYBRID_EDGES.iter().map(|&(a, b)| (NodeId::new(format!("f{a}")), NodeId::new(format!("f{b}")))).collect();
    ExecutionPlan::new(nodes, edges).expect("reference plan is valid")
}

/// `blocks` copies of the reference plan chained sink-to-first-source
/// (block k's f7 feeds block k+1's f1), giving `7 * blocks` nodes on two
/// enclaves.
pub fn scaled_hybrid_plan(blocks: usize, function: &str) -> ExecutionPlan {
    assert!((1..=255).contains(&blocks), "block count must be in 1..=255");
    let id = |b: usize, i: usize| NodeId::new(format!("b{b:03}f{i}"));
    let mut nodes = Vec::with_capacity(7 * blocks);
    let mut edges: Vec<Edge> = Vec::with_capacity(7 * blocks);
    for b in 0..blocks {
        for i in 1..=7 {
            nodes.push(PlanNode {
                id: id(b, i),
                tag: hybrid_tag(b as u8, i as u8),
                enclave: crate::plan::EnclaveId(HYBRID_ENCLAVES[i - 1]),
                function: function.to_owned(),
            });
        }
        edges.extend(HYBRID_EDGES.iter().map(|&(x, y)| (id(b, x), id(b, y))));
        if b > 0 {
            edges.push((id(b - 1, 7), id(b, 1)));
        }
    }
    ExecutionPlan::new(nodes, edges).expect("scaled reference plan is valid")
}
