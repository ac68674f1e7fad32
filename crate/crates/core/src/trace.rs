//! Per-node record of a hash-chain computation, for either side.

use std::collections::HashMap;

use serde::Serialize;

use crate::algebra::{ChainValue, Digest};
use crate::plan::{EnclaveId, NodeId};
use crate::symbolic::{self, Sym, SymbolTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Cloud,
    User,
}

/// How a node assembles its hash input from its predecessors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputCase {
    /// No predecessor: `r || tag`.
    Initial,
    /// One predecessor in the same enclave: `H_j || tag`.
    SameEnclave,
    /// One predecessor in another enclave.
    CrossEnclave,
    /// Several predecessors combined with `+`.
    Merge,
}

/// How a node publishes its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Last node of the plan: `H = hash(h)`.
    Terminal,
    /// Only same-enclave successors: `H = h`.
    Forward,
    /// At least one cross-enclave successor. `also_raw` is set when some
    /// successor shares the enclave and reads `h` directly.
    Hashed { also_raw: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeTrace {
    pub node_id: NodeId,
    pub enclave: EnclaveId,
    pub case: InputCase,
    pub output: OutputKind,
    /// Hash input `h_i`.
    pub h: ChainValue,
    /// Output `H_i`; for nodes with cross-enclave successors this is the
    /// value placed on the untrusted channel.
    pub chain_out: ChainValue,
    /// `res_i`; absent on the user side.
    pub result: Option<Vec<u8>>,
    pub h_sym: Sym,
    pub out_sym: Sym,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub side: Side,
    /// Nodes in execution (topological) order.
    pub nodes: Vec<NodeTrace>,
    pub final_digest: Digest,
    index: HashMap<NodeId, usize>,
}

/// Expanded formulas larger than this are not rendered.
pub const MAX_EXPANDED_LEN: usize = 1 << 20;

impl ExecutionTrace {
    pub(crate) fn new(side: Side, nodes: Vec<NodeTrace>, final_digest: Digest) -> Self {
        let index = nodes.iter().enumerate().map(|(i, n)| (n.node_id.clone(), i)).collect();
        ExecutionTrace { side, nodes, final_digest, index }
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeTrace> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    /// Per-node lines `H_<id> = <expr>` with predecessor references kept.
    /// Nodes that hash their output and also feed a same-enclave successor
    /// get an extra `h_<id>` line.
    pub fn listing(&self) -> Vec<(String, String)> {
        let mut lines = Vec::new();
        for n in &self.nodes {
            if let OutputKind::Hashed { also_raw: true } = n.output {
                lines.push((format!("h_{}", n.node_id), symbolic::render(&n.h_sym, self, false)));
            }
            let expr = match n.output {
                OutputKind::Forward => &n.h_sym,
                _ => &n.out_sym,
            };
            lines.push((format!("H_{}", n.node_id), symbolic::render(expr, self, false)));
        }
        lines
    }

    /// Closed formula of the final hash, or `None` when its expansion would
    /// exceed [`MAX_EXPANDED_LEN`] characters.
    pub fn final_expr(&self) -> Option<String> {
        let last = self.nodes.last()?;
        let mut memo = HashMap::new();
        if self.expanded_len(&last.out_sym, &mut memo) > MAX_EXPANDED_LEN {
            return None;
        }
        Some(symbolic::render(&last.out_sym, self, true))
    }

    // Upper estimate of the expanded length; saturates instead of overflowing.
    fn expanded_len(&self, sym: &Sym, memo: &mut HashMap<(bool, NodeId), usize>) -> usize {
        let sub = |s: &Sym, memo: &mut HashMap<(bool, NodeId), usize>| self.expanded_len(s, memo);
        match sym {
            Sym::Nonce => 1,
            Sym::Res(id) | Sym::ResRecv(id) => 6 + id.as_str().len(),
            Sym::Hash(inner) => sub(inner, memo).saturating_add(6),
            Sym::Concat(inner, id) => sub(inner, memo).saturating_add(8 + id.as_str().len()),
            Sym::Xor(a, b) => sub(a, memo).saturating_add(sub(b, memo)).saturating_add(9),
            Sym::Sum(terms) => terms.iter().fold(0usize, |acc, t| acc.saturating_add(sub(t, memo)).saturating_add(7)),
            Sym::Raw(id) | Sym::Out(id) => {
                let raw = matches!(sym, Sym::Raw(_));
                if let Some(&len) = memo.get(&(raw, id.clone())) {
                    return len;
                }
                let target = if raw { self.raw_expr(id) } else { self.out_expr(id) };
                let len = target.map_or(4, |t| sub(t, memo));
                memo.insert((raw, id.clone()), len);
                len
            }
        }
    }

    pub fn report(&self) -> TraceReport {
        TraceReport {
            side: self.side,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeReport {
                    node_id: n.node_id.to_string(),
                    enclave: n.enclave.0,
                    case: n.case,
                    h_hex: hex::encode(&n.h),
                    chain_out_hex: hex::encode(&n.chain_out),
                    result_hex: n.result.as_ref().map(hex::encode),
                    h_expr: symbolic::render(&n.h_sym, self, false),
                    out_expr: symbolic::render(&n.out_sym, self, false),
                })
                .collect(),
            final_hex: self.final_digest.to_hex(),
            final_expr: self.final_expr(),
        }
    }
}

impl SymbolTable for ExecutionTrace {
    fn raw_expr(&self, node: &NodeId) -> Option<&Sym> {
        self.node(node).map(|n| &n.h_sym)
    }

    fn out_expr(&self, node: &NodeId) -> Option<&Sym> {
        self.node(node).map(|n| &n.out_sym)
    }

    fn raw_is_output(&self, node: &NodeId) -> bool {
        self.node(node).is_some_and(|n| n.output == OutputKind::Forward)
    }
}

/// Serializable view of a trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    pub side: Side,
    pub nodes: Vec<NodeReport>,
    pub final_hex: String,
    pub final_expr: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeReport {
    pub node_id: String,
    pub enclave: u32,
    pub case: InputCase,
    pub h_hex: String,
    pub chain_out_hex: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_hex: Option<String>,
    pub h_expr: String,
    pub out_expr: String,
}
