//! Execution plans: labeled DAGs of ECall nodes assigned to enclaves.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::algebra::{self, Digest, Tag};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnclaveId(pub u32);

impl fmt::Display for EnclaveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: NodeId,
    pub tag: Tag,
    pub enclave: EnclaveId,
    /// Key into the function registry.
    pub function: String,
}

impl PlanNode {
    pub fn new(id: impl Into<String>, tag: Tag, enclave: u32, function: impl Into<String>) -> Self {
        PlanNode { id: NodeId::new(id), tag, enclave: EnclaveId(enclave), function: function.into() }
    }
}

pub type Edge = (NodeId, NodeId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeClass {
    SameEnclave,
    CrossEnclave,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("plan has no nodes")]
    EmptyPlan,
    #[error("node id {0} appears more than once")]
    DuplicateNodeId(NodeId),
    #[error("tag {tag} is shared by nodes {first} and {second}")]
    DuplicateTag { tag: Tag, first: NodeId, second: NodeId },
    #[error("edge {from} -> {to} references an unknown node")]
    DanglingEdge { from: NodeId, to: NodeId },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("edge {from} -> {to} appears more than once")]
    DuplicateEdge { from: NodeId, to: NodeId },
    #[error("plan contains a cycle through node {node}")]
    CyclicPlan { node: NodeId },
    #[error("node {node} is not connected to node {anchor}")]
    DisconnectedPlan { node: NodeId, anchor: NodeId },
    #[error("plan must have exactly one sink, found {}", fmt_ids(.sinks))]
    MultipleSinks { sinks: Vec<NodeId> },
}

fn fmt_ids(ids: &[NodeId]) -> String {
    ids.iter().map(NodeId::as_str).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("edge {from} -> {to} is not in the plan")]
    UnknownEdge { from: NodeId, to: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MutationError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("mutation yields an invalid plan: {0}")]
    MutationInvalid(ValidationError),
    #[error("mutation leaves the labeled plan unchanged")]
    Unchanged,
}

/// Attacker rewiring of a plan (the untrusted scheduler's view).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlanMutation {
    /// Exchange the tags and functions of two nodes, so each position runs
    /// the other's ECall.
    SwapTags { a: NodeId, b: NodeId },
    /// Redirect edge `from -> old_to` to `from -> new_to`.
    RewireEdge { from: NodeId, old_to: NodeId, new_to: NodeId },
    /// Remove a node, connecting its predecessors to its successors.
    DropNode { node: NodeId },
    /// Insert an extra invocation of `node`'s function directly after it.
    /// Tags are plan-unique, so the copy carries its own tag.
    DuplicateNode { node: NodeId, copy_id: NodeId, copy_tag: Tag },
}

/// Validates raw plan parts, reporting the first violated invariant.
pub fn validate(nodes: &[PlanNode], edges: &[Edge]) -> Result<(), ValidationError> {
    build(nodes.to_vec(), edges).map(|_| ())
}

/// A validated execution plan. Immutable once built.
///
/// Nodes are kept sorted by id, so index order is id order and every
/// adjacency list is ascending by id.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    nodes: Vec<PlanNode>,
    index: HashMap<NodeId, usize>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    order: Vec<usize>,
}

fn build(mut nodes: Vec<PlanNode>, edges: &[Edge]) -> Result<ExecutionPlan, ValidationError> {
    if nodes.is_empty() {
        return Err(ValidationError::EmptyPlan);
    }
    let mut seen_ids = HashSet::new();
    for n in &nodes {
        if !seen_ids.insert(&n.id) {
            return Err(ValidationError::DuplicateNodeId(n.id.clone()));
        }
    }
    let mut seen_tags: HashMap<Tag, &NodeId> = HashMap::new();
    for n in &nodes {
        if let Some(first) = seen_tags.insert(n.tag, &n.id) {
            return Err(ValidationError::DuplicateTag { tag: n.tag, first: first.clone(), second: n.id.clone() });
        }
    }

    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();

    let count = nodes.len();
    let mut preds = vec![Vec::new(); count];
    let mut succs = vec![Vec::new(); count];
    let mut seen_edges = HashSet::new();
    for (from, to) in edges {
        let (Some(&u), Some(&v)) = (index.get(from), index.get(to)) else {
            return Err(ValidationError::DanglingEdge { from: from.clone(), to: to.clone() });
        };
        if u == v {
            return Err(ValidationError::SelfLoop(from.clone()));
        }
        if !seen_edges.insert((u, v)) {
            return Err(ValidationError::DuplicateEdge { from: from.clone(), to: to.clone() });
        }
        succs[u].push(v);
        preds[v].push(u);
    }
    for list in preds.iter_mut().chain(succs.iter_mut()) {
        list.sort_unstable();
    }

    // Kahn's algorithm; the ready set is ordered so the smallest id wins ties.
    let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<usize> = (0..count).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(count);
    while let Some(u) = ready.pop_first() {
        order.push(u);
        for &v in &succs[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.insert(v);
            }
        }
    }
    if order.len() != count {
        let stuck = (0..count).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(ValidationError::CyclicPlan { node: nodes[stuck].id.clone() });
    }

    let mut reached = vec![false; count];
    let mut stack = vec![0usize];
    reached[0] = true;
    while let Some(u) = stack.pop() {
        for &v in succs[u].iter().chain(preds[u].iter()) {
            if !reached[v] {
                reached[v] = true;
                stack.push(v);
            }
        }
    }
    if let Some(lost) = reached.iter().position(|r| !r) {
        return Err(ValidationError::DisconnectedPlan { node: nodes[lost].id.clone(), anchor: nodes[0].id.clone() });
    }

    let sinks: Vec<NodeId> = (0..count).filter(|&i| succs[i].is_empty()).map(|i| nodes[i].id.clone()).collect();
    if sinks.len() != 1 {
        return Err(ValidationError::MultipleSinks { sinks });
    }

    Ok(ExecutionPlan { nodes, index, preds, succs, order })
}

/// Canonical hash-relevant form of a plan: the tag set and the edge set
/// expressed over tags, each edge carrying its enclave classification.
/// Two plans with equal labeled forms yield identical hash chains.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledDag {
    pub tags: BTreeSet<Tag>,
    pub edges: BTreeSet<(Tag, Tag, EdgeClass)>,
}

impl ExecutionPlan {
    pub fn new(nodes: Vec<PlanNode>, edges: Vec<Edge>) -> Result<Self, ValidationError> {
        build(nodes, &edges)
    }

    /// Re-checks the invariants; always `Ok` for a constructed plan.
    pub fn validate(&self) -> Result<(), ValidationError> {
        validate(&self.nodes, &self.edges())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn node(&self, id: &NodeId) -> Result<&PlanNode, PlanError> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn index_of(&self, id: &NodeId) -> Result<usize, PlanError> {
        self.index.get(id).copied().ok_or_else(|| PlanError::UnknownNode(id.clone()))
    }

    pub fn node_at(&self, idx: usize) -> &PlanNode {
        &self.nodes[idx]
    }

    /// Edges in ascending (from, to) order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (u, list) in self.succs.iter().enumerate() {
            for &v in list {
                out.push((self.nodes[u].id.clone(), self.nodes[v].id.clone()));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.succs.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, from: &NodeId, to: &NodeId) -> bool {
        match (self.index.get(from), self.index.get(to)) {
            (Some(&u), Some(&v)) => self.succs[u].binary_search(&v).is_ok(),
            _ => false,
        }
    }

    /// Predecessor indices of node `idx`, ascending by id.
    pub fn preds_of(&self, idx: usize) -> &[usize] {
        &self.preds[idx]
    }

    /// Successor indices of node `idx`, ascending by id.
    pub fn succs_of(&self, idx: usize) -> &[usize] {
        &self.succs[idx]
    }

    /// Topological order as node indices, ties broken by ascending id.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn topological_order(&self) -> Vec<NodeId> {
        self.order.iter().map(|&i| self.nodes[i].id.clone()).collect()
    }

    pub fn sink(&self) -> usize {
        // Exactly one sink exists; it is always last in topological order.
        *self.order.last().expect("plan is nonempty")
    }

    pub fn sources(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.preds[i].is_empty()).map(|i| self.nodes[i].id.clone()).collect()
    }

    pub fn enclaves(&self) -> BTreeSet<crate::plan::EnclaveId> {
        self.nodes.iter().map(|n| n.enclave).collect()
    }

    pub fn class_at(&self, u: usize, v: usize) -> EdgeClass {
        if self.nodes[u].enclave == self.nodes[v].enclave {
            EdgeClass::SameEnclave
        } else {
            EdgeClass::CrossEnclave
        }
    }

    pub fn edge_classify(&self, from: &NodeId, to: &NodeId) -> Result<EdgeClass, PlanError> {
        if !self.has_edge(from, to) {
            return Err(PlanError::UnknownEdge { from: from.clone(), to: to.clone() });
        }
        Ok(self.class_at(self.index[from], self.index[to]))
    }

    /// Edges whose endpoints sit in different enclaves.
    pub fn cross_edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (u, list) in self.succs.iter().enumerate() {
            for &v in list {
                if self.class_at(u, v) == EdgeClass::CrossEnclave {
                    out.push((self.nodes[u].id.clone(), self.nodes[v].id.clone()));
                }
            }
        }
        out
    }

    pub fn labeled(&self) -> LabeledDag {
        let tags = self.nodes.iter().map(|n| n.tag).collect();
        let mut edges = BTreeSet::new();
        for (u, list) in self.succs.iter().enumerate() {
            for &v in list {
                edges.insert((self.nodes[u].tag, self.nodes[v].tag, self.class_at(u, v)));
            }
        }
        LabeledDag { tags, edges }
    }

    /// SHA-256 over a canonical encoding of nodes (id, tag, enclave,
    /// function) and edges.
    pub fn fingerprint(&self) -> Digest {
        let mut buf = Vec::new();
        for n in &self.nodes {
            for field in [n.id.as_str().as_bytes(), n.function.as_bytes()] {
                buf.extend_from_slice(&(field.len() as u32).to_be_bytes());
                buf.extend_from_slice(field);
            }
            buf.extend_from_slice(n.tag.as_bytes());
            buf.extend_from_slice(&n.enclave.0.to_be_bytes());
        }
        for (u, list) in self.succs.iter().enumerate() {
            for &v in list {
                buf.extend_from_slice(&(u as u32).to_be_bytes());
                buf.extend_from_slice(&(v as u32).to_be_bytes());
            }
        }
        algebra::hash(&buf)
    }

    /// Applies `mutation`, returning the rewired plan. `self` is untouched.
    pub fn mutate(&self, mutation: &PlanMutation) -> Result<ExecutionPlan, MutationError> {
        let mut nodes = self.nodes.clone();
        let mut edges = self.edges();
        match mutation {
            PlanMutation::SwapTags { a, b } => {
                let ia = self.index_of(a)?;
                let ib = self.index_of(b)?;
                let (tag_a, fn_a) = (nodes[ia].tag, nodes[ia].function.clone());
                nodes[ia].tag = nodes[ib].tag;
                nodes[ia].function = std::mem::replace(&mut nodes[ib].function, fn_a);
                nodes[ib].tag = tag_a;
            }
            PlanMutation::RewireEdge { from, old_to, new_to } => {
                self.index_of(new_to)?;
                let pos = edges
                    .iter()
                    .position(|(f, t)| f == from && t == old_to)
                    .ok_or_else(|| PlanError::UnknownEdge { from: from.clone(), to: old_to.clone() })?;
                edges[pos].1 = new_to.clone();
            }
            PlanMutation::DropNode { node } => {
                let idx = self.index_of(node)?;
                nodes.remove(idx);
                edges.retain(|(f, t)| f != node && t != node);
                for &p in &self.preds[idx] {
                    for &s in &self.succs[idx] {
                        let e = (self.nodes[p].id.clone(), self.nodes[s].id.clone());
                        if !edges.contains(&e) {
                            edges.push(e);
                        }
                    }
                }
            }
            PlanMutation::DuplicateNode { node, copy_id, copy_tag } => {
                let idx = self.index_of(node)?;
                let mut copy = self.nodes[idx].clone();
                copy.id = copy_id.clone();
                copy.tag = *copy_tag;
                nodes.push(copy);
                for e in edges.iter_mut() {
                    if &e.0 == node {
                        e.0 = copy_id.clone();
                    }
                }
                edges.push((node.clone(), copy_id.clone()));
            }
        }
        let mutated = build(nodes, &edges).map_err(MutationError::MutationInvalid)?;
        if mutated.labeled() == self.labeled() {
            return Err(MutationError::Unchanged);
        }
        Ok(mutated)
    }
}

impl PartialEq for ExecutionPlan {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.succs == other.succs
    }
}

impl Eq for ExecutionPlan {}
