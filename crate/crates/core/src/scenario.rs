//! Scenario files and generated plan corpora.
//!
//! A scenario is JSON:
//!
//! ```json
//! {
//!   "seed": 7,
//!   "request": "hybrid",
//!   "data_hex": "48656c6c6f",
//!   "enclaves": [1, 2],
//!   "nodes": [{"id": "f1", "tag": "f000000000000001", "enclave": 1, "function": "identity"}],
//!   "edges": [["f1", "f2"]],
//!   "attacks": []
//! }
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackSpec, Workload};
use crate::cloud::FunctionRegistry;
use crate::plan::{Edge, ExecutionPlan, NodeId, PlanNode, ValidationError};
use crate::reference;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}, at `{field}`: {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("`{field}` is not valid hex")]
    BadHex { field: String },
    #[error("invalid plan: {0}")]
    InvalidPlan(#[from] ValidationError),
    #[error("enclave list {listed:?} does not match the enclaves used by nodes {used:?}")]
    EnclaveMismatch { listed: Vec<u32>, used: Vec<u32> },
    #[error("node {node} uses unregistered function {function:?}")]
    UnknownFunction { node: NodeId, function: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    request: String,
    data_hex: String,
    enclaves: Vec<u32>,
    nodes: Vec<PlanNode>,
    edges: Vec<Edge>,
    #[serde(default)]
    attacks: Vec<AttackSpec>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub plan: ExecutionPlan,
    pub request_id: String,
    pub data: Vec<u8>,
    pub attacks: Vec<AttackSpec>,
    /// Fixes keys, nonces and generated attacks when present.
    pub seed: Option<u64>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse { line: inner.line(), column: inner.column(), field, message: inner.to_string() }
        })?;
        let data = hex::decode(file.data_hex.trim()).map_err(|_| ScenarioError::BadHex { field: "data_hex".into() })?;
        let plan = ExecutionPlan::new(file.nodes, file.edges)?;

        let mut listed = file.enclaves;
        listed.sort_unstable();
        listed.dedup();
        let used: Vec<u32> = plan.enclaves().into_iter().map(|e| e.0).collect();
        if listed != used {
            return Err(ScenarioError::EnclaveMismatch { listed, used });
        }
        Ok(Scenario { plan, request_id: file.request, data, attacks: file.attacks, seed: file.seed })
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Scenario::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            seed: self.seed,
            request: self.request_id.clone(),
            data_hex: hex::encode(&self.data),
            enclaves: self.plan.enclaves().into_iter().map(|e| e.0).collect(),
            nodes: self.plan.nodes().to_vec(),
            edges: self.plan.edges(),
            attacks: self.attacks.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serializes")
    }

    /// The reference hybrid plan on a short input, unattacked.
    pub fn reference() -> Scenario {
        Scenario {
            plan: reference::hybrid_plan(),
            request_id: reference::HYBRID_REQUEST.into(),
            data: b"reference input".to_vec(),
            attacks: Vec::new(),
            seed: Some(1),
        }
    }

    /// Checks that every node's function exists in `functions`.
    pub fn workload(&self, functions: FunctionRegistry) -> Result<Workload, ScenarioError> {
        if let Some(n) = self.plan.nodes().iter().find(|n| !functions.contains(&n.function)) {
            return Err(ScenarioError::UnknownFunction { node: n.id.clone(), function: n.function.clone() });
        }
        Ok(Workload {
            plan: self.plan.clone(),
            request_id: self.request_id.clone(),
            data: self.data.clone(),
            functions,
        })
    }
}

/// Bounds for [`random_plan`].
#[derive(Debug, Clone, Copy)]
pub struct PlanShape {
    pub max_nodes: usize,
    pub max_enclaves: u32,
    pub max_in_degree: usize,
}

impl Default for PlanShape {
    fn default() -> Self {
        PlanShape { max_nodes: 50, max_enclaves: 7, max_in_degree: 5 }
    }
}

/// A random valid plan within `shape`.
///
/// Nodes are created in a hidden topological order. Each new node takes
/// the one pending node without a successor as a predecessor, plus random
/// earlier nodes, which keeps a single sink and connectivity. Ids are a
/// shuffled labelling so id order and execution order differ. Merge nodes
/// run `digest` so payloads stay small.
pub fn random_plan<R: Rng>(rng: &mut R, shape: PlanShape) -> ExecutionPlan {
    assert!(shape.max_nodes >= 1 && shape.max_enclaves >= 1 && shape.max_in_degree >= 1);
    let n = rng.gen_range(1..=shape.max_nodes);
    let enclaves = rng.gen_range(1..=shape.max_enclaves);
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    let id = |i: usize| NodeId::new(format!("n{:02}", labels[i]));

    let mut edges = Vec::new();
    let mut in_degree = vec![0usize; n];
    let mut pending = 0usize;
    for (v, degree) in in_degree.iter_mut().enumerate().skip(1) {
        let k = rng.gen_range(1..=shape.max_in_degree.min(v));
        let mut preds = vec![pending];
        let others: Vec<usize> = (0..v).filter(|&u| u != pending).collect();
        preds.extend(others.choose_multiple(rng, k - 1).copied());
        for &u in &preds {
            edges.push((id(u), id(v)));
        }
        *degree = preds.len();
        pending = v;
    }

    let mut tags = std::collections::HashSet::new();
    let nodes = (0..n)
        .map(|i| {
            let tag = loop {
                let t = crate::algebra::Tag::random(rng);
                if tags.insert(t) {
                    break t;
                }
            };
            let function = if in_degree[i] > 1 {
                "digest"
            } else {
                *["identity", "reverse", "digest"].choose(rng).expect("non-empty")
            };
            PlanNode::new(id(i).as_str(), tag, rng.gen_range(1..=enclaves), function)
        })
        .collect();
    ExecutionPlan::new(nodes, edges).expect("generator builds valid plans")
}

/// A random plan with 1 to 64 random input octets.
pub fn random_workload<R: Rng>(rng: &mut R, shape: PlanShape) -> Workload {
    let plan = random_plan(rng, shape);
    let len = rng.gen_range(1..=64);
    let data = (0..len).map(|_| rng.gen()).collect();
    Workload { plan, request_id: "generated".into(), data, functions: FunctionRegistry::with_builtins() }
}
