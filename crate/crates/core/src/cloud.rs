//! Multi-enclave cloud simulator.
//!
//! Each enclave keeps its nodes' raw hash inputs and results in private
//! tables. Values for a successor in another enclave leave as a
//! [`BoundaryMessage`] carrying `hash(h) ⊕ hash(res)` and the result, and
//! cross the [`UntrustedChannel`], where a [`ChannelTap`] may rewrite them.

use std::collections::{BTreeMap, HashMap};
use std::hint::black_box;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::algebra::{Algebra, ChainValue, Counting, Digest, Nonce, Sha256Algebra};
use crate::cost::OpCounters;
use crate::plan::{EdgeClass, EnclaveId, ExecutionPlan, NodeId, PlanNode};
use crate::symbolic::Sym;
use crate::trace::{ExecutionTrace, InputCase, NodeTrace, OutputKind, Side};

/// An ECall business function: input payloads to one result payload.
pub type BusinessFn = Arc<dyn Fn(&[&[u8]]) -> Result<Vec<u8>, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("function {0:?} is already registered")]
    DuplicateName(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TapError {
    #[error("no message from node {0} has crossed the channel")]
    NoSuchMessage(NodeId),
    #[error("octet {index} is outside a {len}-octet payload")]
    OctetOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("node {node} is missing a contribution from {from}")]
    MissingContribution { node: NodeId, from: NodeId },
    #[error("node {node} has no hash-input contributions")]
    NoContributions { node: NodeId },
    #[error("function {function:?} for node {node} is not registered")]
    UnknownFunction { node: NodeId, function: String },
    #[error("business function failed at node {node}: {reason}")]
    FunctionFailure { node: NodeId, reason: String },
    #[error("enclave {reader} cannot read state of enclave {owner}")]
    IsolationViolation { reader: EnclaveId, owner: EnclaveId },
    #[error("untrusted channel: {0}")]
    Channel(#[from] TapError),
}

/// Name → business function table. Immutable once handed to executors.
#[derive(Clone, Default)]
pub struct FunctionRegistry {
    functions: BTreeMap<String, BusinessFn>,
}

impl std::fmt::Debug for FunctionRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.functions.keys()).finish()
    }
}

/// Number of iterations of each loop in the `busyloop_1M` workload.
pub const BUSYLOOP_SIDE: u64 = 1000;

fn joined(inputs: &[&[u8]]) -> Vec<u8> {
    inputs.concat()
}

/// A nested 1000×1000 loop, returning its inputs unchanged.
pub fn busyloop(inputs: &[&[u8]]) -> Vec<u8> {
    let mut acc = 0u64;
    for i in 0..BUSYLOOP_SIDE {
        for j in 0..BUSYLOOP_SIDE {
            acc = black_box(acc.wrapping_mul(6364136223846793005).wrapping_add(i ^ j));
        }
    }
    black_box(acc);
    joined(inputs)
}

impl FunctionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with:
    /// - `identity`: concatenation of the inputs (pass-through for one input)
    /// - `reverse`: the concatenated inputs, octets reversed
    /// - `digest`: SHA-256 of the concatenated inputs
    /// - `busyloop_1M`: `identity` after a nested 1000×1000 loop
    /// - `fail`: always fails
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        let builtins: [(&str, BusinessFn); 5] = [
            ("identity", Arc::new(|i: &[&[u8]]| Ok(joined(i)))),
            (
                "reverse",
                Arc::new(|i: &[&[u8]]| {
                    let mut v = joined(i);
                    v.reverse();
                    Ok(v)
                }),
            ),
            ("digest", Arc::new(|i: &[&[u8]]| Ok(crate::algebra::hash(&joined(i)).as_bytes().to_vec()))),
            ("busyloop_1M", Arc::new(|i: &[&[u8]]| Ok(busyloop(i)))),
            ("fail", Arc::new(|_: &[&[u8]]| Err("function raised".to_owned()))),
        ];
        for (name, f) in builtins {
            reg.functions.insert(name.to_owned(), f);
        }
        reg
    }

    pub fn register<F>(&mut self, name: impl Into<String>, f: F) -> Result<(), RegistryError>
    where
        F: Fn(&[&[u8]]) -> Result<Vec<u8>, String> + Send + Sync + 'static,
    {
        let name = name.into();
        if self.functions.contains_key(&name) {
            return Err(RegistryError::DuplicateName(name));
        }
        self.functions.insert(name, Arc::new(f));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BusinessFn> {
        self.functions.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }
}

/// A value in transit between enclaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMessage {
    pub from_node: NodeId,
    pub to_node: NodeId,
    /// `hash(h) ⊕ hash(res)` of the sender.
    pub chain: Digest,
    pub result: Vec<u8>,
}

/// Rewrites messages in the untrusted area.
pub trait TapHook: Send {
    /// Called once per delivery. `history` holds every message emitted so
    /// far in this run, as emitted.
    fn deliver(&mut self, msg: &mut BoundaryMessage, history: &[BoundaryMessage]) -> Result<(), TapError>;
}

/// Hook that leaves every message untouched.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityHook;

impl TapHook for IdentityHook {
    fn deliver(&mut self, _: &mut BoundaryMessage, _: &[BoundaryMessage]) -> Result<(), TapError> {
        Ok(())
    }
}

/// At most one hook per run; no hook means identity.
#[derive(Default)]
pub struct ChannelTap {
    hook: Option<Box<dyn TapHook>>,
}

impl ChannelTap {
    pub fn none() -> Self {
        ChannelTap { hook: None }
    }

    pub fn with_hook(hook: impl TapHook + 'static) -> Self {
        ChannelTap { hook: Some(Box::new(hook)) }
    }

    pub fn is_identity(&self) -> bool {
        self.hook.is_none()
    }
}

impl std::fmt::Debug for ChannelTap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelTap").field("hooked", &self.hook.is_some()).finish()
    }
}

/// The region outside every enclave.
#[derive(Debug)]
pub struct UntrustedChannel {
    in_flight: HashMap<(usize, usize), BoundaryMessage>,
    history: Vec<BoundaryMessage>,
    tap: ChannelTap,
}

impl UntrustedChannel {
    pub fn new(tap: ChannelTap) -> Self {
        UntrustedChannel { in_flight: HashMap::new(), history: Vec::new(), tap }
    }

    fn send(&mut self, edge: (usize, usize), msg: BoundaryMessage) {
        self.history.push(msg.clone());
        self.in_flight.insert(edge, msg);
    }

    fn receive(&mut self, edge: (usize, usize)) -> Option<Result<BoundaryMessage, TapError>> {
        let mut msg = self.in_flight.remove(&edge)?;
        if let Some(hook) = self.tap.hook.as_mut() {
            if let Err(e) = hook.deliver(&mut msg, &self.history) {
                return Some(Err(e));
            }
        }
        Some(Ok(msg))
    }

    /// Every message emitted during the run, in emission order.
    pub fn history(&self) -> &[BoundaryMessage] {
        &self.history
    }
}

type StoredEntry<'a> = (Option<&'a [u8]>, Option<&'a [u8]>);

/// One simulated enclave. Its tables are only reachable through
/// [`EnclaveSim::load`], which refuses readers from other enclaves.
#[derive(Debug)]
pub struct EnclaveSim {
    id: EnclaveId,
    chain: HashMap<usize, ChainValue>,
    results: HashMap<usize, Vec<u8>>,
}

impl EnclaveSim {
    fn new(id: EnclaveId) -> Self {
        EnclaveSim { id, chain: HashMap::new(), results: HashMap::new() }
    }

    pub fn id(&self) -> EnclaveId {
        self.id
    }

    fn store(&mut self, node: usize, h: Option<ChainValue>, result: Vec<u8>) {
        if let Some(h) = h {
            self.chain.insert(node, h);
        }
        self.results.insert(node, result);
    }

    /// `(h, result)` of `node`, for readers inside this enclave only.
    fn load(&self, reader: EnclaveId, node: usize) -> Result<StoredEntry<'_>, ExecError> {
        if reader != self.id {
            return Err(ExecError::IsolationViolation { reader, owner: self.id });
        }
        Ok((self.chain.get(&node).map(Vec::as_slice), self.results.get(&node).map(Vec::as_slice)))
    }
}

/// Builds `h` for a node from its gathered contributions: one contribution
/// `c` gives `c || tag`; several give `(c_1 + ... + c_m) || tag`.
pub fn compute_hash_input<A: Algebra>(
    alg: &A,
    node: &PlanNode,
    contributions: &[&[u8]],
) -> Result<ChainValue, ExecError> {
    match contributions {
        [] => Err(ExecError::NoContributions { node: node.id.clone() }),
        [single] => Ok(alg.concat(single, node.tag.as_bytes())),
        many => {
            let sum = alg.add(many);
            Ok(alg.concat(&sum, node.tag.as_bytes()))
        }
    }
}

/// What a node hands to one destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputValue {
    /// The raw `h`, kept inside the enclave for a same-enclave successor.
    Raw(ChainValue),
    /// `hash(h) ⊕ hash(res)` for a cross-enclave successor.
    Boundary(Digest),
    /// `hash(h)` of the terminal node.
    Final(Digest),
}

/// Output rule, applied per outgoing edge. An empty `successors` slice
/// means the node is terminal.
pub fn compute_hash_output<A: Algebra>(alg: &A, h: &[u8], res: &[u8], successors: &[EdgeClass]) -> Vec<OutputValue> {
    if successors.is_empty() {
        return vec![OutputValue::Final(alg.hash(h))];
    }
    successors
        .iter()
        .map(|class| match class {
            EdgeClass::SameEnclave => OutputValue::Raw(h.to_vec()),
            EdgeClass::CrossEnclave => {
                let hashed = alg.hash(h);
                let res_hash = alg.hash(res);
                OutputValue::Boundary(alg.xor(&hashed, &res_hash))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// When false, only the business functions run and no chain is kept.
    pub bookkeeping: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions { bookkeeping: true }
    }
}

#[derive(Debug, Clone)]
pub struct ExecOutput {
    /// The sink's result payload.
    pub result: Vec<u8>,
    /// Final chain digest; all zero when bookkeeping is off.
    pub hash_cloud: Digest,
    /// Absent when bookkeeping is off.
    pub trace: Option<ExecutionTrace>,
    pub counters: OpCounters,
    /// Number of messages that crossed the untrusted channel.
    pub boundary_messages: u64,
    /// Those messages as emitted, before any tap.
    pub channel_log: Vec<BoundaryMessage>,
    /// Wall time spent inside hash-chain bookkeeping.
    pub bookkeeping_time: Duration,
}

/// Runs `plan` over `data` with SHA-256 and default options.
pub fn execute_plan(
    plan: &ExecutionPlan,
    registry: &FunctionRegistry,
    data: &[u8],
    r: &Nonce,
    tap: ChannelTap,
) -> Result<ExecOutput, ExecError> {
    execute_plan_with(&Sha256Algebra, plan, registry, data, r, tap, ExecOptions::default())
}

pub fn execute_plan_with<A: Algebra>(
    alg: &A,
    plan: &ExecutionPlan,
    registry: &FunctionRegistry,
    data: &[u8],
    r: &Nonce,
    tap: ChannelTap,
    options: ExecOptions,
) -> Result<ExecOutput, ExecError> {
    let alg = Counting::new(alg);
    let mut enclaves: BTreeMap<EnclaveId, EnclaveSim> =
        plan.enclaves().into_iter().map(|e| (e, EnclaveSim::new(e))).collect();
    let mut channel = UntrustedChannel::new(tap);
    let mut traces = Vec::with_capacity(plan.len());
    let mut bookkeeping_time = Duration::ZERO;
    let mut hash_cloud = Digest::ZERO;
    let mut final_result = Vec::new();

    for &v in plan.order() {
        let node = plan.node_at(v);
        let function = registry
            .get(&node.function)
            .ok_or_else(|| ExecError::UnknownFunction { node: node.id.clone(), function: node.function.clone() })?;
        let preds = plan.preds_of(v);

        // Gather payloads and chain contributions, predecessors by id.
        let mut payloads: Vec<Vec<u8>> = Vec::with_capacity(preds.len().max(1));
        let mut received: Vec<(usize, BoundaryMessage)> = Vec::new();
        for &u in preds {
            let from = plan.node_at(u);
            let missing = || ExecError::MissingContribution { node: node.id.clone(), from: from.id.clone() };
            match plan.class_at(u, v) {
                EdgeClass::SameEnclave => {
                    let (_, res) = enclaves[&node.enclave].load(node.enclave, u)?;
                    payloads.push(res.ok_or_else(missing)?.to_vec());
                }
                EdgeClass::CrossEnclave => {
                    let msg = channel.receive((u, v)).ok_or_else(missing)??;
                    payloads.push(msg.result.clone());
                    received.push((u, msg));
                }
            }
        }
        if preds.is_empty() {
            payloads.push(data.to_vec());
        }

        let started = Instant::now();
        let input = if options.bookkeeping { Some(hash_input(&alg, plan, v, r, &enclaves, &received)?) } else { None };
        bookkeeping_time += started.elapsed();

        let views: Vec<&[u8]> = payloads.iter().map(Vec::as_slice).collect();
        let res = function(&views).map_err(|reason| ExecError::FunctionFailure { node: node.id.clone(), reason })?;

        let started = Instant::now();
        let succs = plan.succs_of(v);
        let classes: Vec<EdgeClass> = succs.iter().map(|&s| plan.class_at(v, s)).collect();
        let mut boundary = vec![Digest::ZERO; succs.len()];
        let mut stored_h = None;
        if let Some((h, case, h_sym)) = input {
            let outputs = compute_hash_output(&alg, &h, &res, &classes);
            let mut chain_out = None;
            for (slot, out) in outputs.into_iter().enumerate() {
                match out {
                    OutputValue::Final(d) => {
                        hash_cloud = d;
                        chain_out = Some(d.as_bytes().to_vec());
                    }
                    OutputValue::Boundary(d) => {
                        boundary[slot] = d;
                        chain_out.get_or_insert_with(|| d.as_bytes().to_vec());
                    }
                    OutputValue::Raw(raw) => {
                        stored_h.get_or_insert(raw);
                    }
                }
            }
            let output = output_kind(&classes);
            let out_sym = match output {
                OutputKind::Terminal => Sym::hash(h_sym.clone()),
                OutputKind::Forward => h_sym.clone(),
                OutputKind::Hashed { .. } => Sym::xor(Sym::hash(h_sym.clone()), Sym::hash(Sym::Res(node.id.clone()))),
            };
            traces.push(NodeTrace {
                node_id: node.id.clone(),
                enclave: node.enclave,
                case,
                output,
                chain_out: chain_out.unwrap_or_else(|| h.clone()),
                h,
                result: Some(res.clone()),
                h_sym,
                out_sym,
            });
        }
        bookkeeping_time += started.elapsed();

        for (slot, &s) in succs.iter().enumerate() {
            if classes[slot] == EdgeClass::CrossEnclave {
                channel.send(
                    (v, s),
                    BoundaryMessage {
                        from_node: node.id.clone(),
                        to_node: plan.node_at(s).id.clone(),
                        chain: boundary[slot],
                        result: res.clone(),
                    },
                );
            }
        }
        if succs.is_empty() {
            final_result = res.clone();
        }
        enclaves.get_mut(&node.enclave).expect("enclave table covers every node").store(v, stored_h, res);
    }

    let trace = options.bookkeeping.then(|| ExecutionTrace::new(Side::Cloud, traces, hash_cloud));
    Ok(ExecOutput {
        result: final_result,
        hash_cloud,
        trace,
        counters: alg.counters(),
        boundary_messages: channel.history().len() as u64,
        channel_log: channel.history,
        bookkeeping_time,
    })
}

fn hash_input<A: Algebra>(
    alg: &A,
    plan: &ExecutionPlan,
    v: usize,
    r: &Nonce,
    enclaves: &BTreeMap<EnclaveId, EnclaveSim>,
    received: &[(usize, BoundaryMessage)],
) -> Result<(ChainValue, InputCase, Sym), ExecError> {
    let node = plan.node_at(v);
    let preds = plan.preds_of(v);
    let mut owned: Vec<ChainValue> = Vec::with_capacity(preds.len());
    let mut syms = Vec::with_capacity(preds.len());
    let mut crosses = 0;
    for &u in preds {
        let from = plan.node_at(u);
        match plan.class_at(u, v) {
            EdgeClass::SameEnclave => {
                let (h, _) = enclaves[&node.enclave].load(node.enclave, u)?;
                let h =
                    h.ok_or_else(|| ExecError::MissingContribution { node: node.id.clone(), from: from.id.clone() })?;
                owned.push(h.to_vec());
                syms.push(Sym::Raw(from.id.clone()));
            }
            EdgeClass::CrossEnclave => {
                crosses += 1;
                let (_, msg) =
                    received.iter().find(|(p, _)| *p == u).expect("cross-enclave payload gathered before chain input");
                let res_hash = alg.hash(&msg.result);
                owned.push(alg.xor(&msg.chain, &res_hash).as_bytes().to_vec());
                syms.push(Sym::xor(Sym::Out(from.id.clone()), Sym::hash(Sym::ResRecv(from.id.clone()))));
            }
        }
    }
    let case = input_case(preds.len(), crosses);
    if preds.is_empty() {
        owned.push(r.as_bytes().to_vec());
        syms.push(Sym::Nonce);
    }
    let views: Vec<&[u8]> = owned.iter().map(Vec::as_slice).collect();
    let h = compute_hash_input(alg, node, &views)?;
    let combined = if syms.len() == 1 { syms.pop().expect("one contribution") } else { Sym::Sum(syms) };
    Ok((h, case, Sym::concat(combined, node.id.clone())))
}

pub(crate) fn input_case(preds: usize, crosses: usize) -> InputCase {
    match (preds, crosses) {
        (0, _) => InputCase::Initial,
        (1, 0) => InputCase::SameEnclave,
        (1, _) => InputCase::CrossEnclave,
        _ => InputCase::Merge,
    }
}

pub(crate) fn output_kind(classes: &[EdgeClass]) -> OutputKind {
    if classes.is_empty() {
        OutputKind::Terminal
    } else if classes.contains(&EdgeClass::CrossEnclave) {
        OutputKind::Hashed { also_raw: classes.contains(&EdgeClass::SameEnclave) }
    } else {
        OutputKind::Forward
    }
}
