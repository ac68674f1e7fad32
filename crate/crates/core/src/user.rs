//! User-side recomputation of the plan hash from `(plan, r)` alone, and
//! the final accept/reject decision.
//!
//! The user never sees results. Where the cloud sends
//! `hash(h) ⊕ hash(res)` across an enclave boundary and the receiver XORs
//! `hash(res')` back out, the user just uses `hash(h)`; for honest runs
//! both sides therefore arrive at the same digest.

use std::collections::HashMap;

use serde::Serialize;

use crate::algebra::{Algebra, ChainValue, Counting, Digest, Nonce, Sha256Algebra};
use crate::cloud::{input_case, output_kind};
use crate::cost::OpCounters;
use crate::plan::{EdgeClass, ExecutionPlan};
use crate::symbolic::Sym;
use crate::trace::{ExecutionTrace, NodeTrace, OutputKind, Side};

/// Per-node chain values mirrored from the cloud, minus result terms.
/// Each entry is written exactly once.
#[derive(Debug, Default)]
pub struct UserChainState {
    raw: HashMap<usize, ChainValue>,
    across: HashMap<(usize, usize), Digest>,
}

impl UserChainState {
    fn put_raw(&mut self, node: usize, h: ChainValue) {
        let previous = self.raw.insert(node, h);
        assert!(previous.is_none(), "user chain entry written twice");
    }

    fn put_across(&mut self, edge: (usize, usize), d: Digest) {
        let previous = self.across.insert(edge, d);
        assert!(previous.is_none(), "user chain edge written twice");
    }
}

#[derive(Debug, Clone)]
pub struct UserHash {
    pub hash_user: Digest,
    pub trace: ExecutionTrace,
    pub counters: OpCounters,
}

pub fn compute_user_hash(plan: &ExecutionPlan, r: &Nonce) -> UserHash {
    compute_user_hash_with(&Sha256Algebra, plan, r)
}

pub fn compute_user_hash_with<A: Algebra>(alg: &A, plan: &ExecutionPlan, r: &Nonce) -> UserHash {
    let alg = Counting::new(alg);
    let mut state = UserChainState::default();
    let mut traces = Vec::with_capacity(plan.len());
    let mut hash_user = Digest::ZERO;

    for &v in plan.order() {
        let node = plan.node_at(v);
        let preds = plan.preds_of(v);
        let mut contributions: Vec<&[u8]> = Vec::with_capacity(preds.len().max(1));
        let mut syms = Vec::with_capacity(preds.len().max(1));
        let mut crosses = 0;
        for &u in preds {
            let from = &plan.node_at(u).id;
            match plan.class_at(u, v) {
                EdgeClass::SameEnclave => {
                    contributions.push(&state.raw[&u]);
                    syms.push(Sym::Raw(from.clone()));
                }
                EdgeClass::CrossEnclave => {
                    crosses += 1;
                    contributions.push(state.across[&(u, v)].as_bytes());
                    syms.push(Sym::Out(from.clone()));
                }
            }
        }
        if preds.is_empty() {
            contributions.push(r.as_bytes());
            syms.push(Sym::Nonce);
        }

        let h = match contributions.as_slice() {
            [single] => alg.concat(single, node.tag.as_bytes()),
            many => {
                let sum = alg.add(many);
                alg.concat(&sum, node.tag.as_bytes())
            }
        };
        let combined = if syms.len() == 1 { syms.pop().expect("one contribution") } else { Sym::Sum(syms) };
        let h_sym = Sym::concat(combined, node.id.clone());

        let succs = plan.succs_of(v);
        let classes: Vec<EdgeClass> = succs.iter().map(|&s| plan.class_at(v, s)).collect();
        let output = output_kind(&classes);
        let mut chain_out = None;
        if succs.is_empty() {
            hash_user = alg.hash(&h);
            chain_out = Some(hash_user.as_bytes().to_vec());
        }
        for (&s, class) in succs.iter().zip(&classes) {
            if *class == EdgeClass::CrossEnclave {
                let d = alg.hash(&h);
                chain_out.get_or_insert_with(|| d.as_bytes().to_vec());
                state.put_across((v, s), d);
            }
        }
        let out_sym = match output {
            OutputKind::Forward => h_sym.clone(),
            _ => Sym::hash(h_sym.clone()),
        };
        traces.push(NodeTrace {
            node_id: node.id.clone(),
            enclave: node.enclave,
            case: input_case(preds.len(), crosses),
            output,
            chain_out: chain_out.unwrap_or_else(|| h.clone()),
            h: h.clone(),
            result: None,
            h_sym,
            out_sym,
        });
        if classes.contains(&EdgeClass::SameEnclave) {
            state.put_raw(v, h);
        }
    }

    UserHash { hash_user, trace: ExecutionTrace::new(Side::User, traces, hash_user), counters: alg.counters() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadSignature,
    HashMismatch,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::BadSignature => "BadSignature",
            RejectReason::HashMismatch => "HashMismatch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "verdict", content = "reason")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Accept => f.write_str("Accept"),
            Verdict::Reject(reason) => write!(f, "Reject({reason})"),
        }
    }
}

/// Accepts iff the signature checked out and the digests agree. The
/// signature is judged first.
pub fn verify(expected: &Digest, received_hash: &Digest, _received_result: &[u8], sig_ok: bool) -> Verdict {
    if !sig_ok {
        Verdict::Reject(RejectReason::BadSignature)
    } else if expected != received_hash {
        Verdict::Reject(RejectReason::HashMismatch)
    } else {
        Verdict::Accept
    }
}

/// Outcome of verifying one response.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub expected_hex: String,
    pub received_hex: String,
    pub plan_fingerprint: String,
}

impl VerificationReport {
    pub fn new(verdict: Verdict, expected: &Digest, received: &Digest, plan: &ExecutionPlan) -> Self {
        VerificationReport {
            verdict,
            expected_hex: expected.to_hex(),
            received_hex: received.to_hex(),
            plan_fingerprint: plan.fingerprint().to_hex(),
        }
    }

    pub fn to_text(&self) -> String {
        let reason = match self.verdict {
            Verdict::Accept => "-".to_owned(),
            Verdict::Reject(r) => r.to_string(),
        };
        let verdict = if self.verdict.is_accept() { "Accept" } else { "Reject" };
        format!(
            "verdict:          {verdict}\nreason:           {reason}\nexpected (user):  {}\nreceived (cloud): {}\nplan fingerprint: {}\n",
            self.expected_hex, self.received_hex, self.plan_fingerprint
        )
    }
}
