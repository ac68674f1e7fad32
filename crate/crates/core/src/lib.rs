//! Hash-chain verification for computations split across several enclaves.
//!
//! A user submits data and a fresh nonce `r` for a known execution plan.
//! The cloud runs the plan node by node, threading a chain value through
//! every edge, and returns the result with the final digest `hash_cloud`.
//! The user recomputes the digest from the plan and `r` alone and accepts
//! only on a match.
//!
//! Main entry points:
//! - [`cloud::execute_plan`] runs a plan and yields `hash_cloud`.
//! - [`user::compute_user_hash`] recomputes the expected digest.
//! - [`protocol`] wraps both in encrypted, signed envelopes.
//! - [`attack`] mounts plan rewiring and channel tampering against runs.

pub mod algebra;
pub mod attack;
pub mod cloud;
pub mod cost;
pub mod plan;
pub mod protocol;
pub mod reference;
pub mod scenario;
pub mod symbolic;
pub mod trace;
pub mod user;

pub use algebra::{Digest, Nonce, Tag};
pub use cloud::{execute_plan, ChannelTap, ExecError, ExecOutput, FunctionRegistry};
pub use plan::{EdgeClass, EnclaveId, ExecutionPlan, NodeId, PlanMutation, PlanNode};
pub use user::{compute_user_hash, RejectReason, Verdict};
