//! Fault injection for the two threats the hash chain must catch.
//!
//! DDRC: the untrusted scheduler hands the cloud a rewired plan while the
//! user verifies against the original. OTM: cross-enclave messages are
//! modified or swapped in the untrusted channel. Enclave-internal state is
//! out of reach for both; the channel only exposes [`BoundaryMessage`]s.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{Nonce, Tag};
use crate::cloud::{execute_plan, BoundaryMessage, ChannelTap, FunctionRegistry, TapError, TapHook};
use crate::plan::{EdgeClass, ExecutionPlan, MutationError, NodeId, PlanError, PlanMutation};
use crate::protocol::{
    build_request, cloud_handle, establish_session, user_receive, AttestationSim, CloudServices, PlanRegistry,
    ProtocolError,
};
use crate::user::{RejectReason, Verdict};

/// Which field of a boundary message a tamper rewrites.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperPart {
    #[default]
    Result,
    Chain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// The cloud executes the mutated plan.
    Ddrc { mutation: PlanMutation },
    /// XOR `xor_mask` into one octet of the message on `from -> to`.
    OtmTamper {
        from: NodeId,
        to: NodeId,
        octet_index: usize,
        xor_mask: u8,
        #[serde(default)]
        part: TamperPart,
    },
    /// Deliver a zero-filled result on `from -> to`.
    OtmEliminate { from: NodeId, to: NodeId },
    /// Replace the message on `from -> to` with the first message emitted
    /// by `substitute_from`, chain and result alike.
    OtmMisroute { from: NodeId, to: NodeId, substitute_from: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    /// Zero-based index of the attacked request; earlier requests in the
    /// same session run honestly.
    #[serde(default)]
    pub target_run: usize,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        AttackSpec { kind, target_run: 0 }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            AttackKind::Ddrc { mutation } => match mutation {
                PlanMutation::SwapTags { a, b } => format!("ddrc swap_tags {a} {b}"),
                PlanMutation::RewireEdge { from, old_to, new_to } => {
                    format!("ddrc rewire {from}->{old_to} => {from}->{new_to}")
                }
                PlanMutation::DropNode { node } => format!("ddrc drop {node}"),
                PlanMutation::DuplicateNode { node, copy_id, .. } => format!("ddrc duplicate {node} as {copy_id}"),
            },
            AttackKind::OtmTamper { from, to, octet_index, xor_mask, part } => {
                let part = match part {
                    TamperPart::Result => "result",
                    TamperPart::Chain => "chain",
                };
                format!("otm tamper {from}->{to} {part}[{octet_index}] ^= {xor_mask:#04x}")
            }
            AttackKind::OtmEliminate { from, to } => format!("otm eliminate {from}->{to}"),
            AttackKind::OtmMisroute { from, to, substitute_from } => {
                format!("otm misroute {from}->{to} <= {substitute_from}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttackError {
    #[error("mutation rejected: {0}")]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("edge {from} -> {to} stays inside one enclave")]
    NotCrossEnclave { from: NodeId, to: NodeId },
    #[error("node {0} emits no boundary message before the victim edge is delivered")]
    NoSuchMessage(NodeId),
    #[error("a zero mask changes nothing")]
    ZeroMask,
    #[error("misrouting an edge onto its own sender changes nothing")]
    IdentityMisroute,
    #[error("octet {index} is outside a {len}-octet chain digest")]
    OctetOutOfRange { index: usize, len: usize },
}

/// Plan the compromised scheduler hands to the cloud.
pub fn apply_ddrc(plan: &ExecutionPlan, mutation: &PlanMutation) -> Result<ExecutionPlan, AttackError> {
    Ok(plan.mutate(mutation)?)
}

fn require_cross(plan: &ExecutionPlan, from: &NodeId, to: &NodeId) -> Result<(), AttackError> {
    match plan.edge_classify(from, to)? {
        EdgeClass::CrossEnclave => Ok(()),
        EdgeClass::SameEnclave => Err(AttackError::NotCrossEnclave { from: from.clone(), to: to.clone() }),
    }
}

fn on_edge(msg: &BoundaryMessage, from: &NodeId, to: &NodeId) -> bool {
    &msg.from_node == from && &msg.to_node == to
}

#[derive(Debug)]
struct TamperHook {
    from: NodeId,
    to: NodeId,
    octet_index: usize,
    xor_mask: u8,
    part: TamperPart,
}

impl TapHook for TamperHook {
    fn deliver(&mut self, msg: &mut BoundaryMessage, _: &[BoundaryMessage]) -> Result<(), TapError> {
        if !on_edge(msg, &self.from, &self.to) {
            return Ok(());
        }
        let mut chain = *msg.chain.as_bytes();
        let target: &mut [u8] = match self.part {
            TamperPart::Result => &mut msg.result,
            TamperPart::Chain => &mut chain,
        };
        let len = target.len();
        let octet =
            target.get_mut(self.octet_index).ok_or(TapError::OctetOutOfRange { index: self.octet_index, len })?;
        *octet ^= self.xor_mask;
        msg.chain = crate::algebra::Digest::from_bytes(chain);
        Ok(())
    }
}

#[derive(Debug)]
struct EliminateHook {
    from: NodeId,
    to: NodeId,
}

impl TapHook for EliminateHook {
    fn deliver(&mut self, msg: &mut BoundaryMessage, _: &[BoundaryMessage]) -> Result<(), TapError> {
        if on_edge(msg, &self.from, &self.to) {
            msg.result.iter_mut().for_each(|b| *b = 0);
        }
        Ok(())
    }
}

#[derive(Debug)]
struct MisrouteHook {
    from: NodeId,
    to: NodeId,
    substitute_from: NodeId,
}

impl TapHook for MisrouteHook {
    fn deliver(&mut self, msg: &mut BoundaryMessage, history: &[BoundaryMessage]) -> Result<(), TapError> {
        if !on_edge(msg, &self.from, &self.to) {
            return Ok(());
        }
        let substitute = history
            .iter()
            .find(|m| m.from_node == self.substitute_from)
            .ok_or_else(|| TapError::NoSuchMessage(self.substitute_from.clone()))?;
        *msg = substitute.clone();
        Ok(())
    }
}

/// Builds the channel hook for an OTM attack on `plan`. DDRC specs yield
/// the identity tap.
pub fn apply_otm(plan: &ExecutionPlan, spec: &AttackSpec) -> Result<ChannelTap, AttackError> {
    match &spec.kind {
        AttackKind::Ddrc { .. } => Ok(ChannelTap::none()),
        AttackKind::OtmTamper { from, to, octet_index, xor_mask, part } => {
            require_cross(plan, from, to)?;
            if *xor_mask == 0 {
                return Err(AttackError::ZeroMask);
            }
            if *part == TamperPart::Chain && *octet_index >= crate::algebra::DIGEST_LEN {
                return Err(AttackError::OctetOutOfRange { index: *octet_index, len: crate::algebra::DIGEST_LEN });
            }
            Ok(ChannelTap::with_hook(TamperHook {
                from: from.clone(),
                to: to.clone(),
                octet_index: *octet_index,
                xor_mask: *xor_mask,
                part: *part,
            }))
        }
        AttackKind::OtmEliminate { from, to } => {
            require_cross(plan, from, to)?;
            Ok(ChannelTap::with_hook(EliminateHook { from: from.clone(), to: to.clone() }))
        }
        AttackKind::OtmMisroute { from, to, substitute_from } => {
            require_cross(plan, from, to)?;
            if substitute_from == from {
                return Err(AttackError::IdentityMisroute);
            }
            let sub = plan.index_of(substitute_from)?;
            let receiver = plan.index_of(to)?;
            let emits = plan.succs_of(sub).iter().any(|&s| plan.class_at(sub, s) == EdgeClass::CrossEnclave);
            let position = |i: usize| plan.order().iter().position(|&x| x == i);
            if !emits || position(sub) >= position(receiver) {
                return Err(AttackError::NoSuchMessage(substitute_from.clone()));
            }
            Ok(ChannelTap::with_hook(MisrouteHook {
                from: from.clone(),
                to: to.clone(),
                substitute_from: substitute_from.clone(),
            }))
        }
    }
}

/// A plan together with everything needed to run it end to end.
#[derive(Debug, Clone)]
pub struct Workload {
    pub plan: ExecutionPlan,
    pub request_id: String,
    pub data: Vec<u8>,
    pub functions: FunctionRegistry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "snake_case")]
pub enum AttackOutcome {
    Detected(RejectReason),
    /// The verifier accepted an attacked run.
    Missed,
    /// The attacked run failed before producing a response.
    Aborted(String),
    /// The attack could not be applied to the plan.
    Invalid(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackRow {
    pub index: usize,
    pub attack: String,
    pub expected: Verdict,
    pub outcome: AttackOutcome,
    /// Every honest request before the target run was accepted.
    pub honest_runs_accepted: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CampaignReport {
    pub baselines: usize,
    pub rows: Vec<AttackRow>,
}

impl CampaignReport {
    fn count(&self, f: impl Fn(&AttackOutcome) -> bool) -> usize {
        self.rows.iter().filter(|r| f(&r.outcome)).count()
    }

    pub fn detected(&self) -> usize {
        self.count(|o| matches!(o, AttackOutcome::Detected(_)))
    }

    pub fn missed(&self) -> usize {
        self.count(|o| matches!(o, AttackOutcome::Missed))
    }

    pub fn aborted(&self) -> usize {
        self.count(|o| matches!(o, AttackOutcome::Aborted(_)))
    }

    pub fn invalid(&self) -> usize {
        self.count(|o| matches!(o, AttackOutcome::Invalid(_)))
    }

    pub fn false_alarms(&self) -> usize {
        self.rows.iter().filter(|r| !r.honest_runs_accepted).count()
    }

    /// Detected over applied attacks (detected + missed); 1.0 when none.
    pub fn detection_rate(&self) -> f64 {
        let applied = self.detected() + self.missed();
        if applied == 0 {
            1.0
        } else {
            self.detected() as f64 / applied as f64
        }
    }

    pub fn fully_detected(&self) -> bool {
        self.missed() == 0 && self.aborted() == 0 && self.invalid() == 0 && self.false_alarms() == 0
    }

    /// Appends `other`, renumbering its rows.
    pub fn merge(&mut self, other: CampaignReport) {
        let offset = self.rows.len();
        self.baselines += other.baselines;
        self.rows.extend(other.rows.into_iter().map(|mut r| {
            r.index += offset;
            r
        }));
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let outcome = match &r.outcome {
                AttackOutcome::Detected(reason) => format!("Reject({reason})"),
                AttackOutcome::Missed => "Accept  MISSED".to_owned(),
                AttackOutcome::Aborted(e) => format!("aborted: {e}"),
                AttackOutcome::Invalid(e) => format!("invalid: {e}"),
            };
            let alarm = if r.honest_runs_accepted { "" } else { "  FALSE-ALARM" };
            out.push_str(&format!("{:>5}  {:<48}  {outcome}{alarm}\n", r.index, r.attack));
        }
        out.push_str(&format!(
            "baselines accepted: {}\nattacks: {}  detected: {}  missed: {}  aborted: {}  invalid: {}\ndetection rate: {:.2}%\n",
            self.baselines,
            self.rows.len(),
            self.detected(),
            self.missed(),
            self.aborted(),
            self.invalid(),
            100.0 * self.detection_rate()
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CampaignError {
    #[error("honest baseline run ended with {0}")]
    BaselineFailed(Verdict),
    #[error("honest baseline run failed: {0}")]
    BaselineError(ProtocolError),
}

fn attack_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// One honest end-to-end run on its own session.
pub fn run_honest(workload: &Workload, seed: u64) -> Result<Verdict, ProtocolError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut session = establish_session(&mut rng, AttestationSim::default())?;
    let plans = PlanRegistry::single(workload.request_id.clone(), workload.plan.clone());
    let cloud = CloudServices { plans: plans.clone(), functions: workload.functions.clone() };
    let (env, r) = build_request(&mut session, &plans, &workload.data, &workload.request_id)?;
    let reply = cloud_handle(&mut session, &cloud, &env, ChannelTap::none())?;
    Ok(user_receive(&mut session, &workload.plan, &r, &reply.envelope)?.verdict)
}

fn run_attack(workload: &Workload, spec: &AttackSpec, index: usize, seed: u64) -> AttackRow {
    let row = |outcome, honest_runs_accepted| AttackRow {
        index,
        attack: spec.describe(),
        expected: Verdict::Reject(RejectReason::HashMismatch),
        outcome,
        honest_runs_accepted,
    };
    let cloud_plan = match &spec.kind {
        AttackKind::Ddrc { mutation } => match apply_ddrc(&workload.plan, mutation) {
            Ok(p) => p,
            Err(e) => return row(AttackOutcome::Invalid(e.to_string()), true),
        },
        _ => workload.plan.clone(),
    };
    if let Err(e) = apply_otm(&workload.plan, spec) {
        return row(AttackOutcome::Invalid(e.to_string()), true);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut session = match establish_session(&mut rng, AttestationSim::default()) {
        Ok(s) => s,
        Err(e) => return row(AttackOutcome::Aborted(e.to_string()), true),
    };
    let user_plans = PlanRegistry::single(workload.request_id.clone(), workload.plan.clone());
    let honest = CloudServices { plans: user_plans.clone(), functions: workload.functions.clone() };
    let attacked = CloudServices {
        plans: PlanRegistry::single(workload.request_id.clone(), cloud_plan),
        functions: workload.functions.clone(),
    };

    let mut honest_ok = true;
    for run in 0..=spec.target_run {
        let target = run == spec.target_run;
        let outcome = (|| {
            let (env, r) = build_request(&mut session, &user_plans, &workload.data, &workload.request_id)?;
            let (cloud, tap) = if target {
                (&attacked, apply_otm(&workload.plan, spec).expect("checked above"))
            } else {
                (&honest, ChannelTap::none())
            };
            let reply = cloud_handle(&mut session, cloud, &env, tap)?;
            Ok::<_, ProtocolError>(user_receive(&mut session, &workload.plan, &r, &reply.envelope)?.verdict)
        })();
        match (target, outcome) {
            (false, Ok(v)) => honest_ok &= v.is_accept(),
            (false, Err(_)) => honest_ok = false,
            (true, Ok(Verdict::Accept)) => return row(AttackOutcome::Missed, honest_ok),
            (true, Ok(Verdict::Reject(reason))) => return row(AttackOutcome::Detected(reason), honest_ok),
            (true, Err(e)) => return row(AttackOutcome::Aborted(e.to_string()), honest_ok),
        }
    }
    unreachable!("the target run always returns")
}

/// Runs the honest baseline, then one isolated run per spec, in parallel.
/// Per-attack randomness derives from `seed` and the attack's position, so
/// reports are reproducible.
pub fn run_campaign(workload: &Workload, specs: &[AttackSpec], seed: u64) -> Result<CampaignReport, CampaignError> {
    match run_honest(workload, seed) {
        Ok(Verdict::Accept) => {}
        Ok(v) => return Err(CampaignError::BaselineFailed(v)),
        Err(e) => return Err(CampaignError::BaselineError(e)),
    }
    let rows =
        specs.par_iter().enumerate().map(|(i, spec)| run_attack(workload, spec, i, attack_seed(seed, i))).collect();
    Ok(CampaignReport { baselines: 1, rows })
}

/// Messages an honest run puts on the channel. Payload sizes do not depend
/// on the nonce, so these guide generated OTM specs.
pub fn honest_channel_log(workload: &Workload) -> Vec<BoundaryMessage> {
    execute_plan(&workload.plan, &workload.functions, &workload.data, &Nonce::from_bytes([0; 16]), ChannelTap::none())
        .map(|out| out.channel_log)
        .unwrap_or_default()
}

fn fresh_tag<R: Rng>(plan: &ExecutionPlan, rng: &mut R) -> Tag {
    loop {
        let t = Tag::random(rng);
        if plan.nodes().iter().all(|n| n.tag != t) {
            return t;
        }
    }
}

fn fresh_id(plan: &ExecutionPlan, base: &NodeId) -> NodeId {
    (1..)
        .map(|k| NodeId::new(format!("{base}~dup{k}")))
        .find(|id| plan.index_of(id).is_err())
        .expect("unbounded search")
}

/// A random mutation that changes the labeled plan and keeps it valid.
pub fn random_ddrc<R: Rng>(plan: &ExecutionPlan, rng: &mut R) -> PlanMutation {
    let ids: Vec<NodeId> = plan.nodes().iter().map(|n| n.id.clone()).collect();
    let edges = plan.edges();
    for _ in 0..256 {
        let candidate = match rng.gen_range(0..4) {
            0 if ids.len() >= 2 => {
                let pair: Vec<&NodeId> = ids.choose_multiple(rng, 2).collect();
                PlanMutation::SwapTags { a: pair[0].clone(), b: pair[1].clone() }
            }
            1 if !edges.is_empty() => {
                let (from, old_to) = edges.choose(rng).expect("non-empty").clone();
                let new_to = ids.choose(rng).expect("non-empty").clone();
                PlanMutation::RewireEdge { from, old_to, new_to }
            }
            2 if ids.len() >= 2 => PlanMutation::DropNode { node: ids.choose(rng).expect("non-empty").clone() },
            _ => {
                let node = ids.choose(rng).expect("non-empty").clone();
                PlanMutation::DuplicateNode { copy_id: fresh_id(plan, &node), copy_tag: fresh_tag(plan, rng), node }
            }
        };
        if apply_ddrc(plan, &candidate).is_ok() {
            return candidate;
        }
    }
    let node = ids[0].clone();
    PlanMutation::DuplicateNode { copy_id: fresh_id(plan, &node), copy_tag: fresh_tag(plan, rng), node }
}

/// A random single-octet tamper on one of `log`'s messages, or `None` when
/// nothing crosses an enclave boundary.
pub fn random_tamper<R: Rng>(log: &[BoundaryMessage], rng: &mut R) -> Option<AttackKind> {
    let msg = log.choose(rng)?;
    let part = if msg.result.is_empty() || rng.gen_bool(0.25) { TamperPart::Chain } else { TamperPart::Result };
    let len = match part {
        TamperPart::Result => msg.result.len(),
        TamperPart::Chain => crate::algebra::DIGEST_LEN,
    };
    Some(AttackKind::OtmTamper {
        from: msg.from_node.clone(),
        to: msg.to_node.clone(),
        octet_index: rng.gen_range(0..len),
        xor_mask: rng.gen_range(1..=255),
        part,
    })
}

/// A random misroute: some earlier message from a different sender
/// replaces a victim message.
pub fn random_misroute<R: Rng>(plan: &ExecutionPlan, log: &[BoundaryMessage], rng: &mut R) -> Option<AttackKind> {
    let position = |id: &NodeId| {
        let idx = plan.index_of(id).expect("logged nodes exist");
        plan.order().iter().position(|&x| x == idx).expect("every node is ordered")
    };
    let mut options = Vec::new();
    for victim in log {
        let deadline = position(&victim.to_node);
        let mut senders: Vec<&NodeId> =
            log.iter().map(|m| &m.from_node).filter(|s| **s != victim.from_node && position(s) < deadline).collect();
        senders.dedup();
        for s in senders {
            options.push((victim, s));
        }
    }
    let (victim, sub) = options.choose(rng)?;
    Some(AttackKind::OtmMisroute {
        from: victim.from_node.clone(),
        to: victim.to_node.clone(),
        substitute_from: (*sub).clone(),
    })
}

/// `n` generated OTM specs against `workload`: mostly single-octet tampers,
/// every sixth a misroute when one is possible.
pub fn random_otm_specs<R: Rng>(workload: &Workload, n: usize, rng: &mut R) -> Vec<AttackSpec> {
    let log = honest_channel_log(workload);
    (0..n)
        .filter_map(|i| {
            let misroute = if i % 6 == 5 { random_misroute(&workload.plan, &log, rng) } else { None };
            misroute.or_else(|| random_tamper(&log, rng))
        })
        .map(AttackSpec::new)
        .collect()
}

/// Attack campaign over freshly generated plans: `ddrc` plan mutations and
/// `otm` channel attacks, at most `per_plan` attacks per plan. Plans
/// without cross-enclave traffic get no OTM attacks.
pub fn corpus_campaign(
    seed: u64,
    shape: crate::scenario::PlanShape,
    ddrc: usize,
    otm: usize,
    per_plan: usize,
) -> Result<CampaignReport, CampaignError> {
    assert!(per_plan > 0, "each plan needs room for at least one attack");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut report = CampaignReport::default();
    let (mut ddrc_left, mut otm_left) = (ddrc, otm);
    while ddrc_left + otm_left > 0 {
        let w = crate::scenario::random_workload(&mut rng, shape);
        let specs: Vec<AttackSpec> = if ddrc_left > 0 {
            let k = ddrc_left.min(per_plan);
            ddrc_left -= k;
            (0..k).map(|_| AttackSpec::new(AttackKind::Ddrc { mutation: random_ddrc(&w.plan, &mut rng) })).collect()
        } else {
            let specs = random_otm_specs(&w, otm_left.min(per_plan), &mut rng);
            otm_left -= specs.len();
            specs
        };
        if specs.is_empty() {
            continue;
        }
        report.merge(run_campaign(&w, &specs, rng.gen())?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::PlanNode;
    use crate::reference;

    fn hybrid() -> Workload {
        Workload {
            plan: reference::hybrid_plan(),
            request_id: reference::HYBRID_REQUEST.into(),
            data: b"reference input".to_vec(),
            functions: FunctionRegistry::with_builtins(),
        }
    }

    fn otm(kind: AttackKind) -> AttackSpec {
        AttackSpec::new(kind)
    }

    fn only_outcome(w: &Workload, spec: AttackSpec) -> AttackOutcome {
        let report = run_campaign(w, &[spec], 7).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].honest_runs_accepted);
        report.rows[0].outcome.clone()
    }

    #[test]
    fn empty_campaign_is_vacuously_complete() {
        let report = run_campaign(&hybrid(), &[], 1).unwrap();
        assert_eq!(report.baselines, 1);
        assert_eq!(report.detection_rate(), 1.0);
        assert!(report.fully_detected());
    }

    #[test]
    fn tamper_f3_f5_is_detected() {
        let spec = otm(AttackKind::OtmTamper {
            from: "f3".into(),
            to: "f5".into(),
            octet_index: 0,
            xor_mask: 0xff,
            part: TamperPart::Result,
        });
        assert_eq!(only_outcome(&hybrid(), spec), AttackOutcome::Detected(RejectReason::HashMismatch));
    }

    #[test]
    fn chain_tamper_and_elimination_are_detected() {
        let w = hybrid();
        let chain = otm(AttackKind::OtmTamper {
            from: "f5".into(),
            to: "f6".into(),
            octet_index: 31,
            xor_mask: 1,
            part: TamperPart::Chain,
        });
        assert_eq!(only_outcome(&w, chain), AttackOutcome::Detected(RejectReason::HashMismatch));
        let gone = otm(AttackKind::OtmEliminate { from: "f3".into(), to: "f5".into() });
        assert_eq!(only_outcome(&w, gone), AttackOutcome::Detected(RejectReason::HashMismatch));
    }

    #[test]
    fn misroute_is_detected() {
        let spec = otm(AttackKind::OtmMisroute { from: "f5".into(), to: "f6".into(), substitute_from: "f3".into() });
        assert_eq!(only_outcome(&hybrid(), spec), AttackOutcome::Detected(RejectReason::HashMismatch));
    }

    #[test]
    fn same_enclave_or_impossible_specs_are_refused() {
        let plan = reference::hybrid_plan();
        let tamper = otm(AttackKind::OtmTamper {
            from: "f2".into(),
            to: "f5".into(),
            octet_index: 0,
            xor_mask: 1,
            part: TamperPart::Result,
        });
        assert_eq!(
            apply_otm(&plan, &tamper).unwrap_err(),
            AttackError::NotCrossEnclave { from: "f2".into(), to: "f5".into() }
        );
        // f4 shares f5's enclave and never emits a boundary message.
        let misroute =
            otm(AttackKind::OtmMisroute { from: "f3".into(), to: "f5".into(), substitute_from: "f4".into() });
        assert_eq!(apply_otm(&plan, &misroute).unwrap_err(), AttackError::NoSuchMessage("f4".into()));
        // f5's message only exists after f5 has consumed f3's.
        let late = otm(AttackKind::OtmMisroute { from: "f3".into(), to: "f5".into(), substitute_from: "f5".into() });
        assert_eq!(apply_otm(&plan, &late).unwrap_err(), AttackError::NoSuchMessage("f5".into()));
        let zero = otm(AttackKind::OtmTamper {
            from: "f3".into(),
            to: "f5".into(),
            octet_index: 0,
            xor_mask: 0,
            part: TamperPart::Result,
        });
        assert_eq!(apply_otm(&plan, &zero).unwrap_err(), AttackError::ZeroMask);
    }

    #[test]
    fn ddrc_swap_on_two_node_chain() {
        let f = PlanNode::new("f", Tag::from_bytes([1; 8]), 1, "identity");
        let g = PlanNode::new("g", Tag::from_bytes([2; 8]), 1, "reverse");
        let plan = ExecutionPlan::new(vec![f, g], vec![("f".into(), "g".into())]).unwrap();
        let swapped = apply_ddrc(&plan, &PlanMutation::SwapTags { a: "f".into(), b: "g".into() }).unwrap();
        assert_eq!(swapped.node(&"f".into()).unwrap().function, "reverse");
        let w = Workload {
            plan,
            request_id: "fg".into(),
            data: b"xy".to_vec(),
            functions: FunctionRegistry::with_builtins(),
        };
        let spec =
            AttackSpec::new(AttackKind::Ddrc { mutation: PlanMutation::SwapTags { a: "f".into(), b: "g".into() } });
        assert_eq!(only_outcome(&w, spec), AttackOutcome::Detected(RejectReason::HashMismatch));
    }

    #[test]
    fn ddrc_rewire_on_reference_plan() {
        let mutation = PlanMutation::RewireEdge { from: "f3".into(), old_to: "f5".into(), new_to: "f6".into() };
        assert!(apply_ddrc(&reference::hybrid_plan(), &mutation).is_ok());
        let spec = AttackSpec::new(AttackKind::Ddrc { mutation });
        assert_eq!(only_outcome(&hybrid(), spec), AttackOutcome::Detected(RejectReason::HashMismatch));
    }

    #[test]
    fn later_target_run_keeps_earlier_runs_honest() {
        let mut spec = otm(AttackKind::OtmEliminate { from: "f3".into(), to: "f5".into() });
        spec.target_run = 3;
        let report = run_campaign(&hybrid(), &[spec], 11).unwrap();
        assert!(report.rows[0].honest_runs_accepted);
        assert!(report.fully_detected());
    }

    #[test]
    fn random_specs_apply() {
        let w = hybrid();
        let log = honest_channel_log(&w);
        assert_eq!(log.len(), 2);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = random_ddrc(&w.plan, &mut rng);
            assert!(apply_ddrc(&w.plan, &m).is_ok());
            let t = AttackSpec::new(random_tamper(&log, &mut rng).unwrap());
            assert!(apply_otm(&w.plan, &t).is_ok());
            let mis = AttackSpec::new(random_misroute(&w.plan, &log, &mut rng).unwrap());
            assert!(apply_otm(&w.plan, &mis).is_ok());
        }
    }

    #[test]
    fn corpus_campaign_counts() {
        let shape = crate::scenario::PlanShape { max_nodes: 12, ..Default::default() };
        let report = corpus_campaign(4, shape, 15, 25, 10).unwrap();
        assert_eq!(report.rows.len(), 40);
        assert!(report.fully_detected());
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"{"kind":"otm_tamper","from":"f3","to":"f5","octet_index":0,"xor_mask":255}"#;
        let spec: AttackSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.target_run, 0);
        assert!(matches!(spec.kind, AttackKind::OtmTamper { part: TamperPart::Result, .. }));
        let ddrc = r#"{"kind":"ddrc","mutation":{"type":"drop_node","node":"f4"},"target_run":2}"#;
        let spec: AttackSpec = serde_json::from_str(ddrc).unwrap();
        assert_eq!(spec.target_run, 2);
    }
}
