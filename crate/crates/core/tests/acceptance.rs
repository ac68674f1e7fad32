//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::time::{Duration, Instant};

use enclave_chain::algebra::{Digest, Nonce, DIGEST_LEN};
use enclave_chain::attack::{
    honest_channel_log, random_ddrc, random_misroute, random_tamper, run_campaign, AttackKind, AttackSpec,
    CampaignReport,
};
use enclave_chain::cloud::{execute_plan, ChannelTap, FunctionRegistry};
use enclave_chain::cost::{benchmark_sweep, predict_cloud_ops, predict_user_ops, profile};
use enclave_chain::plan::ExecutionPlan;
use enclave_chain::protocol::{
    build_request, cloud_handle, establish_session, open_response, seal_response, user_receive, AttestationSim,
    CloudServices, PlanRegistry, ProtocolError, ResponsePayload, Session,
};
use enclave_chain::reference;
use enclave_chain::scenario::{random_workload, PlanShape};
use enclave_chain::symbolic::squash;
use enclave_chain::user::{compute_user_hash, RejectReason, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Expected strings for the reference hybrid plan, in their published
/// LaTeX notation.
const USER_NODE_LIST: &str = "H_1 = r||tag_1, H_2 = H_1||tag_2, H_3 = hash(r||tag_3), H_4 = r||tag_4, \
    H_5 = hash((H_2 + H_3 + H_4) || tag_5), H_6 = H_5||tag_6, H_7 = hash(H_6||tag_7)";
const USER_FORMULA: &str = "hash(((hash(((r||tag_1||tag_2) + (hash(r||tag_3)) + (r||tag_4)) || tag_5))||tag_6)||tag_7)";
const CLOUD_FORMULA: &str = "hash(((hash(((r||tag_1||tag_2) + ((hash(r||tag_3) \\oplus hash(res_{f_3}))\\oplus \
    hash(res_{f_3}^{'})) + (r||tag_4)) || tag_5)\\oplus hash(res_{f_5}) \\oplus hash(res_{f_5}^{'}) )||tag_6)||tag_7)";

/// Maps the published notation onto the trace renderer's naming
/// (`tag_f3`, `res_f3`, `res'_f3`, `H_f3`, `⊕`) and drops whitespace.
fn normalize(published: &str) -> String {
    let mut s = published.replace("\\oplus", "⊕");
    for n in 1..=7 {
        s = s
            .replace(&format!("res_{{f_{n}}}^{{'}}"), &format!("res'_f{n}"))
            .replace(&format!("res_{{f_{n}}}"), &format!("res_f{n}"))
            .replace(&format!("tag_{n}"), &format!("tag_f{n}"))
            .replace(&format!("H_{n}"), &format!("H_f{n}"));
    }
    squash(&s)
}

fn ac1() -> Result<String, String> {
    let plan = reference::hybrid_plan();
    let r = Nonce::from_bytes([7; 16]);
    let user = compute_user_hash(&plan, &r).trace;
    let listing = user.listing().into_iter().map(|(l, e)| format!("{l}={e}")).collect::<Vec<_>>().join(",");
    if squash(&listing) != normalize(USER_NODE_LIST) {
        return Err(format!("per-node list differs: {listing}"));
    }
    let user_expr = user.final_expr().ok_or("user formula too long")?;
    if squash(&user_expr) != normalize(USER_FORMULA) {
        return Err(format!("user formula differs: {user_expr}"));
    }
    let cloud = execute_plan(&plan, &FunctionRegistry::with_builtins(), b"x", &r, ChannelTap::none())
        .map_err(|e| e.to_string())?
        .trace
        .ok_or("no cloud trace")?;
    let cloud_expr = cloud.final_expr().ok_or("cloud formula too long")?;
    if squash(&cloud_expr) != normalize(CLOUD_FORMULA) {
        return Err(format!("cloud formula differs: {cloud_expr}"));
    }
    Ok("per-node list, user formula and cloud formula match exactly".into())
}

fn ac2() -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xac02);
    let shape = PlanShape::default();
    let (mut equal, mut nodes, mut crossings) = (0, 0, 0u64);
    for i in 0..1000 {
        let w = random_workload(&mut rng, shape);
        let r = Nonce::random(&mut rng);
        let cloud = execute_plan(&w.plan, &w.functions, &w.data, &r, ChannelTap::none())
            .map_err(|e| format!("plan {i}: {e}"))?;
        if cloud.hash_cloud != compute_user_hash(&w.plan, &r).hash_user {
            return Err(format!("plan {i}: hash_user != hash_cloud"));
        }
        equal += 1;
        nodes += w.plan.len();
        crossings += cloud.boundary_messages;
    }
    Ok(format!("{equal}/1000 plans agree ({nodes} nodes, {crossings} boundary messages)"))
}

fn campaign_over_corpus(
    seed: u64,
    mut specs_for: impl FnMut(&enclave_chain::attack::Workload, &mut ChaCha20Rng) -> Vec<AttackSpec>,
    wanted: usize,
) -> Result<CampaignReport, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut total = CampaignReport::default();
    while total.rows.len() < wanted {
        let w = random_workload(&mut rng, PlanShape::default());
        let mut specs = specs_for(&w, &mut rng);
        specs.truncate(wanted - total.rows.len());
        if specs.is_empty() {
            continue;
        }
        let report = run_campaign(&w, &specs, rng.gen()).map_err(|e| e.to_string())?;
        total.merge(report);
    }
    Ok(total)
}

fn summarize(report: &CampaignReport) -> Result<String, String> {
    let line = format!(
        "{}/{} detected over {} plans (missed {}, aborted {}, invalid {}, false alarms {})",
        report.detected(),
        report.rows.len(),
        report.baselines,
        report.missed(),
        report.aborted(),
        report.invalid(),
        report.false_alarms()
    );
    if report.fully_detected() {
        Ok(line)
    } else {
        Err(line)
    }
}

fn ac3() -> Result<String, String> {
    let report = campaign_over_corpus(
        0xac03,
        |w, rng| (0..10).map(|_| AttackSpec::new(AttackKind::Ddrc { mutation: random_ddrc(&w.plan, rng) })).collect(),
        1000,
    )?;
    summarize(&report)
}

fn ac4() -> Result<String, String> {
    let tampers = campaign_over_corpus(
        0xac04,
        |w, rng| {
            let log = honest_channel_log(w);
            (0..10).filter_map(|_| random_tamper(&log, rng)).map(AttackSpec::new).collect()
        },
        1000,
    )?;
    let misroutes = campaign_over_corpus(
        0xac14,
        |w, rng| {
            let log = honest_channel_log(w);
            (0..4).filter_map(|_| random_misroute(&w.plan, &log, rng)).map(AttackSpec::new).collect()
        },
        200,
    )?;
    Ok(format!("tampers: {}; misroutes: {}", summarize(&tampers)?, summarize(&misroutes)?))
}

struct Reference {
    session: Session,
    plans: PlanRegistry,
    cloud: CloudServices,
    plan: ExecutionPlan,
}

fn reference_session(seed: u64) -> Reference {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let session = establish_session(&mut rng, AttestationSim::default()).expect("attestation succeeds");
    let plan = reference::hybrid_plan();
    let plans = PlanRegistry::single(reference::HYBRID_REQUEST, plan.clone());
    let cloud = CloudServices { plans: plans.clone(), functions: FunctionRegistry::with_builtins() };
    Reference { session, plans, cloud, plan }
}

fn ac5() -> Result<String, String> {
    let Reference { mut session, plans, cloud, plan } = reference_session(0xac05);
    let mut rng = ChaCha20Rng::seed_from_u64(0xac15);
    let mut rejected = 0;
    for i in 0..1000 {
        let data: Vec<u8> = (0..rng.gen_range(1..32)).map(|_| rng.gen()).collect();
        let (old_env, old_r) =
            build_request(&mut session, &plans, &data, reference::HYBRID_REQUEST).map_err(|e| e.to_string())?;
        let old = cloud_handle(&mut session, &cloud, &old_env, ChannelTap::none()).map_err(|e| e.to_string())?;
        let (_, fresh_r) =
            build_request(&mut session, &plans, &data, reference::HYBRID_REQUEST).map_err(|e| e.to_string())?;
        if fresh_r == old_r {
            return Err(format!("trial {i}: nonce reused"));
        }
        let verdict = user_receive(&mut session, &plan, &fresh_r, &old.envelope).map_err(|e| e.to_string())?.verdict;
        if verdict != Verdict::Reject(RejectReason::HashMismatch) {
            return Err(format!("trial {i}: replay gave {verdict}"));
        }
        rejected += 1;
    }
    Ok(format!("{rejected}/1000 replays rejected"))
}

fn ac6() -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xac06);
    let mut corpus: Vec<(ExecutionPlan, Vec<u8>)> = vec![(reference::hybrid_plan(), b"x".to_vec())];
    corpus.extend((0..1000).map(|_| {
        let w = random_workload(&mut rng, PlanShape::default());
        (w.plan, w.data)
    }));
    let functions = FunctionRegistry::with_builtins();
    for (i, (plan, data)) in corpus.iter().enumerate() {
        let r = Nonce::random(&mut rng);
        let p = profile(plan);
        let cloud = execute_plan(plan, &functions, data, &r, ChannelTap::none()).map_err(|e| e.to_string())?;
        let user = compute_user_hash(plan, &r);
        if predict_cloud_ops(&p) != cloud.counters {
            return Err(format!("plan {i}: cloud {:?} != predicted {:?}", cloud.counters, predict_cloud_ops(&p)));
        }
        if predict_user_ops(&p) != user.counters {
            return Err(format!("plan {i}: user {:?} != predicted {:?}", user.counters, predict_user_ops(&p)));
        }
        if user.counters.xor_count != 0 {
            return Err(format!("plan {i}: user side used xor"));
        }
    }
    Ok(format!("{} plans: predicted == instrumented on both sides, user xor_count == 0", corpus.len()))
}

fn ac7() -> Result<String, String> {
    let report = benchmark_sweep(30).map_err(|e| e.to_string())?;
    let fit = report.bookkeeping_fit();
    let worst_delta = report.rows.iter().map(|r| r.paired_median_delta_pct).fold(f64::MIN, f64::max);
    let worst_share = report.rows.iter().map(|r| 100.0 * r.bookkeeping_ms / r.mean_ms_with).fold(f64::MIN, f64::max);
    let line = format!(
        "worst paired with-vs-without delta {worst_delta:.3}%, worst bookkeeping share {worst_share:.4}%, \
         bookkeeping fit R^2 {:.4} (slope {:.6} ms/node)",
        fit.r_squared, fit.slope
    );
    if worst_delta <= 5.0 && worst_share <= 5.0 && fit.r_squared >= 0.9 {
        Ok(line)
    } else {
        Err(format!("{line}\n{}", report.to_text()))
    }
}

fn ac8() -> Result<String, String> {
    let Reference { mut session, plans, cloud, plan } = reference_session(0xac08);
    let mut rng = ChaCha20Rng::seed_from_u64(0xac18);
    let (mut req_fail, mut resp_fail, mut bad_sig) = (0, 0, 0);
    for i in 0..1000 {
        let (mut env, r) =
            build_request(&mut session, &plans, b"envelope", reference::HYBRID_REQUEST).map_err(|e| e.to_string())?;
        let reply = cloud_handle(&mut session, &cloud, &env, ChannelTap::none()).map_err(|e| e.to_string())?;

        let pos = rng.gen_range(0..env.ciphertext.len());
        env.ciphertext[pos] ^= rng.gen_range(1..=255u8);
        match cloud_handle(&mut session, &cloud, &env, ChannelTap::none()) {
            Err(ProtocolError::DecryptFailure) => req_fail += 1,
            other => return Err(format!("trial {i}: corrupted request gave {other:?}")),
        }

        let mut corrupted = reply.envelope.clone();
        let pos = rng.gen_range(0..corrupted.ciphertext.len());
        corrupted.ciphertext[pos] ^= rng.gen_range(1..=255u8);
        match user_receive(&mut session, &plan, &r, &corrupted) {
            Err(ProtocolError::DecryptFailure) => resp_fail += 1,
            other => return Err(format!("trial {i}: corrupted response gave {other:?}")),
        }

        let mut payload: ResponsePayload = open_response(&session, &reply.envelope).map_err(|e| e.to_string())?;
        if i % 2 == 0 {
            let pos = rng.gen_range(0..payload.result.len());
            payload.result[pos] ^= rng.gen_range(1..=255u8);
        } else {
            let mut h = *payload.hash_cloud.as_bytes();
            h[rng.gen_range(0..DIGEST_LEN)] ^= rng.gen_range(1..=255u8);
            payload.hash_cloud = Digest::from_bytes(h);
        }
        let resealed = seal_response(&mut session, &payload);
        let verdict = user_receive(&mut session, &plan, &r, &resealed).map_err(|e| e.to_string())?.verdict;
        if verdict != Verdict::Reject(RejectReason::BadSignature) {
            return Err(format!("trial {i}: modified signed payload gave {verdict}"));
        }
        bad_sig += 1;
    }
    Ok(format!(
        "request corruptions {req_fail}/1000, response corruptions {resp_fail}/1000 -> DecryptFailure; \
         signed-field edits {bad_sig}/1000 -> BadSignature"
    ))
}

type Criterion = (&'static str, Option<Duration>, fn() -> Result<String, String>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 symbolic trace of the reference hybrid plan", Some(Duration::from_secs(1)), ac1),
        ("2 hash_user == hash_cloud on 1000 random plans", Some(Duration::from_secs(30)), ac2),
        ("3 plan-rewiring detection", Some(Duration::from_secs(60)), ac3),
        ("4 channel tamper and misroute detection", Some(Duration::from_secs(60)), ac4),
        ("5 replay resistance", None, ac5),
        ("6 predicted == instrumented operation counts", None, ac6),
        ("7 bookkeeping overhead and linear growth", None, ac7),
        ("8 envelope integrity and signature binding", None, ac8),
    ];
    let mut failures = 0;
    for (name, limit, check) in criteria {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  criterion {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
