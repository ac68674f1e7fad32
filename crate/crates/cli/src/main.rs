//! `enclave-chain`: run, trace, attack and benchmark execution plans.
//!
//! Exit codes: 0 accept (or full detection), 2 reject (or a missed
//! detection), 1 any operational or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use enclave_chain::algebra::Nonce;
use enclave_chain::attack::{
    apply_ddrc, apply_otm, corpus_campaign, random_ddrc, random_otm_specs, run_campaign, AttackKind, AttackSpec,
    CampaignReport, Workload,
};
use enclave_chain::cloud::{execute_plan, ChannelTap, FunctionRegistry};
use enclave_chain::cost::{benchmark_overhead, benchmark_sweep, OverheadReport};
use enclave_chain::protocol::{
    build_request, cloud_handle, establish_session, user_receive, AttestationSim, CloudServices, PlanRegistry,
    RequestEnvelope, ResponseEnvelope, Session,
};
use enclave_chain::scenario::{PlanShape, Scenario};
use enclave_chain::trace::{ExecutionTrace, TraceReport};
use enclave_chain::user::{compute_user_hash, Verdict, VerificationReport};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

const EXIT_ACCEPT: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_REJECT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "enclave-chain", version, about = "Hash-chain verification of multi-enclave execution plans")]
struct Cli {
    /// Seed for keys, nonces and generated attacks. Overrides the scenario's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scenario file; the built-in reference hybrid scenario when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SideArg {
    User,
    Cloud,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full protocol once and verify the response.
    Run {
        /// Index into the scenario's `attacks` to apply; no attack when absent.
        #[arg(long)]
        attack: Option<usize>,
        /// Write request.hex and response.hex into this directory.
        #[arg(long, value_name = "DIR")]
        dump_envelopes: Option<PathBuf>,
        /// Verify this stored response envelope instead of the cloud's reply.
        #[arg(long, value_name = "FILE")]
        replay_response: Option<PathBuf>,
        /// Reseed the nonce stream while keeping the session keys.
        #[arg(long)]
        nonce_seed: Option<u64>,
    },
    /// Print the symbolic hash expressions of an honest run.
    Trace {
        #[arg(long, value_enum, default_value_t = SideArg::Both)]
        side: SideArg,
    },
    /// Run an attack campaign and report detection.
    Campaign {
        /// Generate this many random plan mutations.
        #[arg(long, value_name = "N")]
        random_ddrc: Option<usize>,
        /// Generate this many random channel tampers and misroutes.
        #[arg(long, value_name = "N")]
        random_otm: Option<usize>,
        /// Attack freshly generated plans instead of the scenario's plan.
        #[arg(long)]
        random_plans: bool,
    },
    /// Measure hash-chain bookkeeping overhead.
    Bench {
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        reps: u64,
        /// Sweep the scaled reference plan over 7 to 35 busyloop nodes.
        #[arg(long)]
        sweep: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_ACCEPT });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let scenario = match &cli.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::reference(),
    };
    let seed = cli.seed.or(scenario.seed).unwrap_or_else(rand::random);
    match &cli.command {
        Command::Run { attack, dump_envelopes, replay_response, nonce_seed } => cmd_run(
            cli.format,
            &scenario,
            seed,
            *attack,
            dump_envelopes.as_deref(),
            replay_response.as_deref(),
            *nonce_seed,
        ),
        Command::Trace { side } => cmd_trace(cli.format, &scenario, seed, *side),
        Command::Campaign { random_ddrc, random_otm, random_plans } => {
            cmd_campaign(cli.format, &scenario, seed, *random_ddrc, *random_otm, *random_plans)
        }
        Command::Bench { reps, sweep } => cmd_bench(cli.format, &scenario, *reps as usize, *sweep),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn new_session(seed: u64) -> Result<Session> {
    Ok(establish_session(&mut ChaCha20Rng::seed_from_u64(seed), AttestationSim::default())?)
}

#[derive(Serialize)]
struct RunReport {
    request: String,
    attack: Option<String>,
    honest_runs_before: Vec<Verdict>,
    nonce_hex: String,
    result_hex: String,
    #[serde(flatten)]
    verification: VerificationReport,
}

fn cmd_run(
    format: Format,
    scenario: &Scenario,
    seed: u64,
    attack: Option<usize>,
    dump: Option<&Path>,
    replay: Option<&Path>,
    nonce_seed: Option<u64>,
) -> Result<u8> {
    let w = scenario.workload(FunctionRegistry::with_builtins())?;
    let spec = match attack {
        Some(i) => Some(
            scenario
                .attacks
                .get(i)
                .with_context(|| {
                    format!("scenario lists {} attacks; index {i} is out of range", scenario.attacks.len())
                })?
                .clone(),
        ),
        None => None,
    };

    let mut session = new_session(seed)?;
    if let Some(s) = nonce_seed {
        session.reseed_stream(s);
    }
    let user_plans = PlanRegistry::single(w.request_id.clone(), w.plan.clone());
    let honest = CloudServices { plans: user_plans.clone(), functions: w.functions.clone() };

    let mut honest_runs_before = Vec::new();
    for _ in 0..spec.as_ref().map_or(0, |s| s.target_run) {
        let (env, r) = build_request(&mut session, &user_plans, &w.data, &w.request_id)?;
        let reply = cloud_handle(&mut session, &honest, &env, ChannelTap::none())?;
        honest_runs_before.push(user_receive(&mut session, &w.plan, &r, &reply.envelope)?.verdict);
    }

    let (cloud, tap) = match &spec {
        Some(spec) => attacked_cloud(&w, spec)?,
        None => (honest, ChannelTap::none()),
    };
    let (env, r) = build_request(&mut session, &user_plans, &w.data, &w.request_id)?;
    let reply = cloud_handle(&mut session, &cloud, &env, tap)?;
    let response = match replay {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            ResponseEnvelope::from_hex(&text).with_context(|| format!("{} is not a hex envelope", path.display()))?
        }
        None => reply.envelope,
    };
    if let Some(dir) = dump {
        dump_envelopes(dir, &env, &response)?;
    }
    let receipt = user_receive(&mut session, &w.plan, &r, &response)?;

    let report = RunReport {
        request: w.request_id.clone(),
        attack: spec.as_ref().map(AttackSpec::describe),
        honest_runs_before,
        nonce_hex: r.to_hex(),
        result_hex: hex::encode(&receipt.result),
        verification: receipt.report.clone(),
    };
    match format {
        Format::Json => print_json(&report)?,
        Format::Text => {
            println!("request:          {}", report.request);
            if let Some(a) = &report.attack {
                println!("attack:           {a}");
            }
            for (i, v) in report.honest_runs_before.iter().enumerate() {
                println!("honest run {i}:     {v}");
            }
            println!("nonce r:          {}", report.nonce_hex);
            println!("result:           {}", report.result_hex);
            print!("{}", report.verification.to_text());
        }
    }
    Ok(if receipt.verdict.is_accept() { EXIT_ACCEPT } else { EXIT_REJECT })
}

fn attacked_cloud(w: &Workload, spec: &AttackSpec) -> Result<(CloudServices, ChannelTap)> {
    let plan = match &spec.kind {
        AttackKind::Ddrc { mutation } => apply_ddrc(&w.plan, mutation)?,
        _ => w.plan.clone(),
    };
    let tap = apply_otm(&w.plan, spec)?;
    let cloud =
        CloudServices { plans: PlanRegistry::single(w.request_id.clone(), plan), functions: w.functions.clone() };
    Ok((cloud, tap))
}

fn dump_envelopes(dir: &Path, request: &RequestEnvelope, response: &ResponseEnvelope) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (name, hex) in [("request.hex", request.to_hex()), ("response.hex", response.to_hex())] {
        let path = dir.join(name);
        std::fs::write(&path, hex + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn trace_text(label: &str, trace: &ExecutionTrace) -> String {
    let mut out = format!("[{label}]\n");
    for (name, expr) in trace.listing() {
        out.push_str(&format!("{name} = {expr}\n"));
    }
    let expr = trace.final_expr().unwrap_or_else(|| "(expression too long to expand)".into());
    out.push_str(&format!("hash_{label} = {expr}\nhash_{label} (hex) = {}\n", trace.final_digest.to_hex()));
    out
}

fn cmd_trace(format: Format, scenario: &Scenario, seed: u64, side: SideArg) -> Result<u8> {
    let w = scenario.workload(FunctionRegistry::with_builtins())?;
    let r = Nonce::random(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut traces = Vec::new();
    if side != SideArg::Cloud {
        traces.push(("user", compute_user_hash(&w.plan, &r).trace));
    }
    if side != SideArg::User {
        let out = execute_plan(&w.plan, &w.functions, &w.data, &r, ChannelTap::none())?;
        traces.push(("cloud", out.trace.expect("bookkeeping is on by default")));
    }
    match format {
        Format::Json => {
            let reports: Vec<TraceReport> = traces.iter().map(|(_, t)| t.report()).collect();
            print_json(&reports)?;
        }
        Format::Text => {
            println!("nonce r = {}", r.to_hex());
            let blocks: Vec<String> = traces.iter().map(|(label, t)| trace_text(label, t)).collect();
            print!("{}", blocks.join("\n"));
        }
    }
    Ok(EXIT_ACCEPT)
}

fn cmd_campaign(
    format: Format,
    scenario: &Scenario,
    seed: u64,
    ddrc: Option<usize>,
    otm: Option<usize>,
    random_plans: bool,
) -> Result<u8> {
    let report: CampaignReport = if random_plans {
        corpus_campaign(seed, PlanShape::default(), ddrc.unwrap_or(0), otm.unwrap_or(0), 10)?
    } else {
        let w = scenario.workload(FunctionRegistry::with_builtins())?;
        let specs = if ddrc.is_some() || otm.is_some() {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut specs: Vec<AttackSpec> = (0..ddrc.unwrap_or(0))
                .map(|_| AttackSpec::new(AttackKind::Ddrc { mutation: random_ddrc(&w.plan, &mut rng) }))
                .collect();
            let wanted = otm.unwrap_or(0);
            let generated = random_otm_specs(&w, wanted, &mut rng);
            if generated.len() < wanted {
                bail!("the scenario's plan has no cross-enclave messages to attack");
            }
            specs.extend(generated);
            specs
        } else {
            scenario.attacks.clone()
        };
        run_campaign(&w, &specs, seed)?
    };
    match format {
        Format::Json => print_json(&report)?,
        Format::Text => print!("{}", report.to_text()),
    }
    Ok(if report.fully_detected() { EXIT_ACCEPT } else { EXIT_REJECT })
}

fn cmd_bench(format: Format, scenario: &Scenario, reps: usize, sweep: bool) -> Result<u8> {
    let report = if sweep {
        benchmark_sweep(reps)?
    } else {
        let w = scenario.workload(FunctionRegistry::with_builtins())?;
        OverheadReport { rows: vec![benchmark_overhead(&w.plan, &w.functions, &w.data, reps)?] }
    };
    match format {
        Format::Json => print_json(&report)?,
        Format::Text => {
            print!("{}", report.to_text());
            if report.rows.len() >= 2 {
                let fit = report.bookkeeping_fit();
                println!(
                    "bookkeeping fit: {:.6} ms/node + {:.6} ms, R^2 = {:.4}",
                    fit.slope, fit.intercept, fit.r_squared
                );
            }
        }
    }
    Ok(EXIT_ACCEPT)
}
