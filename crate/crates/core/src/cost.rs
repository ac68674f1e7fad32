//! Operation counts for both hash-chain algorithms, their closed-form
//! predictions, and a wall-clock overhead benchmark.
//!
//! Predictions are evaluated per node from the node's actual input case
//! and degrees rather than from case probabilities, so they must equal the
//! instrumented counts exactly.
//!
//! | input case              | cloud                                 | user               |
//! |-------------------------|---------------------------------------|--------------------|
//! | initial / same-enclave  | 1 Con                                 | 1 Con              |
//! | single cross-enclave    | 1 Xor + 1 Hash + 1 Con                | 1 Con              |
//! | merge of m inputs       | (m-1) Add + m' (Xor + Hash) + 1 Con    | (m-1) Add + 1 Con  |
//! | per cross-enclave output| 2 Hash + 1 Xor                        | 1 Hash             |
//! | terminal                | 1 Hash                                | 1 Hash             |

use std::ops::Add;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::algebra::{Nonce, Sha256Algebra};
use crate::cloud::{execute_plan_with, input_case, ChannelTap, ExecError, ExecOptions, FunctionRegistry};
use crate::plan::{EdgeClass, ExecutionPlan, NodeId};
use crate::trace::InputCase;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct OpCounters {
    pub hash_count: u64,
    pub xor_count: u64,
    pub add_count: u64,
    pub con_count: u64,
}

impl Add for OpCounters {
    type Output = OpCounters;
    fn add(self, o: OpCounters) -> OpCounters {
        OpCounters {
            hash_count: self.hash_count + o.hash_count,
            xor_count: self.xor_count + o.xor_count,
            add_count: self.add_count + o.add_count,
            con_count: self.con_count + o.con_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeProfile {
    pub node_id: NodeId,
    /// m: number of predecessors.
    pub in_degree: u64,
    /// m': predecessors in another enclave.
    pub cross_in: u64,
    /// q': successors in another enclave.
    pub cross_out: u64,
    pub terminal: bool,
    pub case: InputCase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanProfile {
    pub n: u64,
    pub nodes: Vec<NodeProfile>,
}

impl PlanProfile {
    /// Relative frequency of each input case, in the order initial,
    /// single cross-enclave, merge, single same-enclave. Sums to 1.
    pub fn case_frequencies(&self) -> [f64; 4] {
        let mut counts = [0u64; 4];
        for node in &self.nodes {
            let slot = match node.case {
                InputCase::Initial => 0,
                InputCase::CrossEnclave => 1,
                InputCase::Merge => 2,
                InputCase::SameEnclave => 3,
            };
            counts[slot] += 1;
        }
        counts.map(|c| c as f64 / self.n as f64)
    }

    pub fn node(&self, id: &str) -> Option<&NodeProfile> {
        self.nodes.iter().find(|n| n.node_id.as_str() == id)
    }

    /// Total cross-enclave output edges, i.e. messages on the channel.
    pub fn cross_edges(&self) -> u64 {
        self.nodes.iter().map(|n| n.cross_out).sum()
    }
}

pub fn profile(plan: &ExecutionPlan) -> PlanProfile {
    let nodes = plan
        .order()
        .iter()
        .map(|&v| {
            let preds = plan.preds_of(v);
            let succs = plan.succs_of(v);
            let cross_in = preds.iter().filter(|&&u| plan.class_at(u, v) == EdgeClass::CrossEnclave).count();
            let cross_out = succs.iter().filter(|&&s| plan.class_at(v, s) == EdgeClass::CrossEnclave).count();
            NodeProfile {
                node_id: plan.node_at(v).id.clone(),
                in_degree: preds.len() as u64,
                cross_in: cross_in as u64,
                cross_out: cross_out as u64,
                terminal: succs.is_empty(),
                case: input_case(preds.len(), cross_in),
            }
        })
        .collect();
    PlanProfile { n: plan.len() as u64, nodes }
}

pub fn predict_cloud_ops(profile: &PlanProfile) -> OpCounters {
    profile
        .nodes
        .iter()
        .map(|node| {
            let mut c = OpCounters { con_count: 1, ..OpCounters::default() };
            match node.case {
                InputCase::Initial | InputCase::SameEnclave => {}
                InputCase::CrossEnclave => {
                    c.xor_count += 1;
                    c.hash_count += 1;
                }
                InputCase::Merge => {
                    c.add_count += node.in_degree - 1;
                    c.xor_count += node.cross_in;
                    c.hash_count += node.cross_in;
                }
            }
            c.hash_count += 2 * node.cross_out;
            c.xor_count += node.cross_out;
            if node.terminal {
                c.hash_count += 1;
            }
            c
        })
        .fold(OpCounters::default(), Add::add)
}

pub fn predict_user_ops(profile: &PlanProfile) -> OpCounters {
    profile
        .nodes
        .iter()
        .map(|node| OpCounters {
            con_count: 1,
            add_count: if node.case == InputCase::Merge { node.in_degree - 1 } else { 0 },
            hash_count: node.cross_out + u64::from(node.terminal),
            xor_count: 0,
        })
        .fold(OpCounters::default(), Add::add)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("per-node workload is {per_node_ms:.3} ms; at least 1 ms is needed for a meaningful overhead figure")]
    WorkloadTooSmall { per_node_ms: f64 },
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Minimum per-node business-function cost for overhead measurements.
pub const MIN_NODE_MS: f64 = 1.0;

#[derive(Debug, Clone, Serialize)]
pub struct OverheadRow {
    pub nodes: usize,
    pub enclaves: usize,
    pub reps: usize,
    pub mean_ms_with: f64,
    pub mean_ms_without: f64,
    pub delta_ms: f64,
    pub delta_pct: f64,
    /// Median over repetitions of each back-to-back pair's relative
    /// difference, in percent.
    pub paired_median_delta_pct: f64,
    /// Median over repetitions of the wall time spent inside chain
    /// bookkeeping, timed directly. The median resists preemption spikes,
    /// which are large next to microsecond-scale slices.
    pub bookkeeping_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OverheadReport {
    pub rows: Vec<OverheadRow>,
}

impl OverheadReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>6} {:>9} {:>6} {:>14} {:>17} {:>10} {:>10} {:>17} {:>16}\n",
            "nodes",
            "enclaves",
            "reps",
            "mean_ms_with",
            "mean_ms_without",
            "delta_ms",
            "delta_pct",
            "paired_median_pct",
            "bookkeeping_ms"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>6} {:>9} {:>6} {:>14.4} {:>17.4} {:>10.4} {:>9.3}% {:>16.3}% {:>16.6}\n",
                r.nodes,
                r.enclaves,
                r.reps,
                r.mean_ms_with,
                r.mean_ms_without,
                r.delta_ms,
                r.delta_pct,
                r.paired_median_delta_pct,
                r.bookkeeping_ms
            ));
        }
        out
    }

    /// Least-squares fit of directly timed bookkeeping against node count.
    pub fn bookkeeping_fit(&self) -> LinearFit {
        let xs: Vec<f64> = self.rows.iter().map(|r| r.nodes as f64).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.bookkeeping_ms).collect();
        linear_fit(&xs, &ys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len(), "fit needs paired samples");
    assert!(xs.len() >= 2, "fit needs at least two samples");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - (slope * x + intercept)).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    LinearFit { slope, intercept, r_squared }
}

/// Mean wall time of `plan` with bookkeeping versus without.
pub fn benchmark_overhead(
    plan: &ExecutionPlan,
    registry: &FunctionRegistry,
    data: &[u8],
    reps: usize,
) -> Result<OverheadRow, CostError> {
    benchmark_between(plan, registry, data, reps, ExecOptions { bookkeeping: true }, ExecOptions { bookkeeping: false })
}

/// Compares two execution modes. The `with` and `without` columns refer to
/// `first` and `second` respectively; runs alternate order each repetition.
pub fn benchmark_between(
    plan: &ExecutionPlan,
    registry: &FunctionRegistry,
    data: &[u8],
    reps: usize,
    first: ExecOptions,
    second: ExecOptions,
) -> Result<OverheadRow, CostError> {
    let rows = interleaved(&[plan], registry, data, reps, first, second)?;
    Ok(rows.into_iter().next().expect("one plan, one row"))
}

/// Per-plan samples of one benchmark.
#[derive(Default)]
struct Samples {
    first_ms: Vec<f64>,
    second_ms: Vec<f64>,
    bookkeeping_ms: Vec<f64>,
}

/// Benchmarks several plans together. Each repetition visits every plan,
/// so drift in machine load is spread evenly over all rows instead of
/// biasing whichever plan happened to run during a busy stretch.
fn interleaved(
    plans: &[&ExecutionPlan],
    registry: &FunctionRegistry,
    data: &[u8],
    reps: usize,
    first: ExecOptions,
    second: ExecOptions,
) -> Result<Vec<OverheadRow>, CostError> {
    if reps == 0 {
        return Err(CostError::ZeroRepetitions);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(0x0062_656e_6368);
    let run = |plan: &ExecutionPlan, opts: ExecOptions, r: &Nonce| -> Result<(f64, f64), CostError> {
        let started = Instant::now();
        let out = execute_plan_with(&Sha256Algebra, plan, registry, data, r, ChannelTap::none(), opts)?;
        Ok((started.elapsed().as_secs_f64() * 1e3, out.bookkeeping_time.as_secs_f64() * 1e3))
    };

    let warmup = Nonce::random(&mut rng);
    for plan in plans {
        let (bare_ms, _) = run(plan, ExecOptions { bookkeeping: false }, &warmup)?;
        let per_node_ms = bare_ms / plan.len() as f64;
        if per_node_ms < MIN_NODE_MS {
            return Err(CostError::WorkloadTooSmall { per_node_ms });
        }
        run(plan, first, &warmup)?;
    }

    let mut samples: Vec<Samples> = plans.iter().map(|_| Samples::default()).collect();
    for rep in 0..reps {
        for (plan, acc) in plans.iter().zip(samples.iter_mut()) {
            let r = Nonce::random(&mut rng);
            let (a, b) = if rep % 2 == 0 {
                let a = run(plan, first, &r)?;
                (a, run(plan, second, &r)?)
            } else {
                let b = run(plan, second, &r)?;
                (run(plan, first, &r)?, b)
            };
            acc.first_ms.push(a.0);
            acc.second_ms.push(b.0);
            acc.bookkeeping_ms.push(a.1);
        }
    }

    Ok(plans
        .iter()
        .zip(samples)
        .map(|(plan, mut acc)| {
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            let (with, without) = (mean(&acc.first_ms), mean(&acc.second_ms));
            let mut paired: Vec<f64> =
                acc.first_ms.iter().zip(&acc.second_ms).map(|(a, b)| (a - b) / b * 100.0).collect();
            OverheadRow {
                nodes: plan.len(),
                enclaves: plan.enclaves().len(),
                reps,
                mean_ms_with: with,
                mean_ms_without: without,
                delta_ms: with - without,
                delta_pct: (with - without) / without * 100.0,
                paired_median_delta_pct: median(&mut paired),
                bookkeeping_ms: median(&mut acc.bookkeeping_ms),
            }
        })
        .collect())
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2.0
    }
}

/// Node counts of the scaled reference sweep.
pub const SWEEP_NODES: [usize; 5] = [7, 14, 21, 28, 35];

/// Overhead rows for the reference plan scaled to [`SWEEP_NODES`], every
/// node running the `busyloop_1M` workload.
pub fn benchmark_sweep(reps: usize) -> Result<OverheadReport, CostError> {
    let registry = FunctionRegistry::with_builtins();
    let plans: Vec<ExecutionPlan> =
        SWEEP_NODES.iter().map(|&n| crate::reference::scaled_hybrid_plan(n / 7, "busyloop_1M")).collect();
    let refs: Vec<&ExecutionPlan> = plans.iter().collect();
    let rows = interleaved(
        &refs,
        &registry,
        b"benchmark payload",
        reps,
        ExecOptions { bookkeeping: true },
        ExecOptions { bookkeeping: false },
    )?;
    Ok(OverheadReport { rows })
}
