use std::cell::Cell;

use enclave_chain::algebra::{self, add, concat, hash, xor, Algebra, Digest, Nonce, Sha256Algebra};
use enclave_chain::attack::{random_ddrc, Workload};
use enclave_chain::cloud::{execute_plan, execute_plan_with, ChannelTap, ExecOptions};
use enclave_chain::cost::{predict_cloud_ops, predict_user_ops, profile, OpCounters};
use enclave_chain::plan::EdgeClass;
use enclave_chain::protocol::{decode_fields, encode_fields};
use enclave_chain::scenario::{random_workload, PlanShape};
use enclave_chain::user::{compute_user_hash, compute_user_hash_with};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn workload(seed: u64) -> Workload {
    random_workload(&mut ChaCha20Rng::seed_from_u64(seed), PlanShape::default())
}

fn digest() -> impl Strategy<Value = Digest> {
    any::<[u8; 32]>().prop_map(Digest::from_bytes)
}

fn nonce() -> impl Strategy<Value = Nonce> {
    any::<[u8; 16]>().prop_map(Nonce::from_bytes)
}

/// Tallies primitive calls on its own, independent of the crate's
/// counting wrapper.
#[derive(Default)]
struct Tally {
    hash: Cell<u64>,
    xor: Cell<u64>,
    add: Cell<u64>,
    con: Cell<u64>,
}

impl Tally {
    fn counters(&self) -> OpCounters {
        OpCounters {
            hash_count: self.hash.get(),
            xor_count: self.xor.get(),
            add_count: self.add.get(),
            con_count: self.con.get(),
        }
    }
}

impl Algebra for Tally {
    fn hash(&self, input: &[u8]) -> Digest {
        self.hash.set(self.hash.get() + 1);
        hash(input)
    }

    fn xor(&self, a: &Digest, b: &Digest) -> Digest {
        self.xor.set(self.xor.get() + 1);
        xor(a, b)
    }

    fn add(&self, operands: &[&[u8]]) -> Vec<u8> {
        self.add.set(self.add.get() + operands.len() as u64 - 1);
        add(operands)
    }

    fn concat(&self, a: &[u8], b: &[u8]) -> Vec<u8> {
        self.con.set(self.con.get() + 1);
        concat(a, b)
    }
}

proptest! {
    #[test]
    fn xor_is_self_inverse(a in digest(), b in digest()) {
        prop_assert_eq!(xor(&xor(&a, &b), &b), a);
        prop_assert_eq!(xor(&a, &b), xor(&b, &a));
    }

    #[test]
    fn add_matches_bigint_and_ignores_order(
        mut ops in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..48), 2..7)
    ) {
        let views: Vec<&[u8]> = ops.iter().map(Vec::as_slice).collect();
        let sum = add(&views);
        let oracle: BigUint = ops.iter().map(|o| BigUint::from_bytes_be(o)).sum();
        let expected = oracle.to_bytes_be();
        prop_assert_eq!(&sum, &expected);
        prop_assert!(sum.len() == 1 || sum[0] != 0);
        ops.reverse();
        let views: Vec<&[u8]> = ops.iter().map(Vec::as_slice).collect();
        prop_assert_eq!(add(&views), sum);
    }

    #[test]
    fn hash_length_is_fixed(input in prop::collection::vec(any::<u8>(), 0..5000)) {
        prop_assert_eq!(hash(&input).as_bytes().len(), algebra::DIGEST_LEN);
    }

    #[test]
    fn field_codec_round_trips(fields in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40), 0..6)) {
        let views: Vec<&[u8]> = fields.iter().map(Vec::as_slice).collect();
        let encoded = encode_fields(&views);
        let decoded = decode_fields(&encoded, fields.len()).unwrap();
        prop_assert_eq!(decoded, views);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn order_lists_every_node_once_and_respects_edges(seed in any::<u64>()) {
        let plan = workload(seed).plan;
        let order = plan.order();
        let mut seen = vec![false; plan.len()];
        for &v in order {
            prop_assert!(!seen[v]);
            seen[v] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
        let pos: Vec<usize> = {
            let mut p = vec![0; plan.len()];
            for (i, &v) in order.iter().enumerate() {
                p[v] = i;
            }
            p
        };
        for v in 0..plan.len() {
            for &s in plan.succs_of(v) {
                prop_assert!(pos[v] < pos[s]);
            }
        }
    }

    #[test]
    fn edge_class_depends_only_on_enclaves(seed in any::<u64>()) {
        let plan = workload(seed).plan;
        for (from, to) in plan.edges() {
            let same = plan.node(&from).unwrap().enclave == plan.node(&to).unwrap().enclave;
            let expected = if same { EdgeClass::SameEnclave } else { EdgeClass::CrossEnclave };
            prop_assert_eq!(plan.edge_classify(&from, &to).unwrap(), expected);
        }
    }

    #[test]
    fn honest_runs_agree(seed in any::<u64>(), r in nonce()) {
        let w = workload(seed);
        let cloud = execute_plan(&w.plan, &w.functions, &w.data, &r, ChannelTap::none()).unwrap();
        prop_assert_eq!(cloud.hash_cloud, compute_user_hash(&w.plan, &r).hash_user);
    }

    #[test]
    fn cloud_hash_ignores_data(seed in any::<u64>(), r in nonce(), other in prop::collection::vec(any::<u8>(), 1..64)) {
        let w = workload(seed);
        let a = execute_plan(&w.plan, &w.functions, &w.data, &r, ChannelTap::none()).unwrap();
        let b = execute_plan(&w.plan, &w.functions, &other, &r, ChannelTap::none()).unwrap();
        prop_assert_eq!(a.hash_cloud, b.hash_cloud);
    }

    #[test]
    fn nonce_changes_hash(seed in any::<u64>(), r1 in nonce(), r2 in nonce()) {
        prop_assume!(r1 != r2);
        let w = workload(seed);
        let a = execute_plan(&w.plan, &w.functions, &w.data, &r1, ChannelTap::none()).unwrap();
        let b = execute_plan(&w.plan, &w.functions, &w.data, &r2, ChannelTap::none()).unwrap();
        prop_assert_ne!(a.hash_cloud, b.hash_cloud);
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), r in nonce()) {
        let w = workload(seed);
        let a = execute_plan(&w.plan, &w.functions, &w.data, &r, ChannelTap::none()).unwrap();
        let b = execute_plan(&w.plan, &w.functions, &w.data, &r, ChannelTap::none()).unwrap();
        prop_assert_eq!(&a.result, &b.result);
        prop_assert_eq!(a.hash_cloud, b.hash_cloud);
        prop_assert_eq!(a.channel_log, b.channel_log);
        let (ta, tb) = (a.trace.unwrap().report(), b.trace.unwrap().report());
        prop_assert_eq!(serde_json::to_string(&ta).unwrap(), serde_json::to_string(&tb).unwrap());
    }

    #[test]
    fn boundary_chain_cancels_to_sender_hash(seed in any::<u64>(), r in nonce()) {
        let w = workload(seed);
        let out = execute_plan(&w.plan, &w.functions, &w.data, &r, ChannelTap::none()).unwrap();
        let trace = out.trace.unwrap();
        for msg in &out.channel_log {
            let sender = trace.node(&msg.from_node).unwrap();
            prop_assert_eq!(xor(&msg.chain, &hash(&msg.result)), hash(&sender.h));
        }
    }

    #[test]
    fn counters_match_predictions_and_independent_tally(seed in any::<u64>(), r in nonce()) {
        let w = workload(seed);
        let p = profile(&w.plan);
        let tally = Tally::default();
        let cloud = execute_plan_with(&tally, &w.plan, &w.functions, &w.data, &r, ChannelTap::none(), ExecOptions::default()).unwrap();
        prop_assert_eq!(cloud.counters, tally.counters());
        prop_assert_eq!(cloud.counters, predict_cloud_ops(&p));

        let tally = Tally::default();
        let user = compute_user_hash_with(&tally, &w.plan, &r);
        prop_assert_eq!(user.counters, tally.counters());
        prop_assert_eq!(user.counters, predict_user_ops(&p));
        prop_assert_eq!(user.counters.xor_count, 0);
        prop_assert!(user.counters.hash_count <= cloud.counters.hash_count);
        let frequencies: f64 = p.case_frequencies().iter().sum();
        prop_assert!((frequencies - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mutations_separate_user_hashes(seed in any::<u64>(), r in nonce()) {
        let w = workload(seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
        let mutation = random_ddrc(&w.plan, &mut rng);
        let mutated = w.plan.mutate(&mutation).unwrap();
        prop_assert_ne!(mutated.labeled(), w.plan.labeled());
        prop_assert_ne!(compute_user_hash(&mutated, &r).hash_user, compute_user_hash(&w.plan, &r).hash_user);
    }

    #[test]
    fn disabled_bookkeeping_keeps_results(seed in any::<u64>(), r in nonce()) {
        let w = workload(seed);
        let on = execute_plan(&w.plan, &w.functions, &w.data, &r, ChannelTap::none()).unwrap();
        let off = execute_plan_with(&Sha256Algebra, &w.plan, &w.functions, &w.data, &r, ChannelTap::none(), ExecOptions { bookkeeping: false }).unwrap();
        prop_assert_eq!(on.result, off.result);
        prop_assert_eq!(off.counters, OpCounters::default());
    }
}
