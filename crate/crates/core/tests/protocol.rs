use flexclinch::agents::truthful_policies;
use flexclinch::mechanisms::{clinch_step, run_mca, McaConfig};
use flexclinch::model::{Discomfort, Instance, User, UserId};
use flexclinch::numeric::exact_sum;
use flexclinch::protocol::*;
use flexclinch::scenario::{random_instance, OmegaFamily};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn instance(seed: u64) -> Instance {
    let n = 2 + (seed % 7) as usize;
    let family = if seed.is_multiple_of(2) { OmegaFamily::Narrow } else { OmegaFamily::Wide };
    random_instance(n, family, 1.0 + (seed % 5) as f64, seed)
}

#[test]
fn outcome_equals_centralized_run_exactly() {
    let cfg = McaConfig::new(1e-3);
    for seed in 0..20 {
        let inst = instance(seed);
        let policies = truthful_policies(&inst.users);
        let central = run_mca(&inst, &policies, &cfg).unwrap();
        let run = run_protocol_mca(&inst, &policies, &cfg, 7).unwrap();
        assert_eq!(run.outcome, central.outcome, "instance {seed}");
        for (p, c) in run.outcome.allocation.iter().zip(&central.outcome.allocation) {
            assert_eq!(p.to_bits(), c.to_bits());
        }
        for (p, c) in run.outcome.payment.iter().zip(&central.outcome.payment) {
            assert_eq!(p.to_bits(), c.to_bits());
        }
        let report = assert_privacy(&run.trace);
        assert!(report.passed(), "instance {seed}: {report:?}");
    }
}

#[test]
fn outcome_does_not_depend_on_overlay_seed() {
    let cfg = McaConfig::new(1e-3);
    let inst = instance(5);
    let policies = truthful_policies(&inst.users);
    let first = run_protocol_mca(&inst, &policies, &cfg, 0).unwrap();
    for seed in 1..20 {
        let run = run_protocol_mca(&inst, &policies, &cfg, seed).unwrap();
        assert_eq!(run.outcome, first.outcome, "seed {seed}");
    }
    let one = run_protocol_mca(&inst, &policies, &cfg, 1).unwrap();
    let two = run_protocol_mca(&inst, &policies, &cfg, 2).unwrap();
    assert_eq!(one.outcome, two.outcome);
    assert_ne!(one.trace.messages, two.trace.messages);
    assert_eq!(one.trace.messages, run_protocol_mca(&inst, &policies, &cfg, 1).unwrap().trace.messages);
}

#[test]
fn broadcast_totals_match_centralized_sums() {
    let cfg = McaConfig::new(1e-3);
    let inst = instance(9);
    let policies = truthful_policies(&inst.users);
    let run = run_protocol_mca(&inst, &policies, &cfg, 4).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for m in &run.trace.messages {
        if let Payload::BroadcastTotals { lambda, total, terminal: false, .. } = m.payload {
            let bids: Vec<f64> = inst.users.iter().map(|u| u.discomfort.best_response(lambda, u.feasible.q_max)).collect();
            assert_eq!(total.to_bits(), exact_sum(&bids).to_bits(), "iteration {}", m.iteration);
            seen.insert(m.iteration);
        }
    }
    assert_eq!(seen.len() as u64, run.iterations);
}


#[test]
fn tuples_conserve_the_clinched_total() {
    let cfg = McaConfig::new(1e-3);
    for seed in [3u64, 8, 13] {
        let inst = instance(seed);
        let policies = truthful_policies(&inst.users);
        let central = run_mca(&inst, &policies, &cfg).unwrap();
        let run = run_protocol_mca(&inst, &policies, &cfg, seed).unwrap();
        let index: std::collections::HashMap<UserId, usize> =
            inst.users.iter().enumerate().map(|(i, u)| (u.id, i)).collect();
        let ledger_total = |upto: u64| {
            let mut cumulative = vec![0.0; inst.len()];
            for e in central.ledger.events.iter().filter(|e| e.iteration <= upto) {
                cumulative[index[&e.user_id]] += e.quantity;
            }
            exact_sum(&cumulative)
        };
        // The last clinching iteration shares its label with the rationing step.
        let last_clinch = run.iterations - 1;
        let (rationed, steps) = run.custody_totals.split_last().unwrap();
        assert_eq!(steps.len() as u64, run.iterations, "instance {seed}");
        for &(k, total) in steps.iter().filter(|(k, _)| *k < last_clinch) {
            assert_eq!(total, ledger_total(k), "instance {seed}, iteration {k}");
        }
        assert!(steps.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(rationed.1, ledger_total(u64::MAX));
        assert_eq!(rationed.1, exact_sum(&central.outcome.allocation));
    }
}

#[test]
fn clinch_increments_match_central_step() {
    let mut overlay = Overlay::new(4, 21).unwrap();
    let rounds: [([f64; 4], f64); 3] = [
        ([9.0, 7.5, 6.0, 4.25], 10.0),
        ([8.0, 7.0, 5.5, 4.0], 14.0),
        ([7.25, 6.5, 5.0, 3.75], 19.0),
    ];
    let mut prior = vec![0.0; 4];
    for (k, (bids, demand)) in rounds.iter().enumerate() {
        let k = k as u64;
        let storers = overlay.store_bids(k, bids).unwrap();
        let total = overlay.aggregate_sum(k).unwrap();
        assert_eq!(total, exact_sum(bids));
        overlay.handoff_tuples(k);
        let zetas = overlay.broadcast_and_clinch(k, 1.0, total, *demand).unwrap();
        let expected = clinch_step(bids, *demand, &prior);
        for (owner, w) in storers.iter().enumerate() {
            let (_, z) = zetas.iter().find(|(node, _)| node == w).unwrap();
            assert_eq!(z.to_bits(), expected[owner].to_bits(), "iteration {k}, owner {owner}");
            prior[owner] += expected[owner];
        }
    }
}

#[test]
fn storage_is_uniform_over_other_nodes() {
    const N: usize = 16;
    let mut overlay = Overlay::new(N, 2024).unwrap();
    let ids = overlay.node_ids().to_vec();
    let mut counts = vec![vec![0u32; N]; N];
    for k in 0..625u64 {
        let storers = overlay.store_bids(k, &[1.0; N]).unwrap();
        for (owner, w) in storers.iter().enumerate() {
            counts[owner][ids.iter().position(|id| id == w).unwrap()] += 1;
        }
    }
    let expected = 625.0 / (N - 1) as f64;
    let mut stat = 0.0;
    for (owner, row) in counts.iter().enumerate() {
        assert_eq!(row[owner], 0);
        for (w, &c) in row.iter().enumerate() {
            if w != owner {
                stat += (c as f64 - expected).powi(2) / expected;
            }
        }
    }
    let dof = (N * (N - 2)) as f64;
    let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
    assert!(p > 1e-3, "chi-square {stat:.1} on {dof} dof, p = {p:.2e}");
}

#[test]
fn tuples_never_visit_their_owner_before_delivery() {
    let cfg = McaConfig::new(1e-3);
    for seed in 0..5 {
        let inst = instance(seed + 30);
        let run = run_protocol_mca(&inst, &truthful_policies(&inst.users), &cfg, seed).unwrap();
        let mut owner_of = std::collections::HashMap::new();
        for m in &run.trace.messages {
            if let Payload::StoreBid { slot, .. } = m.payload {
                let prev = owner_of.insert(slot, m.from);
                assert!(prev.is_none() || prev == Some(m.from));
            }
        }
        let mut delivered = 0;
        for m in &run.trace.messages {
            match &m.payload {
                Payload::StoreBid { slot, .. } => assert_ne!(m.to, owner_of[slot]),
                Payload::TupleHandoff { slot, to_owner: false, .. } => assert_ne!(m.to, owner_of[slot]),
                Payload::TupleHandoff { slot, to_owner: true, .. } => {
                    assert_eq!(m.to, owner_of[slot]);
                    delivered += 1;
                }
                Payload::FinalReport { .. } => assert_eq!(m.to, Endpoint::Fsp),
                _ => assert!(m.to != Endpoint::Fsp),
            }
        }
        assert_eq!(delivered, inst.len());
    }
}

#[test]
fn single_user_protocol_warns_and_matches() {
    let inst = Instance::new(vec![User::new(4, 0.2, 30.0, 30.0)], 3.0, 0.02);
    let policies = truthful_policies(&inst.users);
    let cfg = McaConfig::new(1e-3);
    let run = run_protocol_mca(&inst, &policies, &cfg, 9).unwrap();
    assert!(run.warnings.iter().any(|w| w.contains("single-node")));
    assert_eq!(run.outcome, run_mca(&inst, &policies, &cfg).unwrap().outcome);
}

fn honest_trace() -> ProtocolTrace {
    let inst = instance(4);
    run_protocol_mca(&inst, &truthful_policies(&inst.users), &McaConfig::new(1e-2), 3).unwrap().trace
}

fn failing(report: &PrivacyReport) -> Vec<&'static str> {
    report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
}

#[test]
fn named_store_bid_fails_anonymity_check() {
    let mut trace = honest_trace();
    let idx = trace.messages.iter().rposition(|m| m.kind() == MessageKind::StoreBid).unwrap();
    if let Payload::StoreBid { owner, .. } = &mut trace.messages[idx].payload {
        *owner = Some(UserId(0));
    }
    let report = assert_privacy(&trace);
    assert_eq!(failing(&report), vec![CHECK_ANONYMOUS_STORE]);
    assert_eq!(report.check(CHECK_ANONYMOUS_STORE).unwrap().offending, vec![trace.messages[idx].seq]);
}

#[test]
fn per_iteration_report_fails_aggregate_check() {
    let mut trace = honest_trace();
    let last = trace.messages.len() - 1;
    if let Payload::FinalReport { per_iteration, .. } = &mut trace.messages[last].payload {
        per_iteration.extend([0.5, 0.25]);
    } else {
        panic!("trace ends with a final report");
    }
    let report = assert_privacy(&trace);
    assert_eq!(failing(&report), vec![CHECK_AGGREGATE_REPORTS]);
    assert_eq!(report.check(CHECK_AGGREGATE_REPORTS).unwrap().offending, vec![last as u64]);
}

#[test]
fn bid_sent_to_fsp_fails_first_check() {
    let mut trace = honest_trace();
    let idx = trace.messages.iter().position(|m| m.kind() == MessageKind::StoreBid).unwrap();
    trace.messages[idx].to = Endpoint::Fsp;
    let report = assert_privacy(&trace);
    assert_eq!(failing(&report), vec![CHECK_NO_BIDS_TO_FSP]);
}

#[test]
fn two_foreign_bids_at_one_node_fail_third_check() {
    let mut trace = honest_trace();
    let stores: Vec<usize> = trace
        .messages
        .iter()
        .enumerate()
        .filter(|(_, m)| m.kind() == MessageKind::StoreBid && m.iteration == 0)
        .map(|(i, _)| i)
        .collect();
    // Redirect the second bid to wherever the first one went.
    let target = trace.messages[stores[0]].to;
    let j = stores[1..].iter().copied().find(|&j| trace.messages[j].from != target).unwrap();
    trace.messages[j].to = target;
    let report = assert_privacy(&trace);
    assert_eq!(failing(&report), vec![CHECK_ONE_FOREIGN_BID]);
    let offending = &report.check(CHECK_ONE_FOREIGN_BID).unwrap().offending;
    assert!(offending.contains(&(stores[0] as u64)) && offending.contains(&(j as u64)));
}

#[test]
fn audit_runs_on_the_serialized_log() {
    let trace = honest_trace();
    let text = trace.to_jsonl();
    assert_eq!(text.lines().count(), trace.messages.len());
    let parsed = ProtocolTrace::from_jsonl(&text, trace.rng_seed).unwrap();
    assert!(assert_privacy(&parsed).passed());
    let corrupted = text.replacen("\"payload\":{\"slot\":", "\"payload\":{\"owner\":3,\"slot\":", 1);
    let report = assert_privacy(&ProtocolTrace::from_jsonl(&corrupted, trace.rng_seed).unwrap());
    assert_eq!(failing(&report), vec![CHECK_ANONYMOUS_STORE]);
}
