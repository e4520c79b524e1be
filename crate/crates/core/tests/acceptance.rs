//! Exit criteria. Every check prints one PASS/FAIL line; the test fails if
//! any of them fails.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use flexclinch::agents::truthful_policies;
use flexclinch::mechanisms::{run_mca, run_vcg, solve_welfare_max, McaConfig, Outcome, VcgConfig, DEFAULT_TOLERANCE};
use flexclinch::metrics::{
    cheater_sweep, default_omega_grid, grid_welfare_max, log_log_slope, proportional_welfare_loss,
    welfare_loss_bound, SweepMechanism,
};
use flexclinch::model::{Discomfort, Instance, User, UserId};
use flexclinch::numeric::exact_sum;
use flexclinch::protocol::{
    assert_privacy, run_protocol_mca, MessageKind, Payload, CHECK_AGGREGATE_REPORTS, CHECK_ANONYMOUS_STORE,
};
use flexclinch::scenario::{random_instance, OmegaFamily, Population, DEFAULT_USERS, DEFAULT_A, DEFAULT_B};
use rayon::prelude::*;

/// Every (VCG welfare, MCA welfare, bound) pair observed by the suite.
static BOUND_LOG: Mutex<Vec<(String, f64, f64, f64)>> = Mutex::new(Vec::new());

/// Every truthful outcome observed by the suite, for the IR and budget checks.
static OUTCOME_LOG: Mutex<Vec<(String, Instance, Outcome)>> = Mutex::new(Vec::new());

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn record_gap(label: String, inst: &Instance, vcg: &Outcome, mca: &Outcome, eps: f64) {
    let bound = welfare_loss_bound(eps, inst.reward.lambda_max(), inst.reward.b).unwrap();
    BOUND_LOG.lock().unwrap().push((label, vcg.welfare, mca.welfare, bound));
}

fn record_outcome(label: String, inst: &Instance, outcome: &Outcome) {
    OUTCOME_LOG.lock().unwrap().push((label, inst.clone(), outcome.clone()));
}

/// Instance family used by the equivalence checks: 2 to 8 users, both
/// omega families, omega_f from 1 to 5.
fn suite_instance(seed: u64) -> Instance {
    let n = 2 + (seed % 7) as usize;
    let family = if seed.is_multiple_of(2) { OmegaFamily::Narrow } else { OmegaFamily::Wide };
    random_instance(n, family, 1.0 + (seed % 5) as f64, seed)
}

fn mca_matches_vcg() -> Verdict {
    const EPS: f64 = 1e-4;
    let start = Instant::now();
    let failures: Vec<String> = (0..100u64)
        .into_par_iter()
        .filter_map(|seed| {
            let inst = suite_instance(1000 + seed);
            let mca = run_mca(&inst, &truthful_policies(&inst.users), &McaConfig::new(EPS)).unwrap().outcome;
            let vcg = run_vcg(&inst, &VcgConfig::default()).unwrap();
            record_gap(format!("equivalence #{seed}"), &inst, &vcg, &mca, EPS);
            record_outcome(format!("equivalence #{seed} mca"), &inst, &mca);
            record_outcome(format!("equivalence #{seed} vcg"), &inst, &vcg);
            let n = inst.len() as f64;
            let worst = mca.allocation.iter().zip(&vcg.allocation).map(|(m, v)| (m - v).abs()).fold(0.0, f64::max);
            let bound = welfare_loss_bound(EPS, inst.reward.a, inst.reward.b).unwrap();
            let gap = vcg.welfare - mca.welfare;
            (worst > 50.0 * EPS * n || gap > bound).then(|| format!("#{seed}: alloc diff {worst:.2e}, gap {gap:.2e}"))
        })
        .collect();
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(60);
    verdict(
        failures.is_empty() && fast,
        format!("100 instances in {:.1}s; violations: {:?}", elapsed.as_secs_f64(), failures),
    )
}

fn clinching_is_truthful() -> Verdict {
    const EPS: f64 = 1e-4;
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let inst = suite_instance(2000 + seed);
        let cheater = (seed as usize) % inst.len();
        let grid = default_omega_grid(inst.users[cheater].discomfort.omega);
        let sweep = cheater_sweep(&inst, SweepMechanism::Mca(McaConfig::new(EPS)), cheater, &grid).unwrap();
        let steps = sweep.argmax_index().abs_diff(sweep.truthful_index());
        let excess = sweep.max_utility() - sweep.truthful_utility;
        worst_excess = worst_excess.max(excess);
        if steps > 1 || excess > 1e-6 {
            failures.push(format!("#{seed}: argmax {steps} steps away, excess {excess:.2e}"));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        failures.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "20 sweeps in {:.1}s; largest gain over truthful {worst_excess:.2e}; violations: {failures:?}",
            elapsed.as_secs_f64()
        ),
    )
}

fn profit_ratio_shape() -> Verdict {
    const EPS: f64 = 1e-4;
    let population = Population::draw(DEFAULT_USERS, 17);
    let mut mca_ratios = Vec::new();
    let mut mc_ratios = Vec::new();
    for omega_f in [1.0, 2.0, 3.0, 4.0, 5.0] {
        let inst = population.instance(OmegaFamily::Wide, omega_f, DEFAULT_A, DEFAULT_B);
        let grid = default_omega_grid(inst.users[0].discomfort.omega);
        let mca = cheater_sweep(&inst, SweepMechanism::Mca(McaConfig::new(EPS)), 0, &grid).unwrap();
        let mc = cheater_sweep(&inst, SweepMechanism::MarketClearing { tolerance: DEFAULT_TOLERANCE }, 0, &grid).unwrap();
        mca_ratios.push(mca.profit_ratio());
        mc_ratios.push(mc.profit_ratio());

        let honest = run_mca(&inst, &truthful_policies(&inst.users), &McaConfig::new(EPS)).unwrap().outcome;
        let vcg = run_vcg(&inst, &VcgConfig::default()).unwrap();
        record_gap(format!("profit ratio omega_f={omega_f}"), &inst, &vcg, &honest, EPS);
        record_outcome(format!("profit ratio omega_f={omega_f}"), &inst, &honest);
    }
    let mca_ok = mca_ratios.iter().all(|r| (r - 1.0).abs() <= 1e-3);
    let mc_ok = mc_ratios.iter().all(|&r| r <= 1.0) && mc_ratios.windows(2).all(|w| w[1] <= w[0]);
    verdict(mca_ok && mc_ok, format!("MCA ratios {mca_ratios:.6?}; market-clearing ratios {mc_ratios:.6?}"))
}

fn bound_never_violated() -> Verdict {
    let log = BOUND_LOG.lock().unwrap();
    let violations: Vec<&String> =
        log.iter().filter(|(_, w_vcg, w_mca, bound)| w_vcg - w_mca > bound + 1e-9).map(|(l, ..)| l).collect();
    let tightest = log
        .iter()
        .map(|(_, w_vcg, w_mca, bound)| (w_vcg - w_mca) / bound)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        violations.is_empty() && !log.is_empty(),
        format!("{} runs, largest gap/bound {tightest:.3e}; violations: {violations:?}", log.len()),
    )
}

fn sci(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
}

fn loss_scales_linearly() -> Verdict {
    let epsilons = [1e-4, 1e-3, 1e-2];
    let inst = Population::draw(DEFAULT_USERS, 17).instance(OmegaFamily::for_slot(17), 1.0, DEFAULT_A, DEFAULT_B);
    let vcg = run_vcg(&inst, &VcgConfig::default()).unwrap();
    let mut losses = Vec::new();
    for &eps in &epsilons {
        let mca = run_mca(&inst, &truthful_policies(&inst.users), &McaConfig::new(eps)).unwrap().outcome;
        record_gap(format!("epsilon sweep {eps}"), &inst, &vcg, &mca, eps);
        record_outcome(format!("epsilon sweep {eps}"), &inst, &mca);
        losses.push(proportional_welfare_loss(vcg.welfare, mca.welfare).unwrap());
    }
    match log_log_slope(&epsilons, &losses) {
        Ok(slope) => verdict((slope - 1.0).abs() <= 0.2, format!("losses {}, slope {slope:.3}", sci(&losses))),
        Err(e) => verdict(false, format!("losses {}: {e}", sci(&losses))),
    }
}

fn market_clearing_is_manipulable() -> Verdict {
    let inst = Instance::new(vec![User::new(0, 0.1, 10.0, 10.0), User::new(1, 0.1, 50.0, 50.0)], DEFAULT_A, DEFAULT_B);
    let cheater = 1;
    let grid = default_omega_grid(0.1);
    let sweep = cheater_sweep(&inst, SweepMechanism::MarketClearing { tolerance: DEFAULT_TOLERANCE }, cheater, &grid).unwrap();
    let gain = (sweep.max_utility() - sweep.truthful_utility) / sweep.truthful_utility.abs();
    verdict(
        gain >= 0.01,
        format!(
            "truthful {:.4}, best {:.4} at omega_fake {:.4}, relative gain {:.2}%",
            sweep.truthful_utility,
            sweep.max_utility(),
            sweep.argmax_omega,
            100.0 * gain
        ),
    )
}

fn welfare_solver_is_optimal() -> Verdict {
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for seed in 0..50u64 {
        let family = if seed.is_multiple_of(2) { OmegaFamily::Narrow } else { OmegaFamily::Wide };
        let inst = random_instance(2, family, 1.0 + (seed % 5) as f64, 3000 + seed);
        let sol = solve_welfare_max(&inst.users, &inst.reward, DEFAULT_TOLERANCE).unwrap();
        let cost: Vec<f64> = inst.users.iter().zip(&sol.allocation).map(|(u, &q)| u.discomfort.cost(q)).collect();
        let welfare = inst.reward.total(sol.total_reduction).unwrap() - exact_sum(&cost);
        let grid = grid_welfare_max(&inst, 200).unwrap();
        worst = worst.min(welfare - grid);
        if welfare < grid - 1e-4 {
            failures.push(seed);
        }
    }
    verdict(failures.is_empty(), format!("min(solver - grid) = {worst:.3e}; failing seeds {failures:?}"))
}

fn protocol_is_equivalent_and_private() -> Verdict {
    const EPS: f64 = 1e-3;
    let mut problems = Vec::new();
    for seed in 0..20u64 {
        let inst = suite_instance(4000 + seed);
        let policies = truthful_policies(&inst.users);
        let central = run_mca(&inst, &policies, &McaConfig::new(EPS)).unwrap();
        let run = run_protocol_mca(&inst, &policies, &McaConfig::new(EPS), seed).unwrap();
        let vcg = run_vcg(&inst, &VcgConfig::default()).unwrap();
        record_gap(format!("protocol #{seed}"), &inst, &vcg, &run.outcome, EPS);
        record_outcome(format!("protocol #{seed}"), &inst, &run.outcome);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if run.outcome != central.outcome
            || bits(&run.outcome.allocation) != bits(&central.outcome.allocation)
            || bits(&run.outcome.payment) != bits(&central.outcome.payment)
        {
            problems.push(format!("#{seed}: outcome differs"));
        }
        let report = assert_privacy(&run.trace);
        if !report.passed() {
            problems.push(format!("#{seed}: {report:?}"));
        }

        if seed == 0 {
            let mut named = run.trace.clone();
            let idx = named.messages.iter().position(|m| m.kind() == MessageKind::StoreBid).unwrap();
            if let Payload::StoreBid { owner, .. } = &mut named.messages[idx].payload {
                *owner = Some(UserId(0));
            }
            let check = assert_privacy(&named).check(CHECK_ANONYMOUS_STORE).cloned().unwrap();
            if check.passed || check.offending != vec![idx as u64] {
                problems.push("named StoreBid not caught".into());
            }

            let mut detailed = run.trace.clone();
            let idx = detailed.messages.len() - 1;
            if let Payload::FinalReport { per_iteration, .. } = &mut detailed.messages[idx].payload {
                per_iteration.push(1.0);
            }
            let check = assert_privacy(&detailed).check(CHECK_AGGREGATE_REPORTS).cloned().unwrap();
            if check.passed || check.offending != vec![idx as u64] {
                problems.push("per-iteration FinalReport not caught".into());
            }
        }
    }
    verdict(problems.is_empty(), format!("20 instances; problems: {problems:?}"))
}

fn rational_and_budget_balanced() -> Verdict {
    let log = OUTCOME_LOG.lock().unwrap();
    let mut failures = Vec::new();
    for (label, inst, outcome) in log.iter() {
        let worst_utility = outcome.utilities(inst).into_iter().fold(f64::INFINITY, f64::min);
        let reward = inst.reward.total(exact_sum(&outcome.allocation).min(inst.reward.l)).unwrap();
        let paid = exact_sum(&outcome.payment);
        if worst_utility < -1e-9 || paid > reward + 1e-9 {
            failures.push(format!("{label}: min utility {worst_utility:.3e}, paid {paid:.6} of {reward:.6}"));
        }
    }
    verdict(failures.is_empty() && !log.is_empty(), format!("{} outcomes; violations: {failures:?}", log.len()))
}

#[test]
fn acceptance() {
    // Criterion 4 and 9 read what the others logged, so they run last.
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("1 clinching matches VCG", mca_matches_vcg),
        ("2 truthful bidding is optimal under clinching", clinching_is_truthful),
        ("3 FSP profit ratio", profit_ratio_shape),
        ("5 welfare loss linear in epsilon", loss_scales_linearly),
        ("6 market clearing is manipulable", market_clearing_is_manipulable),
        ("7 welfare solver beats grid search", welfare_solver_is_optimal),
        ("8 protocol equivalence and privacy", protocol_is_equivalent_and_private),
        ("4 welfare loss within bound", bound_never_violated),
        ("9 individual rationality and budget balance", rational_and_budget_balanced),
    ];
    let mut results: Vec<(&str, Verdict)> = criteria.iter().map(|(name, check)| (*name, check())).collect();
    results.sort_by_key(|(name, _)| name.split(' ').next().unwrap().parse::<u32>().unwrap());
    for (name, v) in &results {
        println!("criterion {name}: {} ({})", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|(_, v)| !v.passed).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
