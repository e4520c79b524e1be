use flexclinch::agents::{truthful_policies, AgentPolicy};
use flexclinch::mechanisms::{clinch_step, run_market_clearing, run_mca, run_vcg, McaConfig, VcgConfig, DEFAULT_TOLERANCE};
use flexclinch::metrics::{fsp_profit, welfare_loss_bound};
use flexclinch::model::Instance;
use flexclinch::numeric::exact_sum;
use flexclinch::scenario::{random_instance, OmegaFamily};
use proptest::prelude::*;

const EPS: f64 = 1e-3;

fn instances() -> impl Strategy<Value = Instance> {
    (2usize..=8, any::<bool>(), 1u32..=5, any::<u64>()).prop_map(|(n, wide, omega_f, seed)| {
        let family = if wide { OmegaFamily::Wide } else { OmegaFamily::Narrow };
        random_instance(n, family, omega_f as f64, seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clinching_tracks_the_welfare_optimum(inst in instances()) {
        let run = run_mca(&inst, &truthful_policies(&inst.users), &McaConfig::new(EPS)).unwrap();
        let vcg = run_vcg(&inst, &VcgConfig::default()).unwrap();
        let n = inst.len() as f64;
        for (m, v) in run.outcome.allocation.iter().zip(&vcg.allocation) {
            prop_assert!((m - v).abs() <= 50.0 * EPS * n, "{m} vs {v}");
        }
        let bound = welfare_loss_bound(EPS, inst.reward.a, inst.reward.b).unwrap();
        prop_assert!(vcg.welfare - run.outcome.welfare <= bound + 1e-9);
    }

    #[test]
    fn truthful_users_never_lose(inst in instances()) {
        let run = run_mca(&inst, &truthful_policies(&inst.users), &McaConfig::new(EPS)).unwrap();
        let vcg = run_vcg(&inst, &VcgConfig::default()).unwrap();
        for outcome in [&run.outcome, &vcg] {
            for u in outcome.utilities(&inst) {
                prop_assert!(u >= -1e-9, "{:?} utility {u}", outcome.mechanism);
            }
        }
    }

    #[test]
    fn payments_stay_within_the_reward(inst in instances()) {
        let run = run_mca(&inst, &truthful_policies(&inst.users), &McaConfig::new(EPS)).unwrap();
        let vcg = run_vcg(&inst, &VcgConfig::default()).unwrap();
        for outcome in [&run.outcome, &vcg] {
            let reward = inst.reward.total(exact_sum(&outcome.allocation).min(inst.reward.l)).unwrap();
            prop_assert!(exact_sum(&outcome.payment) <= reward + 1e-9);
            prop_assert!(fsp_profit(outcome, &inst) >= -1e-9);
        }
    }

    #[test]
    fn iteration_count_follows_the_price_grid(inst in instances(), eps_exp in 2i32..=4) {
        let eps = 10f64.powi(-eps_exp);
        let a = inst.reward.a;
        let run = run_mca(&inst, &truthful_policies(&inst.users), &McaConfig::new(eps)).unwrap();
        prop_assert!(run.iterations <= (a / eps).ceil() as u64 + 2);
        if run.terminal_lambda > 0.0 {
            let steps = ((a - run.terminal_lambda) / eps - 1e-6).ceil() as u64;
            prop_assert_eq!(run.iterations, steps);
        }
        let sum: f64 = exact_sum(&run.outcome.allocation);
        let target = inst.reward.desired_reduction(run.outcome.price.unwrap()).unwrap();
        prop_assert!((sum - target).abs() <= 1e-9 * target.max(1.0));
    }

    #[test]
    fn clinch_ignores_own_bid(
        own in 0.0f64..60.0,
        rivals in prop::collection::vec(0.0f64..60.0, 1..6),
        demand in 0.0f64..75.0,
    ) {
        let mut bids = vec![0.0];
        bids.extend(&rivals);
        let prior = vec![0.0; bids.len()];
        let base = clinch_step(&bids, demand, &prior)[0];
        bids[0] = own;
        let moved = clinch_step(&bids, demand, &prior)[0];
        prop_assert!((base - moved).abs() <= 1e-9 * demand.max(1.0));
        prop_assert_eq!(base, (demand - exact_sum(&rivals)).max(0.0));
    }

    #[test]
    fn market_clearing_pays_a_uniform_price(inst in instances()) {
        let out = run_market_clearing(&inst, &truthful_policies(&inst.users), DEFAULT_TOLERANCE).unwrap();
        let price = out.price.unwrap();
        for (q, r) in out.allocation.iter().zip(&out.payment) {
            prop_assert!((r - price * q).abs() <= 1e-9 * r.abs().max(1.0));
        }
    }

    #[test]
    fn misreporting_never_pays_under_clinching(inst in instances(), pick in any::<prop::sample::Index>(), scale in 0.05f64..20.0) {
        let i = pick.index(inst.len());
        let user = &inst.users[i];
        let cfg = McaConfig::new(EPS);
        let honest = run_mca(&inst, &truthful_policies(&inst.users), &cfg).unwrap().outcome;
        let mut policies = truthful_policies(&inst.users);
        policies[i] = AgentPolicy::misreport(user, user.discomfort.omega * scale).unwrap();
        let lied = run_mca(&inst, &policies, &cfg).unwrap().outcome;
        let u_honest = honest.utilities(&inst)[i];
        let u_lied = lied.utilities(&inst)[i];
        // Coarse price steps leave a discretization margin of order eps * q.
        prop_assert!(u_lied <= u_honest + EPS * user.feasible.q_max, "{u_lied} > {u_honest}");
    }
}
