//! Welfare, profit and strategic-sweep measurements.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{realized_utility, AgentPolicy};
use crate::error::{input, Error, Result};
use crate::mechanisms::{run_market_clearing, run_mca, McaConfig, Outcome};
use crate::model::{Discomfort, Instance, UserId};
use crate::numeric::exact_sum;

/// Allocation slack tolerated when checking feasibility.
const FEASIBILITY_SLACK: f64 = 1e-9;

/// `R(D) - sum d_i(q_i)` under the users' true discomfort.
pub fn social_welfare(outcome: &Outcome, instance: &Instance) -> Result<f64> {
    if outcome.allocation.is_empty() && instance.users.is_empty() {
        return Ok(0.0);
    }
    if outcome.allocation.len() != instance.users.len() {
        return Err(input(format!(
            "allocation has {} entries for {} users",
            outcome.allocation.len(),
            instance.users.len()
        )));
    }
    for (u, &q) in instance.users.iter().zip(&outcome.allocation) {
        if !(q >= -FEASIBILITY_SLACK && q <= u.feasible.q_max + FEASIBILITY_SLACK) {
            return Err(input(format!("user {} allocated {q} outside [0, {}]", u.id, u.feasible.q_max)));
        }
    }
    let total = exact_sum(&outcome.allocation);
    if total > instance.reward.l + FEASIBILITY_SLACK {
        return Err(input(format!("total reduction {total} exceeds L = {}", instance.reward.l)));
    }
    let costs: Vec<f64> = instance
        .users
        .iter()
        .zip(&outcome.allocation)
        .map(|(u, &q)| u.discomfort.cost(q.max(0.0)))
        .collect();
    Ok(instance.reward.total_unchecked(total) - exact_sum(&costs))
}

/// Operator reward kept by the FSP after paying the users.
pub fn fsp_profit(outcome: &Outcome, instance: &Instance) -> f64 {
    let total = exact_sum(&outcome.allocation);
    instance.reward.total_unchecked(total) - exact_sum(&outcome.payment)
}

/// Worst-case welfare lost to the price step: `(eps^2 + lambda_max*eps) / 2b`.
pub fn welfare_loss_bound(epsilon: f64, lambda_max: f64, b: f64) -> Result<f64> {
    if b <= 0.0 {
        return Err(Error::DegenerateDemand);
    }
    if !(epsilon > 0.0) {
        return Err(input(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok((epsilon * epsilon + lambda_max * epsilon) / (2.0 * b))
}

pub fn proportional_welfare_loss(w_opt: f64, w_mca: f64) -> Result<f64> {
    if !(w_opt > 0.0) {
        return Err(input(format!("optimal welfare must be positive, got {w_opt}")));
    }
    Ok((w_opt - w_mca) / w_opt)
}

/// Largest welfare on a uniform grid of `points` values per user over
/// `[0, q_max]`. Exhaustive, so limited to three users.
pub fn grid_welfare_max(instance: &Instance, points: usize) -> Result<f64> {
    let n = instance.users.len();
    if n > 3 {
        return Err(input(format!("grid search limited to 3 users, got {n}")));
    }
    if points < 2 {
        return Err(input("grid needs at least two points per user"));
    }
    let axes: Vec<Vec<(f64, f64)>> = instance
        .users
        .iter()
        .map(|u| {
            (0..points)
                .map(|k| {
                    let q = u.feasible.q_max * k as f64 / (points - 1) as f64;
                    (q, u.discomfort.cost(q))
                })
                .collect()
        })
        .collect();
    let r = &instance.reward;
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; n];
    loop {
        let (mut total, mut cost) = (0.0, 0.0);
        for (axis, &k) in axes.iter().zip(&idx) {
            total += axis[k].0;
            cost += axis[k].1;
        }
        if total <= r.l {
            best = best.max(r.total_unchecked(total) - cost);
        }
        let mut d = 0;
        loop {
            if d == n {
                return Ok(best.max(0.0));
            }
            idx[d] += 1;
            if idx[d] < points {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `points` log-spaced values over `[omega/span, omega*span]`; the middle
/// point (odd `points`) is exactly `omega`.
pub fn log_omega_grid(omega: f64, points: usize, span: f64) -> Vec<f64> {
    if points <= 1 {
        return vec![omega];
    }
    let half = (points - 1) as f64 / 2.0;
    (0..points)
        .map(|k| {
            let t = (k as f64 - half) / half;
            if t == 0.0 {
                omega
            } else {
                omega * span.powf(t)
            }
        })
        .collect()
}

/// Default misreport grid: 201 points spanning a factor 10 either side.
pub fn default_omega_grid(omega: f64) -> Vec<f64> {
    log_omega_grid(omega, 201, 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepMechanism {
    Mca(McaConfig),
    MarketClearing { tolerance: f64 },
}

impl SweepMechanism {
    pub fn run(&self, instance: &Instance, policies: &[AgentPolicy]) -> Result<Outcome> {
        match self {
            SweepMechanism::Mca(cfg) => run_mca(instance, policies, cfg).map(|r| r.outcome),
            SweepMechanism::MarketClearing { tolerance } => run_market_clearing(instance, policies, *tolerance),
        }
    }
}

/// One cheater's utility and the FSP profit across a grid of reported
/// inelasticities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cheater: UserId,
    pub omega_real: f64,
    pub grid: Vec<f64>,
    pub utilities: Vec<f64>,
    pub profits: Vec<f64>,
    pub argmax_omega: f64,
    pub truthful_utility: f64,
    pub fsp_profit_truthful: f64,
    /// Profit when the cheater reports its utility-maximizing omega.
    pub fsp_profit_cheat: f64,
}

impl SweepResult {
    pub fn max_utility(&self) -> f64 {
        self.utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn profit_ratio(&self) -> f64 {
        self.fsp_profit_cheat / self.fsp_profit_truthful
    }

    /// Grid index of `omega_real`, or the nearest point.
    pub fn truthful_index(&self) -> usize {
        nearest_index(&self.grid, self.omega_real)
    }

    pub fn argmax_index(&self) -> usize {
        nearest_index(&self.grid, self.argmax_omega)
    }

    /// CSV with columns `omega_fake,cheater_utility,fsp_profit`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["omega_fake", "cheater_utility", "fsp_profit"]).expect("in-memory write");
        for ((o, u), p) in self.grid.iter().zip(&self.utilities).zip(&self.profits) {
            w.write_record([o.to_string(), u.to_string(), p.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

fn nearest_index(grid: &[f64], x: f64) -> usize {
    grid.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Runs `mechanism` once per grid value with user `cheater` misreporting
/// that omega and everybody else truthful. Grid points are evaluated in
/// parallel; the result is in grid order.
pub fn cheater_sweep(
    instance: &Instance,
    mechanism: SweepMechanism,
    cheater: usize,
    omega_grid: &[f64],
) -> Result<SweepResult> {
    let user = instance
        .users
        .get(cheater)
        .ok_or_else(|| input(format!("cheater index {cheater} out of range")))?;
    if omega_grid.is_empty() {
        return Err(input("omega grid is empty"));
    }
    let truthful = crate::agents::truthful_policies(&instance.users);
    let cheater_utility = |o: &Outcome| realized_utility(o.allocation[cheater], o.payment[cheater], &user.discomfort);

    let honest = mechanism.run(instance, &truthful)?;
    let points: Vec<(f64, f64)> = omega_grid
        .par_iter()
        .map(|&omega| {
            let mut policies = truthful.clone();
            policies[cheater] = AgentPolicy::misreport(user, omega)?;
            let o = mechanism.run(instance, &policies)?;
            Ok((cheater_utility(&o), fsp_profit(&o, instance)))
        })
        .collect::<Result<_>>()?;
    let (utilities, profits): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();

    // First maximizer wins, so ties resolve toward the smaller omega.
    let mut best = 0;
    for (i, &u) in utilities.iter().enumerate() {
        if u > utilities[best] {
            best = i;
        }
    }
    Ok(SweepResult {
        cheater: user.id,
        omega_real: user.discomfort.omega,
        argmax_omega: omega_grid[best],
        truthful_utility: cheater_utility(&honest),
        fsp_profit_truthful: fsp_profit(&honest, instance),
        fsp_profit_cheat: profits[best],
        grid: omega_grid.to_vec(),
        utilities,
        profits,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(input("slope needs at least two paired points"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(input("log-log slope needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
