//! Descending-price clinching auction.
//!
//! The FSP starts at `lambda = a` and lowers the per-unit reward by `epsilon`
//! per iteration. Whenever the operator's desired reduction exceeds what all
//! *other* users offer, user `i` irrevocably clinches the difference at the
//! current price. Once supply no longer exceeds demand, the demand left at
//! the previous price is rationed over the previous bids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::market_clearing::check_policies;
use super::{MechanismKind, Outcome};
use crate::agents::{respond, AgentPolicy};
use crate::error::{input, Error, Result};
use crate::model::{Instance, UserId};
use crate::numeric::exact_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rationing {
    /// Splits `D - sum(prior)` over the residual bids `bid - prior`, so the
    /// final allocation totals exactly the desired reduction.
    #[default]
    ResidualDemand,
    /// `(bid - prior) * D / sum(bid)`. Overshoots when prior clinches are nonzero.
    Line11Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McaConfig {
    pub epsilon: f64,
    pub rationing: Rationing,
}

impl McaConfig {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, rationing: Rationing::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClinchEvent {
    pub iteration: u64,
    pub user_id: UserId,
    pub lambda: f64,
    pub quantity: f64,
}

/// Audit trail of every unit clinched during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClinchLedger {
    pub events: Vec<ClinchEvent>,
    totals: BTreeMap<UserId, f64>,
}

impl ClinchLedger {
    fn record(&mut self, iteration: u64, user_id: UserId, lambda: f64, quantity: f64) {
        self.events.push(ClinchEvent { iteration, user_id, lambda, quantity });
        *self.totals.entry(user_id).or_insert(0.0) += quantity;
    }

    /// Sum of everything `user` clinched.
    pub fn cumulative(&self, user: UserId) -> f64 {
        self.totals.get(&user).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// CSV rows `iteration,user_id,lambda,zeta`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "user_id", "lambda", "zeta"]).expect("in-memory write");
        for e in &self.events {
            w.write_record([
                e.iteration.to_string(),
                e.user_id.to_string(),
                e.lambda.to_string(),
                e.quantity.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Result of a clinching auction run.
#[derive(Debug, Clone, PartialEq)]
pub struct McaRun {
    pub outcome: Outcome,
    pub ledger: ClinchLedger,
    /// Number of price decrements until supply stopped exceeding demand.
    pub iterations: u64,
    /// Price at which the loop exited.
    pub terminal_lambda: f64,
    /// Whether the degenerate full-shutdown branch settled the event.
    pub shutdown: bool,
}

/// `lambda^k = a - k*eps`, floored at zero. Computed by multiplication so the
/// grid does not drift over hundreds of thousands of steps.
pub(crate) fn lambda_at(a: f64, epsilon: f64, k: u64) -> f64 {
    (a - k as f64 * epsilon).max(0.0)
}

/// New units clinched by a bidder given the demand, the exactly rounded
/// total of all bids, the bidder's own bid and what it clinched before.
///
/// `total - own_bid` is everything the rivals offer; the result therefore
/// does not depend on `own_bid` beyond floating-point rounding.
pub(crate) fn clinch_increment(demand: f64, total: f64, own_bid: f64, prior: f64) -> f64 {
    let clinchable = (demand - (total - own_bid)).max(0.0);
    (clinchable - prior).max(0.0)
}

pub(crate) fn ration_increment(rationing: Rationing, bid: f64, prior: f64, demand: f64, total: f64, prior_total: f64) -> f64 {
    let residual_bid = (bid - prior).max(0.0);
    match rationing {
        Rationing::ResidualDemand => {
            let residual_bids = total - prior_total;
            if residual_bids <= 0.0 {
                return 0.0;
            }
            (residual_bid * (demand - prior_total) / residual_bids).max(0.0)
        }
        Rationing::Line11Literal => {
            if total <= 0.0 {
                return 0.0;
            }
            residual_bid * demand / total
        }
    }
}

/// Increments clinched by each bidder in one iteration.
pub fn clinch_step(bids: &[f64], demand: f64, prior_cumulative: &[f64]) -> Vec<f64> {
    let total = exact_sum(bids);
    bids.iter()
        .zip(prior_cumulative)
        .map(|(&q, &prior)| clinch_increment(demand, total, q, prior))
        .collect()
}

/// Residual-demand rationing at the second-to-last price.
pub fn final_rationing(bids: &[f64], prior_cumulative: &[f64], demand: f64) -> Vec<f64> {
    ration_all(Rationing::ResidualDemand, bids, prior_cumulative, demand)
}

/// `Line11Literal` rationing, for comparison.
pub fn final_rationing_literal(bids: &[f64], prior_cumulative: &[f64], demand: f64) -> Vec<f64> {
    ration_all(Rationing::Line11Literal, bids, prior_cumulative, demand)
}

fn ration_all(rationing: Rationing, bids: &[f64], prior: &[f64], demand: f64) -> Vec<f64> {
    let total = exact_sum(bids);
    let prior_total = exact_sum(prior);
    bids.iter()
        .zip(prior)
        .map(|(&q, &c)| ration_increment(rationing, q, c, demand, total, prior_total))
        .collect()
}

/// Runs the clinching auction with every user answering through `policies`.
pub fn run_mca(instance: &Instance, policies: &[AgentPolicy], config: &McaConfig) -> Result<McaRun> {
    let reward = &instance.reward;
    reward.require_curvature()?;
    check_policies(instance, policies)?;
    let eps = config.epsilon;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(input(format!("epsilon must be positive, got {eps}")));
    }
    let n = policies.len();
    if n == 0 {
        return Ok(McaRun {
            outcome: Outcome::empty(MechanismKind::Mca),
            ledger: ClinchLedger::default(),
            iterations: 0,
            terminal_lambda: reward.a,
            shutdown: false,
        });
    }

    let a = reward.lambda_max();
    let query = |lambda: f64| -> Vec<f64> { policies.iter().map(|p| respond(p, lambda).quantity).collect() };

    // Degenerate case: paying a per unit for everything offered at the top
    // price costs no more than the reward it earns. Everybody sheds their
    // top bid and the reward is split in proportion. With b > 0 this only
    // triggers when nobody offers anything.
    let top_bids = query(a);
    let top_total = exact_sum(&top_bids);
    if a * top_total <= reward.total_unchecked(top_total.min(reward.l)) {
        let pot = reward.total_unchecked(top_total.min(reward.l));
        let payment = top_bids
            .iter()
            .map(|&q| if top_total > 0.0 { pot * q / top_total } else { 0.0 })
            .collect();
        return Ok(McaRun {
            outcome: Outcome::assemble(MechanismKind::Mca, instance, top_bids, payment, Some(a)),
            ledger: ClinchLedger::default(),
            iterations: 0,
            terminal_lambda: a,
            shutdown: true,
        });
    }

    let cap = (a / eps).ceil() as u64 + 2;
    let mut ledger = ClinchLedger::default();
    let mut cumulative = vec![0.0; n];
    let mut payment = vec![0.0; n];
    let mut previous: Option<(f64, Vec<f64>, f64, f64)> = None;
    let mut k = 0u64;
    let terminal_lambda = loop {
        let lambda = lambda_at(a, eps, k);
        let bids = if k == 0 { top_bids.clone() } else { query(lambda) };
        let demand = reward.demand_at(lambda);
        let total = exact_sum(&bids);
        if demand >= total {
            break lambda;
        }
        for i in 0..n {
            let zeta = clinch_increment(demand, total, bids[i], cumulative[i]);
            if zeta > 0.0 {
                cumulative[i] += zeta;
                payment[i] += zeta * lambda;
                ledger.record(k, policies[i].user_id, lambda, zeta);
            }
        }
        previous = Some((lambda, bids, demand, total));
        k += 1;
        if k > cap {
            return Err(Error::IterationCap { cap });
        }
    };

    let mut last_price = None;
    if let Some((lambda, bids, demand, total)) = previous {
        let prior_total = exact_sum(&cumulative);
        for i in 0..n {
            let zeta = ration_increment(config.rationing, bids[i], cumulative[i], demand, total, prior_total);
            if zeta > 0.0 {
                cumulative[i] += zeta;
                payment[i] += zeta * lambda;
                ledger.record(k - 1, policies[i].user_id, lambda, zeta);
            }
        }
        last_price = Some(lambda);
    }

    Ok(McaRun {
        outcome: Outcome::assemble(MechanismKind::Mca, instance, cumulative, payment, last_price),
        ledger,
        iterations: k,
        terminal_lambda,
        shutdown: false,
    })
}
