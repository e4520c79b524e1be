//! The market mechanisms and their common outcome type.

mod market_clearing;
mod mca;
mod vcg;
mod welfare;

use serde::{Deserialize, Serialize};

use crate::agents::realized_utility;
use crate::model::{Discomfort, Instance, UserId};
use crate::numeric::exact_sum;

pub use market_clearing::{run_fixed_price, run_market_clearing};
pub use mca::{
    clinch_step, final_rationing, final_rationing_literal, run_mca, ClinchEvent, ClinchLedger,
    McaConfig, McaRun, Rationing,
};
pub(crate) use market_clearing::check_policies;
pub(crate) use mca::{clinch_increment, lambda_at, ration_increment};
pub use vcg::{run_vcg, ExternalityTerm, VcgConfig};
pub use welfare::{solve_welfare_max, WelfareSolution};

/// Default width of the bisection bracket on the per-unit reward.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    Mca,
    Vcg,
    MarketClearing,
    FixedPrice,
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MechanismKind::Mca => "mca",
            MechanismKind::Vcg => "vcg",
            MechanismKind::MarketClearing => "market-clearing",
            MechanismKind::FixedPrice => "fixed-price",
        })
    }
}

/// Final allocation and payments of a mechanism run.
///
/// `welfare` and `fsp_profit` are evaluated with the users' true discomfort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub mechanism: MechanismKind,
    pub user_ids: Vec<UserId>,
    pub allocation: Vec<f64>,
    pub payment: Vec<f64>,
    pub total_reduction: f64,
    pub welfare: f64,
    pub fsp_profit: f64,
    /// Clearing price (market clearing, fixed price) or the last price at
    /// which units were allocated (MCA).
    pub price: Option<f64>,
}

impl Outcome {
    pub(crate) fn assemble(
        mechanism: MechanismKind,
        instance: &Instance,
        allocation: Vec<f64>,
        payment: Vec<f64>,
        price: Option<f64>,
    ) -> Self {
        let total_reduction = exact_sum(&allocation);
        let reward = instance.reward.total_unchecked(total_reduction);
        let discomfort = exact_sum(
            &instance
                .users
                .iter()
                .zip(&allocation)
                .map(|(u, &q)| u.discomfort.cost(q))
                .collect::<Vec<_>>(),
        );
        Self {
            mechanism,
            user_ids: instance.users.iter().map(|u| u.id).collect(),
            total_reduction,
            welfare: reward - discomfort,
            fsp_profit: reward - exact_sum(&payment),
            allocation,
            payment,
            price,
        }
    }

    pub(crate) fn empty(mechanism: MechanismKind) -> Self {
        Self {
            mechanism,
            user_ids: Vec::new(),
            allocation: Vec::new(),
            payment: Vec::new(),
            total_reduction: 0.0,
            welfare: 0.0,
            fsp_profit: 0.0,
            price: None,
        }
    }

    /// Realized utility of every user under their true discomfort.
    pub fn utilities(&self, instance: &Instance) -> Vec<f64> {
        instance
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| realized_utility(self.allocation[i], self.payment[i], &u.discomfort))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcomes always serialize")
    }
}
