use serde::{Deserialize, Serialize};

use super::{solve_welfare_max, MechanismKind, Outcome, DEFAULT_TOLERANCE};
use crate::error::Result;
use crate::model::{Discomfort, Instance};
use crate::numeric::exact_sum;

/// Argument of the reward term in the with-user bracket of the Clarke
/// payment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExternalityTerm {
    /// `R(D)` with the full reduction, user `i` included. This is the
    /// externality that makes the direct mechanism equivalent to the
    /// clinching auction.
    #[default]
    FullReduction,
    /// `R(sum_{j != i} q_j)` in the with-user term. Kept for
    /// side-by-side comparison only; it does not yield VCG payments.
    OthersOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcgConfig {
    pub tolerance: f64,
    pub externality: ExternalityTerm,
}

impl Default for VcgConfig {
    fn default() -> Self {
        Self { tolerance: DEFAULT_TOLERANCE, externality: ExternalityTerm::default() }
    }
}

/// Direct-revelation VCG with Clarke pivot payments.
///
/// Reads the users' discomfort functions straight from the instance and
/// solves the welfare problem `n + 1` times: once with everybody, once with
/// each user removed.
pub fn run_vcg(instance: &Instance, config: &VcgConfig) -> Result<Outcome> {
    let users = &instance.users;
    if users.is_empty() {
        return Ok(Outcome::empty(MechanismKind::Vcg));
    }
    let reward = &instance.reward;
    let full = solve_welfare_max(users, reward, config.tolerance)?;
    let costs: Vec<f64> = users.iter().zip(&full.allocation).map(|(u, &q)| u.discomfort.cost(q)).collect();

    let mut payment = Vec::with_capacity(users.len());
    for i in 0..users.len() {
        let others: Vec<_> = users.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, u)| u.clone()).collect();
        let others_cost = exact_sum(&costs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &c)| c).collect::<Vec<_>>());
        let with_reduction = match config.externality {
            ExternalityTerm::FullReduction => full.total_reduction,
            ExternalityTerm::OthersOnly => exact_sum(
                &full.allocation.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &q)| q).collect::<Vec<_>>(),
            ),
        };
        let with_i = reward.total_unchecked(with_reduction) - others_cost;

        let alone = solve_welfare_max(&others, reward, config.tolerance)?;
        let alone_cost = exact_sum(
            &others.iter().zip(&alone.allocation).map(|(u, &q)| u.discomfort.cost(q)).collect::<Vec<_>>(),
        );
        let without_i = reward.total_unchecked(alone.total_reduction) - alone_cost;
        payment.push(with_i - without_i);
    }
    Ok(Outcome::assemble(MechanismKind::Vcg, instance, full.allocation, payment, Some(full.lambda_star)))
}
