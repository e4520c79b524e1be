//! User-side decision logic: answering per-unit reward queries.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::model::{Discomfort, DiscomfortModel, FeasibleSet, User, UserId};

/// Utility-maximizing reduction at per-unit reward `lambda`; the
/// smallest maximizer on ties.
pub fn best_response(lambda: f64, discomfort: &impl Discomfort, feasible: &FeasibleSet) -> f64 {
    discomfort.best_response(lambda.max(0.0), feasible.q_max)
}

/// Raw bid function for manipulation tests. Its output is clamped to the
/// bidder's feasible set.
#[derive(Clone)]
pub struct BidScript(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl BidScript {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl fmt::Debug for BidScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BidScript(..)")
    }
}

#[derive(Debug, Clone)]
pub enum Strategy {
    Truthful,
    /// Answers every query as if the discomfort were `fake`.
    Misreport(DiscomfortModel),
    Scripted(BidScript),
}

#[derive(Debug, Clone)]
pub struct AgentPolicy {
    pub user_id: UserId,
    pub strategy: Strategy,
    pub true_discomfort: DiscomfortModel,
    pub feasible: FeasibleSet,
}

impl AgentPolicy {
    pub fn truthful(user: &User) -> Self {
        Self {
            user_id: user.id,
            strategy: Strategy::Truthful,
            true_discomfort: user.discomfort,
            feasible: user.feasible,
        }
    }

    /// Consistent misreport with a fake quadratic coefficient. `omega_fake`
    /// may be `+inf` (never offers any reduction).
    pub fn misreport(user: &User, omega_fake: f64) -> Result<Self> {
        if !(omega_fake > 0.0) {
            return Err(input(format!("fake omega must be positive, got {omega_fake}")));
        }
        Ok(Self {
            strategy: Strategy::Misreport(DiscomfortModel::new(omega_fake)),
            ..Self::truthful(user)
        })
    }

    pub fn scripted(user: &User, script: BidScript) -> Self {
        Self { strategy: Strategy::Scripted(script), ..Self::truthful(user) }
    }

    pub fn is_truthful(&self) -> bool {
        matches!(self.strategy, Strategy::Truthful)
    }

    /// Reduction offered at `lambda`.
    pub fn quantity(&self, lambda: f64) -> f64 {
        match &self.strategy {
            Strategy::Truthful => best_response(lambda, &self.true_discomfort, &self.feasible),
            Strategy::Misreport(fake) => best_response(lambda, fake, &self.feasible),
            Strategy::Scripted(script) => {
                let q = (script.0)(lambda);
                if q.is_nan() {
                    0.0
                } else {
                    q.clamp(0.0, self.feasible.q_max)
                }
            }
        }
    }
}

/// Truthful policies for every user of an instance.
pub fn truthful_policies(users: &[User]) -> Vec<AgentPolicy> {
    users.iter().map(AgentPolicy::truthful).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub user_id: UserId,
    pub lambda: f64,
    pub quantity: f64,
}

pub fn respond(policy: &AgentPolicy, lambda: f64) -> Bid {
    Bid { user_id: policy.user_id, lambda, quantity: policy.quantity(lambda) }
}

/// Payment received minus true discomfort of the allocated reduction.
pub fn realized_utility(allocation: f64, payment: f64, true_discomfort: &impl Discomfort) -> f64 {
    payment - true_discomfort.cost(allocation.max(0.0))
}
