use super::{MechanismKind, Outcome};
use crate::agents::{respond, AgentPolicy};
use crate::error::{input, Result};
use crate::model::Instance;
use crate::numeric::{bisect_increasing, exact_sum};

fn offered(policies: &[AgentPolicy], lambda: f64) -> Vec<f64> {
    policies.iter().map(|p| respond(p, lambda).quantity).collect()
}

pub(crate) fn check_policies(instance: &Instance, policies: &[AgentPolicy]) -> Result<()> {
    if policies.len() != instance.users.len() {
        return Err(input(format!(
            "{} policies for {} users",
            policies.len(),
            instance.users.len()
        )));
    }
    for (u, p) in instance.users.iter().zip(policies) {
        if u.id != p.user_id {
            return Err(input(format!("policy for user {} given in slot of user {}", p.user_id, u.id)));
        }
    }
    Ok(())
}

/// Uniform-price benchmark: the descending/ascending English auction that
/// stops where offered supply meets desired reduction. Every user is paid
/// the clearing price for every unit.
pub fn run_market_clearing(instance: &Instance, policies: &[AgentPolicy], tolerance: f64) -> Result<Outcome> {
    let reward = &instance.reward;
    reward.require_curvature()?;
    check_policies(instance, policies)?;
    if instance.users.is_empty() {
        return Ok(Outcome::empty(MechanismKind::MarketClearing));
    }
    let lambda_mc = bisect_increasing(0.0, reward.a, tolerance, |l| {
        exact_sum(&offered(policies, l)) - reward.demand_at(l)
    });
    let allocation = offered(policies, lambda_mc);
    let payment = allocation.iter().map(|q| lambda_mc * q).collect();
    Ok(Outcome::assemble(MechanismKind::MarketClearing, instance, allocation, payment, Some(lambda_mc)))
}

/// Posted-price evaluation: every user sells its answer to `price` at that
/// price. This is the only mode available for a linear reward (`b = 0`).
pub fn run_fixed_price(instance: &Instance, policies: &[AgentPolicy], price: f64) -> Result<Outcome> {
    check_policies(instance, policies)?;
    if !(price >= 0.0) {
        return Err(input(format!("price must be nonnegative, got {price}")));
    }
    let allocation = offered(policies, price);
    let payment = allocation.iter().map(|q| price * q).collect();
    Ok(Outcome::assemble(MechanismKind::FixedPrice, instance, allocation, payment, Some(price)))
}
