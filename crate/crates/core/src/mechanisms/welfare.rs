use crate::agents::best_response;
use crate::error::Result;
use crate::model::{RewardParams, User};
use crate::numeric::{bisect_increasing, exact_sum};

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareSolution {
    pub allocation: Vec<f64>,
    pub lambda_star: f64,
    pub total_reduction: f64,
}

fn total_supply(users: &[User], lambda: f64) -> f64 {
    exact_sum(
        &users
            .iter()
            .map(|u| best_response(lambda, &u.discomfort, &u.feasible))
            .collect::<Vec<_>>(),
    )
}

/// Welfare-maximizing allocation of `users` against `reward`.
///
/// Finds the per-unit reward where aggregate best-response supply meets the
/// operator's desired reduction (marginal reward equals every interior
/// user's marginal discomfort) by bisection on `[0, a]`.
pub fn solve_welfare_max(users: &[User], reward: &RewardParams, tolerance: f64) -> Result<WelfareSolution> {
    reward.require_curvature()?;
    if users.is_empty() {
        return Ok(WelfareSolution { allocation: Vec::new(), lambda_star: reward.a, total_reduction: 0.0 });
    }
    let lambda_star = bisect_increasing(0.0, reward.a, tolerance, |l| {
        total_supply(users, l) - reward.demand_at(l)
    });
    let allocation: Vec<f64> = users
        .iter()
        .map(|u| best_response(lambda_star, &u.discomfort, &u.feasible))
        .collect();
    let total_reduction = exact_sum(&allocation);
    Ok(WelfareSolution { allocation, lambda_star, total_reduction })
}
