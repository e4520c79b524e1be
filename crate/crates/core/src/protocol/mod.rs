//! Simulated privacy-preserving execution of the clinching auction.
//!
//! Users form an overlay keyed by 160-bit ids. Each iteration every user
//! stores its bid at another node under a random slot token, the stored bids
//! are summed along the id order, and the highest node compares the sum with
//! the FSP's demand. Each storing node clinches on behalf of the bid it holds,
//! and the running allocation tuple of every slot follows the slot from node
//! to node. Only the final tuples reach the FSP.

mod node;
mod overlay;
mod privacy;
mod trace;

use log::debug;

pub use node::{assign_node_ids, NodeId, ID_BYTES};
pub use overlay::Overlay;
pub use privacy::{
    assert_privacy, PrivacyCheck, PrivacyReport, CHECK_AGGREGATE_REPORTS, CHECK_ANONYMOUS_STORE,
    CHECK_NO_BIDS_TO_FSP, CHECK_ONE_FOREIGN_BID,
};
pub use trace::{
    AllocationTuple, Endpoint, MessageKind, Payload, ProtocolMessage, ProtocolTrace, SlotToken, SumRound,
    TraceParseError,
};

use crate::agents::{respond, AgentPolicy};
use crate::error::{input, Error, Result};
use crate::mechanisms::{check_policies, lambda_at, McaConfig, MechanismKind, Outcome};
use crate::model::{Instance, UserId};

/// Everything a protocol run produced.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub outcome: Outcome,
    pub trace: ProtocolTrace,
    /// Node id of each user, in instance order.
    pub node_ids: Vec<NodeId>,
    /// Slot token of each user. Ground truth for audits; never sent.
    pub slots: Vec<SlotToken>,
    /// `(iteration, clinched total over all tuples)` after each clinch or
    /// rationing step.
    pub custody_totals: Vec<(u64, f64)>,
    pub iterations: u64,
    pub shutdown: bool,
    pub warnings: Vec<String>,
}

/// Runs the clinching auction over a simulated overlay seeded with `seed`.
///
/// All sums are exactly rounded, so the outcome does not depend on the seed
/// and equals [`crate::mechanisms::run_mca`] bit for bit.
pub fn run_protocol_mca(instance: &Instance, policies: &[AgentPolicy], config: &McaConfig, seed: u64) -> Result<ProtocolRun> {
    let reward = &instance.reward;
    reward.require_curvature()?;
    check_policies(instance, policies)?;
    let eps = config.epsilon;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(input(format!("epsilon must be positive, got {eps}")));
    }
    let n = policies.len();
    if n == 0 {
        return Err(input("the protocol needs at least one user"));
    }
    let user_ids: Vec<UserId> = policies.iter().map(|p| p.user_id).collect();
    let mut overlay = Overlay::new(n, seed)?;
    let a = reward.lambda_max();
    let cap = (a / eps).ceil() as u64 + 2;
    let mut custody_totals = Vec::new();
    let mut previous: Option<(f64, f64, f64)> = None;
    let mut shutdown = false;
    let mut k = 0u64;

    loop {
        let lambda = lambda_at(a, eps, k);
        let bids: Vec<f64> = policies.iter().map(|p| respond(p, lambda).quantity).collect();
        overlay.store_bids(k, &bids)?;
        let total = overlay.aggregate_sum(k)?;
        let demand = reward.demand_at(lambda);
        overlay.receive_demand(k, lambda, demand);

        if k == 0 {
            let pot = reward.total_unchecked(total.min(reward.l));
            if a * total <= pot {
                overlay.handoff_tuples(k);
                overlay.settle_shutdown(k, lambda, total, demand, pot);
                custody_totals.push((k, overlay.custody_total()));
                shutdown = true;
                break;
            }
        }
        if demand >= total {
            if let Some((lambda, total, demand)) = previous {
                overlay.ration(k, config.rationing, lambda, total, demand)?;
                custody_totals.push((k - 1, overlay.custody_total()));
            } else {
                overlay.handoff_tuples(k);
            }
            break;
        }
        overlay.handoff_tuples(k);
        overlay.broadcast_and_clinch(k, lambda, total, demand).expect("supply exceeds demand");
        custody_totals.push((k, overlay.custody_total()));
        previous = Some((lambda, total, demand));
        k += 1;
        if k > cap {
            return Err(Error::IterationCap { cap });
        }
    }

    let tuples = overlay.deliver(k, &user_ids);
    debug!("protocol finished after {k} iterations, {} messages", overlay.trace.messages.len());
    let allocation = tuples.iter().map(|t| t.total_clinched).collect();
    let payment = tuples.iter().map(|t| t.total_payment).collect();
    let price = if shutdown { Some(a) } else { previous.map(|(lambda, _, _)| lambda) };
    Ok(ProtocolRun {
        outcome: Outcome::assemble(MechanismKind::Mca, instance, allocation, payment, price),
        node_ids: overlay.node_ids().to_vec(),
        slots: overlay.slots().to_vec(),
        trace: overlay.trace,
        custody_totals,
        iterations: k,
        shutdown,
        warnings: overlay.warnings,
    })
}
