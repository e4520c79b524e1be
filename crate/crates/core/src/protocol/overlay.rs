use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::node::{assign_node_ids, NodeId};
use super::trace::{AllocationTuple, Endpoint, Payload, ProtocolTrace, SlotToken, SumRound};
use crate::error::{input, Error, Result};
use crate::mechanisms::{clinch_increment, ration_increment, Rationing};
use crate::model::UserId;
use crate::numeric::ExactSum;

/// Separates the slot-token stream from the node-id stream of the same seed.
const SLOT_STREAM: u64 = 0x5107_70CE_A5ED_0001;

/// In-process overlay: one node per user, bid storage, chain aggregation and
/// tuple custody. Every message exchanged is appended to [`Overlay::trace`].
///
/// Node `i` and slot `i` both belong to user `i`; the index is simulation
/// bookkeeping and never travels in a message.
#[derive(Debug, Clone)]
pub struct Overlay {
    seed: u64,
    ids: Vec<NodeId>,
    /// Node indices in ascending id order; the last one is the aggregator.
    order: Vec<usize>,
    slots: Vec<SlotToken>,
    stored: Vec<Option<(SlotToken, f64)>>,
    /// Bids of the previous iteration, kept for rationing at termination.
    stored_prev: Vec<Option<(SlotToken, f64)>>,
    custody: Vec<Option<(SlotToken, AllocationTuple)>>,
    storer: Vec<usize>,
    prev_storer: Option<Vec<usize>>,
    pub trace: ProtocolTrace,
    pub warnings: Vec<String>,
}

impl Overlay {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(input("the overlay needs at least one node"));
        }
        let ids = assign_node_ids(n, seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| ids[i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SLOT_STREAM);
        let mut slots = Vec::with_capacity(n);
        while slots.len() < n {
            let token = SlotToken(rng.gen());
            if !slots.contains(&token) {
                slots.push(token);
            }
        }
        let mut warnings = Vec::new();
        if n == 1 {
            let msg = "single-node overlay: bids are stored at their owner, so nothing is hidden".to_string();
            warn!("{msg}");
            warnings.push(msg);
        } else if n == 2 {
            let msg = "two-node overlay: every bid is always stored at the one other node".to_string();
            warn!("{msg}");
            warnings.push(msg);
        }
        Ok(Self {
            seed,
            ids,
            order,
            slots,
            stored: vec![None; n],
            stored_prev: vec![None; n],
            custody: vec![None; n],
            storer: Vec::new(),
            prev_storer: None,
            trace: ProtocolTrace::new(seed),
            warnings,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn slots(&self) -> &[SlotToken] {
        &self.slots
    }

    /// The highest id, which finishes every aggregation.
    pub fn aggregator(&self) -> NodeId {
        self.ids[*self.order.last().expect("overlay is non-empty")]
    }

    fn node(&self, i: usize) -> Endpoint {
        Endpoint::Node(self.ids[i])
    }

    /// Where each slot's bid goes at iteration `k`. Called while `storer`
    /// still holds iteration `k - 1`.
    ///
    /// Slots and nodes are both hashed with `k`, so the ranking is fresh
    /// every iteration and never looks at who owns a slot beyond excluding
    /// the owner itself. Each node takes exactly one foreign bid; with three
    /// or more nodes a slot also never lands where it was the iteration before.
    /// Conflicts are resolved by augmenting paths in preference order.
    fn storage_assignment(&self, k: u64) -> Vec<usize> {
        let n = self.len();
        if n == 1 {
            return vec![0];
        }
        let seed = self.seed.to_be_bytes();
        let kb = k.to_be_bytes();
        let labels: Vec<NodeId> = self.ids.iter().map(|id| NodeId::hash(&[b"node", &seed, &kb, &id.0])).collect();
        let keys: Vec<NodeId> =
            self.slots.iter().map(|s| NodeId::hash(&[b"slot", &seed, &kb, &s.0.to_be_bytes()])).collect();
        let prefs: Vec<Vec<usize>> = (0..n)
            .map(|s| {
                let mut nodes: Vec<usize> = (0..n)
                    .filter(|&j| j != s)
                    .filter(|&j| n < 3 || self.storer.get(s).is_none_or(|&last| last != j))
                    .collect();
                nodes.sort_by_key(|&j| keys[s].distance(&labels[j]));
                nodes
            })
            .collect();

        let mut slot_order: Vec<usize> = (0..n).collect();
        slot_order.sort_by_key(|&s| keys[s]);
        let mut holder: Vec<Option<usize>> = vec![None; n];
        for &s in &slot_order {
            let mut visited = vec![false; n];
            let placed = augment(s, &prefs, &mut holder, &mut visited);
            debug_assert!(placed, "a constrained derangement always exists");
        }
        let mut assignment = vec![0; n];
        for (node, slot) in holder.iter().enumerate() {
            if let Some(s) = slot {
                assignment[*s] = node;
            }
        }
        assignment
    }

    /// Each user stores its bid for iteration `k` at another node. Returns
    /// the storing node per user.
    pub fn store_bids(&mut self, k: u64, bids: &[f64]) -> Result<Vec<NodeId>> {
        if bids.len() != self.len() {
            return Err(input(format!("{} bids for {} nodes", bids.len(), self.len())));
        }
        if let Some(q) = bids.iter().find(|q| !(**q >= 0.0)) {
            return Err(input(format!("bid must be nonnegative, got {q}")));
        }
        let assignment = self.storage_assignment(k);
        let n = self.len();
        self.stored_prev = std::mem::replace(&mut self.stored, vec![None; n]);
        for (owner, (&w, &value)) in assignment.iter().zip(bids).enumerate() {
            let slot = self.slots[owner];
            self.trace.log(self.node(owner), self.node(w), k, Payload::StoreBid { slot, value, owner: None });
            self.stored[w] = Some((slot, value));
        }
        if !self.storer.is_empty() {
            self.prev_storer = Some(std::mem::take(&mut self.storer));
        }
        self.storer = assignment.clone();
        Ok(assignment.into_iter().map(|w| self.ids[w]).collect())
    }

    /// Accumulates one value per node from the lowest id to the highest.
    fn chain_sum(&mut self, k: u64, round: SumRound, values: &[Option<f64>]) -> Result<f64> {
        let mut acc = ExactSum::new();
        for (pos, &node) in self.order.iter().enumerate() {
            let Some(v) = values[node] else {
                return Err(Error::ProtocolStall {
                    iteration: k,
                    reason: format!("node {} holds no value for the {round:?} round", self.ids[node]),
                });
            };
            acc.add(v);
            if let Some(&next) = self.order.get(pos + 1) {
                let contributors = pos as u32 + 1;
                let payload = Payload::SumUpward { round, partials: acc.partials().to_vec(), contributors };
                self.trace.log(self.node(node), self.node(next), k, payload);
            }
        }
        Ok(acc.value())
    }

    /// Total of the bids stored for iteration `k`, as known to the aggregator.
    pub fn aggregate_sum(&mut self, k: u64) -> Result<f64> {
        let values: Vec<Option<f64>> = self.stored.iter().map(|s| s.map(|(_, v)| v)).collect();
        self.chain_sum(k, SumRound::Bids, &values)
    }

    /// Total clinched so far over all tuples, summed at their custodians.
    pub fn aggregate_clinched(&mut self, k: u64) -> Result<f64> {
        let values: Vec<Option<f64>> = self.custody.iter().map(|c| c.map(|(_, t)| t.total_clinched)).collect();
        self.chain_sum(k, SumRound::Clinched, &values)
    }

    /// The FSP tells the aggregator its desired reduction at `lambda`.
    pub fn receive_demand(&mut self, k: u64, lambda: f64, demand: f64) {
        let to = Endpoint::Node(self.aggregator());
        self.trace.log(Endpoint::Fsp, to, k, Payload::DemandFromFSP { lambda, demand });
    }

    fn broadcast(&mut self, k: u64, payload: Payload) {
        let from = self.aggregator();
        for &node in &self.order {
            if self.ids[node] != from {
                self.trace.log(Endpoint::Node(from), self.node(node), k, payload.clone());
            }
        }
    }

    /// Moves every tuple from its iteration `k - 1` custodian to the node
    /// storing the same slot at `k`. At `k = 0` empty tuples are created in
    /// place. Returns the new custodian per user.
    pub fn handoff_tuples(&mut self, k: u64) -> Vec<NodeId> {
        let n = self.len();
        let mut moved: Vec<Option<(SlotToken, AllocationTuple)>> = vec![None; n];
        for user in 0..n {
            let slot = self.slots[user];
            let to = self.storer[user];
            let tuple = match &self.prev_storer {
                None => AllocationTuple::default(),
                Some(prev) => {
                    let from = prev[user];
                    let (held, tuple) = self.custody[from].take().expect("custodian holds the tuple");
                    debug_assert_eq!(held, slot);
                    if from != to {
                        self.trace.log(self.node(from), self.node(to), k, Payload::TupleHandoff {
                            slot,
                            tuple,
                            to_owner: false,
                        });
                    }
                    tuple
                }
            };
            moved[to] = Some((slot, tuple));
        }
        self.custody = moved;
        self.storer.iter().map(|&w| self.ids[w]).collect()
    }

    /// Broadcasts the iteration totals unless supply no longer exceeds demand,
    /// then each storing node clinches for the bid it holds. Returns the
    /// increment per storing node, in ascending id order, or `None` on the
    /// termination path.
    pub fn broadcast_and_clinch(&mut self, k: u64, lambda: f64, total: f64, demand: f64) -> Option<Vec<(NodeId, f64)>> {
        if demand >= total {
            return None;
        }
        self.broadcast(k, Payload::BroadcastTotals { lambda, total, demand, terminal: false, clinched_total: None });
        let mut out = Vec::with_capacity(self.len());
        for &node in &self.order {
            let (slot, bid) = self.stored[node].expect("every node stores a bid");
            let (held, tuple) = self.custody[node].as_mut().expect("custody follows storage");
            debug_assert_eq!(*held, slot);
            let zeta = clinch_increment(demand, total, bid, tuple.total_clinched);
            tuple.credit(zeta, lambda);
            out.push((self.ids[node], zeta));
        }
        Some(out)
    }

    /// Final rationing at the previous price. The custodians still hold the
    /// bids and tuples of iteration `k - 1`.
    pub fn ration(&mut self, k: u64, rationing: Rationing, lambda: f64, total: f64, demand: f64) -> Result<()> {
        let prior_total = self.aggregate_clinched(k)?;
        self.broadcast(k, Payload::BroadcastTotals {
            lambda,
            total,
            demand,
            terminal: true,
            clinched_total: Some(prior_total),
        });
        for &node in &self.order {
            let Some((slot, bid)) = self.stored_prev[node] else {
                return Err(Error::ProtocolStall { iteration: k, reason: format!("node {} lost its previous bid", self.ids[node]) });
            };
            let (held, tuple) = self.custody[node].as_mut().expect("custody follows storage");
            debug_assert_eq!(*held, slot);
            let zeta = ration_increment(rationing, bid, tuple.total_clinched, demand, total, prior_total);
            tuple.credit(zeta, lambda);
        }
        Ok(())
    }

    /// Shutdown settlement at the top price: every stored bid is taken in
    /// full and `pot` is shared in proportion.
    pub fn settle_shutdown(&mut self, k: u64, lambda: f64, total: f64, demand: f64, pot: f64) {
        self.broadcast(k, Payload::BroadcastTotals { lambda, total, demand, terminal: true, clinched_total: None });
        for &node in &self.order {
            let (_, bid) = self.stored[node].expect("every node stores a bid");
            let (_, tuple) = self.custody[node].as_mut().expect("custody follows storage");
            tuple.total_clinched = bid;
            tuple.total_payment = if total > 0.0 { pot * bid / total } else { 0.0 };
        }
    }

    /// Exactly rounded sum of all clinched totals currently in custody.
    pub fn custody_total(&self) -> f64 {
        self.custody.iter().flatten().map(|(_, t)| t.total_clinched).collect::<ExactSum>().value()
    }

    /// Custodians return each tuple to its owner, who reports it to the FSP.
    /// Returns the reported tuple per user.
    pub fn deliver(&mut self, k: u64, user_ids: &[UserId]) -> Vec<AllocationTuple> {
        let n = self.len();
        let mut reports = vec![AllocationTuple::default(); n];
        for user in 0..n {
            let slot = self.slots[user];
            let custodian = (0..n)
                .find(|&j| self.custody[j].is_some_and(|(s, _)| s == slot))
                .expect("every slot has a custodian");
            let (_, tuple) = self.custody[custodian].expect("just found");
            if custodian != user {
                self.trace.log(self.node(custodian), self.node(user), k, Payload::TupleHandoff {
                    slot,
                    tuple,
                    to_owner: true,
                });
            }
            reports[user] = tuple;
        }
        for (user, tuple) in reports.iter().enumerate() {
            self.trace.log(self.node(user), Endpoint::Fsp, k, Payload::FinalReport {
                user: user_ids[user],
                tuple: *tuple,
                per_iteration: Vec::new(),
            });
        }
        self.custody = vec![None; n];
        reports
    }
}

fn augment(s: usize, prefs: &[Vec<usize>], holder: &mut [Option<usize>], visited: &mut [bool]) -> bool {
    for &j in &prefs[s] {
        if visited[j] {
            continue;
        }
        visited[j] = true;
        if holder[j].is_none_or(|other| augment(other, prefs, holder, visited)) {
            holder[j] = Some(s);
            return true;
        }
    }
    false
}
