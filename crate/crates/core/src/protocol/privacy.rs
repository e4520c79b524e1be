use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::trace::{Endpoint, MessageKind, Payload, ProtocolTrace};

pub const CHECK_NO_BIDS_TO_FSP: &str = "no-bids-to-fsp";
pub const CHECK_ANONYMOUS_STORE: &str = "anonymous-store-bid";
pub const CHECK_ONE_FOREIGN_BID: &str = "one-foreign-bid-per-node";
pub const CHECK_AGGREGATE_REPORTS: &str = "aggregate-final-reports";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrivacyCheck {
    pub name: &'static str,
    pub passed: bool,
    /// `seq` of each offending message.
    pub offending: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrivacyReport {
    pub checks: Vec<PrivacyCheck>,
}

impl PrivacyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&PrivacyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &'static str, offending: Vec<u64>) -> PrivacyCheck {
    PrivacyCheck { name, passed: offending.is_empty(), offending }
}

/// Audits a message log.
///
/// 1. Nothing sent to the FSP before its first final report carries an
///    individual bid: no stored bid, no partial sum of a single bid, no tuple.
/// 2. No stored bid names its owner.
/// 3. No node receives stored bids from more than one other node in the same
///    iteration. Only `StoreBid` counts as a bid here.
/// 4. Final reports carry totals only, and the FSP never receives
///    per-iteration increments in any other form.
pub fn assert_privacy(trace: &ProtocolTrace) -> PrivacyReport {
    let first_report = trace
        .messages
        .iter()
        .find(|m| m.kind() == MessageKind::FinalReport && m.to == Endpoint::Fsp)
        .map_or(u64::MAX, |m| m.seq);

    let mut to_fsp = Vec::new();
    let mut named = Vec::new();
    let mut crowded = Vec::new();
    let mut detailed = Vec::new();
    let mut received: BTreeMap<(Endpoint, u64), (BTreeSet<Endpoint>, Vec<u64>)> = BTreeMap::new();

    for m in &trace.messages {
        let fsp = m.to == Endpoint::Fsp;
        match &m.payload {
            Payload::StoreBid { owner, .. } => {
                if owner.is_some() {
                    named.push(m.seq);
                }
                if fsp && m.seq < first_report {
                    to_fsp.push(m.seq);
                }
                if m.from != m.to && !fsp {
                    let entry = received.entry((m.to, m.iteration)).or_default();
                    entry.0.insert(m.from);
                    entry.1.push(m.seq);
                }
            }
            Payload::SumUpward { contributors, .. } => {
                if fsp && m.seq < first_report && *contributors <= 1 {
                    to_fsp.push(m.seq);
                }
            }
            Payload::TupleHandoff { .. } => {
                if fsp {
                    detailed.push(m.seq);
                    if m.seq < first_report {
                        to_fsp.push(m.seq);
                    }
                }
            }
            Payload::FinalReport { per_iteration, .. } => {
                if !per_iteration.is_empty() {
                    detailed.push(m.seq);
                }
            }
            Payload::DemandFromFSP { .. } | Payload::BroadcastTotals { .. } => {}
        }
    }
    for (senders, seqs) in received.values() {
        if senders.len() > 1 {
            crowded.extend(seqs);
        }
    }
    crowded.sort_unstable();

    PrivacyReport {
        checks: vec![
            check(CHECK_NO_BIDS_TO_FSP, to_fsp),
            check(CHECK_ANONYMOUS_STORE, named),
            check(CHECK_ONE_FOREIGN_BID, crowded),
            check(CHECK_AGGREGATE_REPORTS, detailed),
        ],
    }
}
