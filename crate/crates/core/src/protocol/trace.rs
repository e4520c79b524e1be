use std::fmt;

use serde::{Deserialize, Serialize};

use super::node::NodeId;
use crate::model::UserId;

/// Sender or receiver of a protocol message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Fsp,
    Node(NodeId),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Fsp => f.write_str("fsp"),
            Endpoint::Node(id) => write!(f, "{id}"),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "fsp" {
            return Ok(Endpoint::Fsp);
        }
        s.parse().map(Endpoint::Node).map_err(serde::de::Error::custom)
    }
}

/// Pseudonym a user attaches to its stored bids. Drawn at random per run;
/// unrelated to the user's identity or node id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotToken(pub u64);

/// Running allocation and payment of one bid slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationTuple {
    pub total_clinched: f64,
    pub total_payment: f64,
}

impl AllocationTuple {
    pub(crate) fn credit(&mut self, zeta: f64, lambda: f64) {
        if zeta > 0.0 {
            self.total_clinched += zeta;
            self.total_payment += zeta * lambda;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumRound {
    /// Sum of the bids stored for the iteration.
    Bids,
    /// Sum of clinched totals, needed to ration at termination.
    Clinched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    StoreBid,
    SumUpward,
    DemandFromFSP,
    BroadcastTotals,
    TupleHandoff,
    FinalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Payload {
    StoreBid {
        slot: SlotToken,
        value: f64,
        /// Never set by honest participants.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        owner: Option<UserId>,
    },
    SumUpward {
        round: SumRound,
        partials: Vec<f64>,
        contributors: u32,
    },
    DemandFromFSP {
        lambda: f64,
        demand: f64,
    },
    BroadcastTotals {
        lambda: f64,
        total: f64,
        demand: f64,
        terminal: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clinched_total: Option<f64>,
    },
    TupleHandoff {
        slot: SlotToken,
        tuple: AllocationTuple,
        /// Last hop, back to the slot's owner.
        #[serde(default)]
        to_owner: bool,
    },
    FinalReport {
        user: UserId,
        tuple: AllocationTuple,
        /// Per-iteration increments. Never set by honest participants.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        per_iteration: Vec<f64>,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::StoreBid { .. } => MessageKind::StoreBid,
            Payload::SumUpward { .. } => MessageKind::SumUpward,
            Payload::DemandFromFSP { .. } => MessageKind::DemandFromFSP,
            Payload::BroadcastTotals { .. } => MessageKind::BroadcastTotals,
            Payload::TupleHandoff { .. } => MessageKind::TupleHandoff,
            Payload::FinalReport { .. } => MessageKind::FinalReport,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub seq: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub iteration: u64,
    pub payload: Payload,
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

/// One line of the on-disk log.
#[derive(Serialize, Deserialize)]
struct TraceLine {
    seq: u64,
    kind: MessageKind,
    from: Endpoint,
    to: Endpoint,
    iteration: u64,
    payload: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {reason}")]
pub struct TraceParseError {
    pub line: usize,
    pub reason: String,
}

/// Ordered message log of a simulated protocol run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolTrace {
    pub rng_seed: u64,
    pub messages: Vec<ProtocolMessage>,
}

impl ProtocolTrace {
    pub fn new(rng_seed: u64) -> Self {
        Self { rng_seed, messages: Vec::new() }
    }

    pub(crate) fn log(&mut self, from: Endpoint, to: Endpoint, iteration: u64, payload: Payload) {
        let seq = self.messages.len() as u64;
        self.messages.push(ProtocolMessage { seq, from, to, iteration, payload });
    }

    /// Line-delimited JSON, one message per line with fields
    /// `seq, kind, from, to, iteration, payload`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let tagged = serde_json::to_value(&m.payload).expect("payloads serialize");
            let line = TraceLine {
                seq: m.seq,
                kind: m.kind(),
                from: m.from,
                to: m.to,
                iteration: m.iteration,
                payload: tagged.get("payload").cloned().unwrap_or(serde_json::Value::Null),
            };
            out.push_str(&serde_json::to_string(&line).expect("trace lines serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses a log written by [`ProtocolTrace::to_jsonl`]. The seed is not
    /// part of the log and must be supplied by the caller.
    pub fn from_jsonl(text: &str, rng_seed: u64) -> Result<Self, TraceParseError> {
        let mut messages = Vec::new();
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let err = |reason: String| TraceParseError { line: i + 1, reason };
            let line: TraceLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
            let kind = serde_json::to_value(line.kind).expect("kinds serialize");
            let payload: Payload = serde_json::from_value(serde_json::json!({"kind": kind, "payload": line.payload}))
                .map_err(|e| err(e.to_string()))?;
            messages.push(ProtocolMessage {
                seq: line.seq,
                from: line.from,
                to: line.to,
                iteration: line.iteration,
                payload,
            });
        }
        Ok(Self { rng_seed, messages })
    }
}
