use thiserror::Error;

/// Errors raised by the economic primitives and the mechanisms.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    /// `b = 0` makes the desired-reduction curve undefined; callers must use
    /// the fixed-price evaluation mode instead.
    #[error("degenerate demand: reward curvature b is zero, use fixed-price mode")]
    DegenerateDemand,

    #[error("invalid instance: {}", .0.join("; "))]
    InvalidInstance(Vec<String>),

    /// The auction loop exceeded its iteration guard. Unreachable for valid
    /// inputs; reported rather than looping forever.
    #[error("internal error: clinching loop exceeded {cap} iterations")]
    IterationCap { cap: u64 },

    #[error("protocol stall at iteration {iteration}: {reason}")]
    ProtocolStall { iteration: u64, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
