#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

//! Demand-response flexibility market built around a descending-price
//! clinching auction.
//!
//! * [`model`] holds the reward curve, discomfort functions and instances.
//! * [`agents`] answers per-unit reward queries, truthfully or not.
//! * [`mechanisms`] runs the clinching auction, the direct VCG oracle and
//!   the uniform-price market-clearing benchmark.
//! * [`metrics`] computes welfare, FSP profit, the welfare-loss bound and
//!   misreport sweeps.
//! * [`protocol`] executes the clinching auction over a simulated
//!   peer-to-peer overlay so that no party sees who bid what.
//! * [`scenario`] generates the synthetic populations used by experiments.

pub mod agents;
pub mod error;
pub mod mechanisms;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod protocol;
pub mod scenario;

pub use error::{Error, Result};
