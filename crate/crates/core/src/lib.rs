//! Round-synchronous simulator for decentralized federated learning with
//! adaptive per-client learning rates.
//!
//! The crate is organized bottom-up:
//!
//! - [`topology`]: communication graphs, row-stochastic mixing matrices and
//!   balance/spectral diagnostics.
//! - [`data`]: synthetic linear/logistic regression clients and the
//!   corruption models applied to abnormal clients.
//! - [`loss`]: local losses, gradients and the reference estimators used as
//!   ground truth.
//! - [`algorithms`]: standard and weighted DFL steps, adaptive trust
//!   weights, multi-stage aDFL and the robust-aggregation baselines.
//! - [`metrics`]: evaluation metrics and condition diagnostics.
//! - [`harness`]: config-driven experiment runner, CSV/JSON output and SVG
//!   plots.

pub mod algorithms;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod seed;
pub mod spectral;
pub mod topology;

pub use error::{Error, Result};

/// Dense parameter vector of dimension `p`.
pub type ParamVector = nalgebra::DVector<f64>;

/// Serialize a parameter vector as a plain sequence.
pub(crate) fn serialize_vector<S: serde::Serializer>(
    v: &ParamVector,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}
