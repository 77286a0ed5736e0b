//! Retrieval-enhanced automated property valuation.
//!
//! The crate implements a comparable-sales estimator whose comparable
//! selection policy is learned jointly with the price model. A target
//! transaction is priced by retrieving past transactions (comparables)
//! through two channels — exact haversine nearest neighbours and embedding
//! dot-product re-ranking over the geographically closest candidates — and
//! aggregating their values with learned attention weights. The extended
//! variant adds a gate on the raw attention scores and a bounded
//! multiplicative adjustment decoder.
//!
//! Modules:
//! - [`data`]: datasets, CSV ingestion, target transforms, scaling, splits,
//!   and a synthetic generator for desk-scale experiments.
//! - [`geo`]: exact top-k geographic retrieval under haversine distance.
//! - [`neural`]: dense stacks, reverse-mode gradients, Adam, gradient checks.
//! - [`model`]: the REA/EREA computation graph and its handwritten adjoint.
//! - [`train`]: the alternating optimization loop with per-epoch embedding
//!   refresh and leakage-safe evaluation.
//! - [`metrics`]: MdAE/MdABRE, baselines, and the retrieval sweep harness.
//! - [`checkpoint`]: weight files with a JSON manifest header.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod train;

pub use error::{Error, Result};
