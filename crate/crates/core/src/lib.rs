//! Market regimes as a probabilistic state machine.
//!
//! Daily log-returns are summarized by trailing momentum and volatility over
//! several horizons, clustered with K-Means, and the day-to-day cluster
//! transitions form a Markov state machine. Returns are generated from a
//! Gaussian mixture with one component per state, weighted by how often each
//! state occurs, and compared with held-out returns using KS, KL and
//! Wasserstein-1 distances against a single-normal baseline.

pub mod cli;
pub mod distmetrics;
pub mod error;
pub mod experiment;
pub mod features;
pub mod kmeans;
pub mod marketdata;
pub mod mixture;
pub mod regime;

pub use error::{Error, Result};
