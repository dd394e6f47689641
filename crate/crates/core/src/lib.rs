//! Simulator and protocol library for asynchronous federated learning with
//! per-client magnitude pruning, staleness-weighted masked aggregation,
//! progressive density recovery and differential model distribution.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: flat parameter vectors, masks, a small MLP and masked SGD.
//! - [`prune`]: round-time queues, the density controller, magnitude pruning,
//!   early stopping and recovery.
//! - [`aggregate`]: the server buffer, staleness weights, masked and plain
//!   federated averaging.
//! - [`distribute`]: nested submodels, delta packets and client-side merge.
//! - [`netsim`]: the virtual clock, event queue and link model.
//! - [`orchestrator`]: server/client state machines for every algorithm variant.
//! - [`harness`]: configuration, synthetic data, metrics files and sweeps.

pub mod aggregate;
pub mod distribute;
pub mod error;
pub mod harness;
pub mod model;
pub mod netsim;
pub mod orchestrator;
pub mod prune;

pub use error::{Error, Result};
