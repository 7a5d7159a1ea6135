//! Deep-optimal-stopping engine for counterparty credit risk.
//!
//! The crate learns exercise policies for portfolios of Bermudan and European
//! contracts (risk-free, risky without netting, risky with netting), regresses
//! pathwise contract values and portfolio exposures from the resulting cash
//! flows, and turns those into CVA figures, EE/PFE profiles and E/VaR/ES-CVA
//! curves.
//!
//! Pipeline, bottom-up:
//!
//! * [`market`] simulates correlated GBM paths, the wrong-way-risk intensity
//!   and default times.
//! * [`portfolio`] describes the contracts and their exercise schedules.
//! * [`nn`] holds the small feed-forward networks and the Adam optimiser.
//! * [`policy`] trains decision networks backwards in time (Phase I).
//! * [`valuation`] fits value/exposure regressions (Phase II).
//! * [`cva`] computes CVA, CVA-bar and the dynamic risk measures.
//! * [`oracle`] provides closed-form, lattice and brute-force references.
//! * [`experiment`] wires everything into reproducible runs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cva;
pub mod error;
pub mod experiment;
pub mod market;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod portfolio;
pub mod rng;
pub mod stats;
pub mod valuation;

pub use error::{Error, Result};
