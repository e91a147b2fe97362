//! Fubini–Study metric conditioning for parameterized quantum circuits.
//!
//! The crate simulates a layered hardware-efficient ansatz, computes the
//! Fubini–Study metric of its parameters and the spectral diagnostics
//! derived from it, meta-trains a parameter generator ("Sculpture") to
//! minimise `log κ` of the metric, and trains a downstream hybrid
//! classifier that mixes generated and trainable angles.

// `!(x > 0.0)` rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ansatz;
pub mod commands;
pub mod config;
pub mod downstream;
pub mod error;
pub mod fsmetric;
pub mod linalg;
pub mod output;
pub mod par;
pub mod sculpture;
pub mod simulator;
pub mod spectral;

pub use error::{Error, Result};
