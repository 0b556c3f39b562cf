//! Location-privacy protection mechanisms over a discretized map.
//!
//! Locations are cells of a rectangular grid ([`geo`]). Users move
//! according to profiles or Markov chains ([`mobility`]); mechanisms
//! release obfuscated cells ([`mechanisms`], [`peb`]); adversaries invert
//! them ([`adversary`]); [`metrics`] and [`harness`] measure the outcome.

pub mod adversary;
pub mod error;
pub mod geo;
pub mod harness;
pub mod mechanisms;
pub mod metrics;
pub mod mobility;
pub mod oracle;
pub mod peb;
pub mod prob;

pub use error::{Error, Result};

/// Row-major index of a grid cell.
pub type CellId = usize;

/// A sequence of visited cells.
pub type Trace = Vec<CellId>;
