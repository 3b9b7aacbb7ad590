//! Epoch-wise ensemble agreement.
//!
//! Turns per-checkpoint prediction logs of an ensemble into overfit-resistant
//! final predictions (max agreement over training history), with the
//! diagnostics that motivate it, a toy trainer that produces such logs, and a
//! gradient-descent linear regression simulator for the disagreement theory.

pub mod aggregate;
pub mod error;
pub mod io;
pub mod log;
pub mod metrics;
pub mod noise;
pub mod plot;
pub mod report;
pub mod theory;
pub mod toytrain;

pub use error::{Error, FormatError, Result};
pub use log::{Checkpoint, EpochSubset, LabelSet, PredictionLog};
