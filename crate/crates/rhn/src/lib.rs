//! Recurrent Highway Networks with Highway State Gating.
//!
//! A self-contained sequence-modeling library: the RHN transition (stacked
//! highway layers inside the recurrence), the HSG cell (a per-neuron gated
//! shortcut for the state through time), exact hand-derived gradients for
//! both, a truncated-BPTT trainer, and diagnostics for path lengths,
//! gradient flow through time, and gate statistics.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod hsg;
pub mod lm;
pub mod rhn;
pub mod rng;
pub mod serialize;
pub mod tensor;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
