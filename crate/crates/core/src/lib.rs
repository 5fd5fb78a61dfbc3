//! Local Volt/VAR control on radial distribution feeders.
//!
//! The crate models a feeder as a tree rooted at a slack bus, linearizes the
//! voltage response to reactive injection, and simulates three families of
//! inverter control laws against either the linear model or the full
//! DistFlow equations.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod network;
pub mod powerflow;

#[cfg(test)]
mod testutil;

pub use error::{Error, FeederError, Result};
