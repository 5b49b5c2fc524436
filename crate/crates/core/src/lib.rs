//! Stochastic and deterministic tools for crossing fitness valleys in
//! competitive Lotka–Volterra populations with mutation along a line of traits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gillespie;
pub mod harness;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod theory;
pub mod tropical;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
