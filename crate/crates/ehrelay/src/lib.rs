//! Throughput and delay analysis of a wireless-powered relay.
//!
//! The relay switches per slot between harvesting energy and decoding data;
//! this crate models the resulting two-buffer system as a quasi-birth-death
//! Markov chain, solves it with the matrix-analytic method, analyzes
//! threshold policies through an exact finite chain, searches for
//! throughput- and delay-optimal policies, and cross-checks everything with
//! a slot-level Monte Carlo simulator.

pub mod error;
pub mod finite_chain;
pub mod linalg;
pub mod model;
pub mod optimizers;
pub mod qbd_builder;
pub mod qbd_solver;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{EnergyDistribution, Policy, State, SystemParams, TabularEntry};
