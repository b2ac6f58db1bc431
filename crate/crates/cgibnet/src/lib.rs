//! Bandwidth-constrained multi-agent communication with graph information
//! bottleneck regularizers.
//!
//! The crate is organized around six subsystems:
//!
//! - [`traffic`]: a deterministic-given-seed traffic junction gridworld with
//!   easy/medium/hard maps, partial per-car observations and a shared reward.
//! - [`nn`]: small trainable parametric maps (feed-forward encoders, GRU
//!   cores, monotonic mixing hypernetworks) on top of an f64 reverse-mode
//!   tape, plus a finite-difference gradient checker.
//! - [`comm`]: the communication layer itself — per-round link prediction
//!   with relaxed-Bernoulli edge sampling, Gaussian-reparameterized node
//!   messages, masked aggregation, and the structural/node KL regularizers.
//! - [`train`]: MAPPO and QMIX training loops that consume the communication
//!   layer and add the weighted KL terms to the task loss.
//! - [`bandwidth`]: SCR/MCR accounting, KL-ranked bit budgets, constrained
//!   evaluation and communication confusion matrices.
//! - [`harness`]: run configs, seed management, persistence, aggregation and
//!   plot emission.

pub mod bandwidth;
pub mod comm;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod traffic;
pub mod train;

pub use error::CgibError;

/// Crate result alias.
pub type Result<T> = std::result::Result<T, CgibError>;
