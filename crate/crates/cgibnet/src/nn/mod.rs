//! Trainable parametric maps and their support machinery.
//!
//! Everything differentiable in the crate is expressed on [`graph::Tape`],
//! a small f64 reverse-mode tape. Parameters live in a [`params::ParamStore`]
//! as one flat vector with named segments so checkpoints, optimizers and the
//! gradient checker all see the same layout.

pub mod checkpoint;
pub mod grad_check;
pub mod graph;
pub mod init;
pub mod layers;
pub mod mixer;
pub mod params;

pub use grad_check::{grad_check, GradCheckReport};
pub use graph::{NodeId, Tape};
pub use params::{ParamStore, SegmentId, Signature, TapeParams};
