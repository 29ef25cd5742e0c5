//! Federated learning where clients upload small trainable synthetic datasets
//! instead of model updates.
//!
//! A client runs ordinary local SGD to obtain its true update `θ`, then fits a
//! handful of synthetic batches (covariates, soft labels, per-step learning
//! rates) plus the scalar `‖θ‖` so that a fixed normalized-SGD unroll over the
//! synthetic batches reproduces `θ`. The server replays the same unroll
//! ([`distill::update_from_synthetic`]) and aggregates the decoded updates.
//!
//! - [`nn`]: dense softmax networks with gradients and second-order products
//! - [`distill`]: payload decoding and fitting
//! - [`fedsim`]: sharding, local updates, rounds and federated averaging
//! - [`reverse`]: server-to-client transmission from a seed anchor
//! - [`harness`]: configuration, datasets, accounting, metrics and experiments

pub mod distill;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod nn;
pub mod reverse;
pub mod rng;

pub use error::{Error, Result};
