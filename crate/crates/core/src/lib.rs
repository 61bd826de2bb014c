//! Hierarchical multi-task end-to-end steering at desk scale.
//!
//! A master classifier network routes stereo frames to one of five
//! task-specialized steering regressors. This crate provides the full
//! pipeline around that idea: a minimal reverse-mode autodiff engine, the
//! model zoo, a deterministic five-zone cone-track simulator with a
//! pure-pursuit demonstrator, frame logging and dataset editing, supervised
//! training, and the routing/evaluation layer for open- and closed-loop runs.

pub mod autodiff;
pub mod checkpoint;
pub mod curves;
pub mod datalog;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod models;
pub mod optim;
pub mod real;
pub mod rng;
pub mod router;
pub mod sim;
pub mod tensor;
pub mod trainer;
pub mod zoo;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
