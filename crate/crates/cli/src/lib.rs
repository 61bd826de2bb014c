//! Library surface of the pipeline CLI, shared by the binary and the
//! acceptance test suite.

pub mod commands;
pub mod manifest;
