//! Library surface of the pipeline CLI, exposed for integration tests.

pub mod config;
pub mod stages;
