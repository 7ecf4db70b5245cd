//! Experiment harness, command-line interface and HTTP service for the
//! incremental document-vector index.

pub mod bootstrap;
pub mod cli;
pub mod dataset;
pub mod serve;
pub mod stream;
pub mod synthetic;
