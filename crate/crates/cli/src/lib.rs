//! Benchmark harness and command-line driver for `rnla-core`: timed
//! dense-versus-sketched workloads written as CSV, and parameter tuning of
//! saved models.

pub mod bench;
pub mod cli;
pub mod record;
pub mod timing;
pub mod tune;
