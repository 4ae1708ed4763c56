//! Generate PTX microbenchmarks, run them on a device or a recorded fixture,
//! and reduce the results to latency, throughput, power and cache-hierarchy
//! figures.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod curves;
pub mod kernels;
pub mod metrics;
pub mod power;
pub mod sasscheck;
pub mod suite;
