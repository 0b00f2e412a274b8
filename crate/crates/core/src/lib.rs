//! Concurrency performance laboratory.
//!
//! - [`cost_model`]: closed-form throughput predictions for an MCS-lock
//!   workload and a Treiber-stack workload.
//! - [`sim`]: a deterministic schedule simulator that executes annotated
//!   versions of the same workloads and serves as an oracle for the formulas.
//! - [`structures`]: real MCS lock, Treiber stack and fat-node skip-list set.
//! - [`bench`]: real-thread microbenchmarks of those structures.
//! - [`records`]: the CSV schema shared by all of the above.
//! - [`report`]: joins predictions with simulated and measured rows.

pub mod bench;
pub mod cost_model;
pub mod error;
pub mod lincheck;
pub mod records;
pub mod report;
pub mod sim;
pub mod structures;

pub use cost_model::{CostModel, Prediction, Regime, Workload, WorkloadParams};
pub use error::{Error, Result};
pub use records::{Record, Source, Structure};
