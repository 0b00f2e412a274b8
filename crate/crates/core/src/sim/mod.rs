//! Schedule simulator: an independent oracle for the closed-form models.

mod engine;
pub mod program;
mod sweep;

pub use engine::{simulate, simulate_with, AccessEvent, AccessKind, SimConfig, SimResult, SimTrace};
pub use program::{build_mcs_program, build_treiber_program, AbstractProgram, CostClass, Instruction};
pub use sweep::{sweep, sweep_sequential, sweep_workload, SweepPoint, SweepRow};
