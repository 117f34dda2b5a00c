//! One-step simplified lattice Boltzmann solvers: a classical reference
//! implementation and a gate-level quantum formulation run on a dense
//! statevector emulator.

pub mod circuit;
pub mod classical_lbm;
pub mod error;
pub mod lattice;
pub mod qlbm;
pub mod readout;
pub mod simulator;

pub use error::{QlbmError, QlbmResult};
