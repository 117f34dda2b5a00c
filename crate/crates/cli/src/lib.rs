//! Experiment drivers behind the `qlbm` binary.

pub mod acoustics;
pub mod airfoil;
pub mod config;
pub mod output;
pub mod verify;

use anyhow::Result;
use config::{Experiment, ExperimentConfig};
use output::OutputRecord;

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<OutputRecord> {
    match cfg.experiment {
        Experiment::AcousticsPulse => acoustics::run_acoustics_pulse(cfg),
        Experiment::EnergyDissipation => acoustics::run_energy_dissipation(cfg),
        Experiment::EnergyHistogram => acoustics::run_energy_histogram(cfg),
        Experiment::Airfoil => airfoil::run_airfoil(cfg),
        Experiment::Verify => verify::verify_equivalence(cfg),
    }
}
