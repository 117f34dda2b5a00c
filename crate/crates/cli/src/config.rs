//! Experiment configuration, read from TOML.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    AcousticsPulse,
    EnergyDissipation,
    EnergyHistogram,
    Airfoil,
    Verify,
}

impl Experiment {
    pub fn tag(self) -> &'static str {
        match self {
            Self::AcousticsPulse => "acoustics-pulse",
            Self::EnergyDissipation => "energy-dissipation",
            Self::EnergyHistogram => "energy-histogram",
            Self::Airfoil => "airfoil",
            Self::Verify => "verify",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum ReadoutMode {
    #[serde(rename = "statevector")]
    #[value(name = "statevector")]
    Statevector,
    #[serde(rename = "shots")]
    #[value(name = "shots")]
    Shots,
    #[serde(rename = "shots+tomography")]
    #[value(name = "shots+tomography")]
    ShotsTomography,
}

impl ReadoutMode {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Statevector => "statevector",
            Self::Shots => "shots",
            Self::ShotsTomography => "shots+tomography",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub tau: f64,
    pub rho0: f64,
    pub u0: [f64; 2],
    /// Gaussian pulse exponent in physical units.
    pub beta: f64,
    /// Energy weight of density; c_s when absent.
    pub c_phys: Option<f64>,
    pub inlet_u: [f64; 2],
    /// "D2Q9" or "D2Q17".
    pub lattice: String,
    /// Physical domain edge length; the grid spacing is domain/nx.
    pub domain: f64,
    /// Physical sound speed.
    pub sound_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Readout {
    pub mode: ReadoutMode,
    pub shots: u64,
    /// Shot counts compared against the statevector curve.
    pub shot_levels: Vec<u64>,
    pub repetitions: usize,
    pub seeds: usize,
    pub tomography_degrees: [usize; 2],
    pub histogram_bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub steps: usize,
    /// Snapshot count for pulse comparisons.
    pub snapshots: usize,
    /// End of the physical time window.
    pub t_end: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: Grid,
    pub model: ModelParams,
    pub readout: Readout,
}

impl ExperimentConfig {
    /// Reference setup of each experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let model = ModelParams {
            tau: 0.51,
            rho0: 1.0,
            u0: [0.0, 0.0],
            beta: 20.0,
            c_phys: None,
            inlet_u: [0.02, 0.0],
            lattice: "D2Q9".into(),
            domain: 2.5,
            sound_speed: 1.0,
        };
        let readout = Readout {
            mode: ReadoutMode::Statevector,
            shots: 3146,
            shot_levels: vec![1 << 14, 1 << 17],
            repetitions: 1000,
            seeds: 10,
            tomography_degrees: [2, 2],
            histogram_bins: 30,
        };
        let mut cfg = Self {
            experiment,
            steps: 0,
            snapshots: 8,
            t_end: 0.8,
            seed: 0,
            output_dir: PathBuf::from("out").join(experiment.tag()),
            grid: Grid { nx: 128, ny: 128 },
            model,
            readout,
        };
        match experiment {
            Experiment::AcousticsPulse => {}
            Experiment::EnergyDissipation => {
                cfg.steps = 40;
            }
            Experiment::EnergyHistogram => {
                cfg.grid = Grid { nx: 32, ny: 32 };
                cfg.steps = 4;
                cfg.readout.mode = ReadoutMode::Shots;
            }
            Experiment::Airfoil => {
                cfg.grid = Grid { nx: 8, ny: 8 };
                cfg.steps = 15;
                cfg.model.tau = 1.0;
                cfg.readout.shots = 30_000;
            }
            Experiment::Verify => {
                cfg.grid = Grid { nx: 8, ny: 8 };
                cfg.steps = 1;
                cfg.readout.repetitions = 10;
            }
        }
        cfg
    }

    /// Reads a TOML file; missing keys fall back to the experiment defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).context("parsing config")?;
        let tag = raw
            .get("experiment")
            .and_then(|v| v.as_str())
            .context("config needs an `experiment` key")?;
        let experiment: Experiment = toml::Value::String(tag.into())
            .try_into()
            .with_context(|| format!("unknown experiment `{tag}`"))?;
        let mut merged = toml::Table::try_from(Self::defaults(experiment))?;
        merge(&mut merged, raw);
        let cfg: Self = merged.try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let Grid { nx, ny } = self.grid;
        if !nx.is_power_of_two() || !ny.is_power_of_two() || nx < 2 || ny < 2 {
            bail!("grid {nx}x{ny}: dimensions must be powers of two ≥ 2");
        }
        if self.readout.mode != ReadoutMode::Statevector && self.readout.shots == 0 {
            bail!("shots must be ≥ 1 when sampling");
        }
        if self.readout.shot_levels.contains(&0) {
            bail!("shot levels must be ≥ 1");
        }
        if !(self.model.beta > 0.0 && self.model.domain > 0.0 && self.model.sound_speed > 0.0) {
            bail!("beta, domain and sound_speed must be positive");
        }
        if self.model.c_phys.is_some_and(|c| c.is_nan() || c <= 0.0) {
            bail!("c_phys must be positive");
        }
        Ok(())
    }

    pub fn c_phys(&self) -> f64 {
        self.model.c_phys.unwrap_or(1.0 / 3f64.sqrt())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
