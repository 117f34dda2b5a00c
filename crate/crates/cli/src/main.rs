use anyhow::{bail, Result};
use clap::Parser;
use qlbm_cli::config::{Experiment, ExperimentConfig, ReadoutMode};
use std::path::PathBuf;
use std::process::ExitCode;

/// Quantum lattice Boltzmann experiments on a statevector emulator.
#[derive(Parser, Debug)]
#[command(name = "qlbm", version)]
struct Cli {
    #[arg(value_enum)]
    experiment: Experiment,
    /// TOML file with ExperimentConfig fields; unset keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for tables and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ReadoutMode>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    shots: Option<u64>,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let c = ExperimentConfig::load(p)?;
            if c.experiment != cli.experiment {
                bail!(
                    "config is for `{}`, not `{}`",
                    c.experiment.tag(),
                    cli.experiment.tag()
                );
            }
            c
        }
        None => ExperimentConfig::defaults(cli.experiment),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(m) = cli.mode {
        cfg.readout.mode = m;
    }
    if let Some(s) = cli.steps {
        cfg.steps = s;
    }
    if let Some(s) = cli.shots {
        cfg.readout.shots = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(&cli).and_then(|cfg| {
        let rec = qlbm_cli::run_experiment(&cfg)?;
        let paths = rec.write(&cfg, &cfg.output_dir)?;
        for (k, v) in &rec.summary {
            println!("{k} = {v}");
        }
        for p in paths {
            println!("wrote {}", p.display());
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
