//! Comma-separated tables and the run manifest.

use crate::config::ExperimentConfig;
use anyhow::{Context, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One metric table. The header is fixed per table name (see [`SCHEMAS`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

/// Documented header of every table the experiments emit.
pub const SCHEMAS: &[(&str, &[&str])] = &[
    ("pulse_error", &["step", "time", "rel_l2_error"]),
    ("pulse_profile", &["step", "time", "x", "numeric", "analytic"]),
    ("energy_curve", &["step", "statevector", "shots", "seed", "sampled", "kept_ratio"]),
    ("energy_rms", &["shots", "rms_deviation"]),
    ("energy_samples", &["repetition", "seed", "estimate", "stderr", "kept_ratio"]),
    ("energy_histogram", &["bin_low", "bin_high", "count"]),
    ("energy_summary", &["exact", "variance", "shots", "repetitions", "mean", "stderr_of_mean", "mean_stderr"]),
    ("airfoil_trace", &["step", "mode", "mse", "p_keep", "kept_shots"]),
    ("airfoil_fields", &["step", "mode", "x", "y", "rho", "ux", "uy"]),
    ("verify", &["grid", "tau", "boundary", "mask", "samples", "max_abs_deviation"]),
];

impl Table {
    pub fn new(name: &'static str) -> Self {
        let header = SCHEMAS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, h)| *h)
            .unwrap_or_else(|| panic!("undocumented table {name}"));
        Self {
            name,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    /// Values of column `col` parsed as f64.
    pub fn column(&self, col: &str) -> Vec<f64> {
        let j = self
            .header
            .iter()
            .position(|h| *h == col)
            .unwrap_or_else(|| panic!("no column {col} in {}", self.name));
        self.rows.iter().map(|r| r[j].parse().unwrap_or(f64::NAN)).collect()
    }
}

/// Shortest round-trip formatting keeps tables byte-identical across runs.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutputRecord {
    pub tables: Vec<Table>,
    /// Scalar results echoed into the manifest.
    pub summary: Vec<(String, String)>,
}

impl OutputRecord {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Writes `<name>.csv` per table plus `manifest.toml`; returns the paths.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut paths = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            std::fs::write(&p, t.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            paths.push(p);
        }
        let p = dir.join("manifest.toml");
        std::fs::write(&p, self.manifest(cfg))?;
        paths.push(p);
        Ok(paths)
    }

    pub fn manifest(&self, cfg: &ExperimentConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "experiment = {:?}", cfg.experiment.tag());
        let _ = writeln!(s, "seed = {}", cfg.seed);
        let _ = writeln!(s, "qlbm_cli = {:?}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "rng = {:?}", qlbm_core::simulator::RNG_ALGORITHM);
        let tables: Vec<String> = self.tables.iter().map(|t| format!("{:?}", t.name)).collect();
        let _ = writeln!(s, "tables = [{}]", tables.join(", "));
        let _ = writeln!(s, "\n[summary]");
        for (k, v) in &self.summary {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&indent_config(&cfg.to_toml()));
        s
    }
}

/// Re-roots the config's sections under `[config.*]`.
fn indent_config(toml_text: &str) -> String {
    toml_text
        .lines()
        .map(|l| match l.strip_prefix('[') {
            Some(rest) => format!("[config.{rest}"),
            None => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}
