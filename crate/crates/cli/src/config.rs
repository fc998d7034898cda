//! Flat JSON experiment configuration.
//!
//! Every key is optional; missing keys take the desk-scale defaults below.
//! Unknown keys are rejected so that typos fail loudly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SymbolCheck,
    Forward,
    Reduce,
    Nonuniq,
    Extension,
    Carleman,
    Convergence,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::SymbolCheck,
        Experiment::Forward,
        Experiment::Reduce,
        Experiment::Nonuniq,
        Experiment::Extension,
        Experiment::Carleman,
        Experiment::Convergence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::SymbolCheck => "symbol-check",
            Experiment::Forward => "forward",
            Experiment::Reduce => "reduce",
            Experiment::Nonuniq => "nonuniq",
            Experiment::Extension => "extension",
            Experiment::Carleman => "carleman",
            Experiment::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conductivity {
    Identity,
    ScalarBump,
    Anisotropic,
}

/// All recognized keys. `output_dir` is not part of the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Fractional order `s ∈ (0, 1)`.
    pub order: f64,
    /// One-dimensional desk problem: nodes, half width, horizon, final time.
    pub n_x: usize,
    pub n_t: usize,
    pub x_max: f64,
    pub horizon: f64,
    pub t_end: f64,
    pub conductivity: Conductivity,
    pub amplitude: f64,
    /// Refinement levels for the one-dimensional studies, as multiples of
    /// `n_t`.
    pub refinements: usize,
    /// Two-dimensional twist experiment.
    pub nonuniq_levels: Vec<usize>,
    pub nonuniq_n_t: usize,
    pub twist_amplitude: f64,
    pub twist_radius: f64,
    /// Degenerate extension.
    pub extension_orders: Vec<f64>,
    pub extension_modes: usize,
    pub extension_cells: usize,
    /// Carleman scan.
    pub betas: Vec<f64>,
    pub samples: usize,
    #[serde(skip_serializing)]
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::SymbolCheck,
            seed: 7,
            order: 0.5,
            n_x: 64,
            n_t: 64,
            x_max: 2.0,
            horizon: 1.0,
            t_end: 1.0,
            conductivity: Conductivity::ScalarBump,
            amplitude: 0.5,
            refinements: 3,
            nonuniq_levels: vec![32, 48, 64],
            nonuniq_n_t: 32,
            twist_amplitude: 0.5,
            twist_radius: 0.45,
            extension_orders: vec![0.3, 0.5, 0.7],
            extension_modes: 16,
            extension_cells: 400,
            betas: vec![5.25, 10.25, 20.25, 40.25],
            samples: 50,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let in_unit = |s: f64| s > 0.0 && s < 1.0;
        if !in_unit(self.order) {
            return bad(format!("order {} outside (0, 1)", self.order));
        }
        if self.n_x < 8 || self.n_t < 4 {
            return bad("n_x must be at least 8 and n_t at least 4".into());
        }
        if !(self.x_max > 0.0 && self.horizon > 0.0 && self.t_end > 0.0) {
            return bad("x_max, horizon and t_end must be positive".into());
        }
        if !(self.amplitude.is_finite() && self.amplitude > -1.0) {
            return bad(format!("conductivity amplitude {} must exceed -1", self.amplitude));
        }
        if self.refinements < 2 {
            return bad("refinements must be at least 2".into());
        }
        if self.nonuniq_levels.is_empty() || self.nonuniq_levels.iter().any(|&n| n < 16) {
            return bad("nonuniq_levels must be nonempty with at least 16 nodes per axis".into());
        }
        if self.extension_orders.iter().any(|&s| !in_unit(s)) || self.extension_orders.is_empty() {
            return bad("extension_orders must be nonempty and inside (0, 1)".into());
        }
        if self.extension_modes == 0 || self.extension_cells < 20 {
            return bad("extension_modes must be positive and extension_cells at least 20".into());
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| (b - b.floor() - 0.25).abs() > 1e-12 || *b < 1.0) {
            return bad("betas must be nonempty values in N + 1/4".into());
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}
