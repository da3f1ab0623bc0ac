//! JSON analysis configuration.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    HetBinary,
    HetContinuous,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub model: ModelKind,
    pub data: DataSource,
    #[serde(default)]
    pub columns: Option<ColumnRoles>,
    #[serde(default)]
    pub options: Options,
    #[serde(default)]
    pub output: OutputPaths,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub moments: Option<MomentsJson>,
    #[serde(default)]
    pub prob_table: Option<ProbTableJson>,
    #[serde(default)]
    pub density_table: Option<DensityTableJson>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatments: Vec<String>,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub controls: Vec<String>,
    /// Optional frequency-weight column (probability tables from weighted
    /// rows).
    #[serde(default)]
    pub weight: Option<String>,
}

impl ColumnRoles {
    pub fn validate(&self) -> Result<(), CliError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut all: Vec<&String> = vec![&self.outcome];
        all.extend(self.treatments.iter());
        all.extend(self.instruments.iter());
        all.extend(self.controls.iter());
        if let Some(w) = &self.weight {
            all.push(w);
        }
        for name in all {
            if !seen.insert(name) {
                return Err(CliError::Config(format!(
                    "column '{name}' assigned to more than one role"
                )));
            }
        }
        if self.treatments.is_empty() {
            return Err(CliError::Config("at least one treatment column".into()));
        }
        if self.instruments.is_empty() {
            return Err(CliError::Config("at least one instrument column".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsJson {
    pub variables: Vec<String>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    #[serde(default)]
    pub n_obs: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbTableJson {
    pub z_supports: Vec<Vec<f64>>,
    pub entries: Vec<ProbEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbEntry {
    pub y: u8,
    pub x: u8,
    pub z: Vec<f64>,
    pub p: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityTableJson {
    pub n_instruments: usize,
    pub p_xz: Vec<PxzEntry>,
    pub densities: Vec<DensityEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PxzEntry {
    pub x: u8,
    pub z: Vec<u8>,
    pub p: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityEntry {
    pub x: u8,
    pub z: Vec<u8>,
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    pub weak_iv_cutoff: f64,
    pub standardize_instruments: bool,
    /// Grid size of the scalar-treatment frontier curve.
    pub frontier_points: usize,
    /// Barycentric subdivision level of the general-K frontier sampler.
    pub simplex_subdivisions: usize,
    /// Grid resolution of the c-space frontier scans.
    pub c_resolution: f64,
    /// Relaxations at which to tabulate linear identified sets.
    pub delta_grid: Option<Vec<Vec<f64>>>,
    /// Dependence bounds at which to tabulate treatment-effect bounds.
    pub c_grid: Option<Vec<Vec<f64>>>,
    /// Linear functional for the general-K adaptive-set projection.
    pub alpha: Option<Vec<f64>>,
    pub breakdown: Option<BreakdownOptions>,
    pub sieve: SieveOptions,
    /// Grid steps of the latent-distribution check of the falsification
    /// point (single binary instrument only).
    pub oracle_grid_steps: Option<usize>,
    /// Run the density-overlap refutation check (continuous model, one
    /// instrument).
    pub kitagawa: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            weak_iv_cutoff: 10.0,
            standardize_instruments: false,
            frontier_points: 101,
            simplex_subdivisions: 10,
            c_resolution: 0.01,
            delta_grid: None,
            c_grid: None,
            alpha: None,
            breakdown: None,
            sieve: SieveOptions::default(),
            oracle_grid_steps: None,
            kitagawa: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakdownOptions {
    /// Conclusion interval; null endpoints mean unbounded.
    pub conclusion: (Option<f64>, Option<f64>),
    pub delta1_grid: Vec<f64>,
    pub delta2_cap: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SieveOptions {
    pub order_m: usize,
    pub grid_n: usize,
}

impl Default for SieveOptions {
    fn default() -> Self {
        Self {
            order_m: 30,
            grid_n: 201,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
    pub frontier_csv: Option<PathBuf>,
    pub fas_csv: Option<PathBuf>,
}

pub fn load_config(path: &Path) -> Result<AnalysisConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: AnalysisConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
    if let Some(cols) = &cfg.columns {
        cols.validate()?;
    }
    Ok(cfg)
}
