//! Report structures and file emission. Reports are pure functions of the
//! inputs: field order is fixed, floats use shortest-roundtrip JSON encoding,
//! and CSVs carry 12 significant digits, so identical inputs produce
//! byte-identical files.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub model: String,
    pub n_obs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub het_binary: Option<HetBinaryReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub het_continuous: Option<HetContinuousReport>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearReport {
    pub instruments: Vec<String>,
    pub n_treatments: usize,
    pub baseline_falsified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sargan_max_abs_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sargan_residuals: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_stats: Option<Vec<FStatEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub screened_out: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_2sls: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub twosls_weights: Option<Vec<f64>>,
    pub fas: FasReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fas_projection: Option<ProjectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frontier: Option<FrontierSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<DeltaBound>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<BreakdownReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FStatEntry {
    pub instrument: String,
    pub f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FasReport {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo_instrument: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi_instrument: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<FasVertex>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FasVertex {
    pub excluded: Vec<String>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionReport {
    pub alpha: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierSummary {
    pub n_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaBound {
    pub delta: Vec<f64>,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownReport {
    pub conclusion_lo: Option<f64>,
    pub conclusion_hi: Option<f64>,
    pub delta2_cap: f64,
    pub delta1: Vec<f64>,
    pub bf: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HetBinaryReport {
    pub n_instruments: usize,
    pub baseline_falsified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_c_star: Option<f64>,
    pub frontier_points: Vec<Vec<f64>>,
    pub fas_ate_lo: f64,
    pub fas_ate_hi: f64,
    pub no_assumption_lo: f64,
    pub no_assumption_hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<CBound>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CBound {
    pub c: Vec<f64>,
    pub falsified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ate_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ate_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p0_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p0_hi: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HetContinuousReport {
    pub n_instruments: usize,
    pub baseline_falsified: bool,
    pub frontier_points: Vec<Vec<f64>>,
    pub fas_ate_lo: f64,
    pub fas_ate_hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kitagawa: Option<Vec<KitagawaEntry>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KitagawaEntry {
    pub x: u8,
    pub integral: f64,
    pub refuted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub feasibility_tol: f64,
    pub distance_zero_tol: f64,
    pub cstar_bisection_tol: f64,
    pub relevance_tol: f64,
    pub condition_limit: f64,
    pub covariance_denominator: String,
    pub robust_dof_correction: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weak_iv_cutoff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize_instruments: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frontier_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simplex_subdivisions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_resolution: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sieve_order_m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sieve_grid_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown_delta2_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_grid_steps: Option<usize>,
}

/// 12 significant digits, scientific; the CSV number format.
pub fn fmt_sig12(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.11e}")
}

pub fn emit_report_json(report: &Report, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Io(format!("serialize report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))
}

/// Writes a frontier CSV: one row per sampled frontier point, relaxation
/// columns first, then the attached value columns.
pub fn emit_frontier_csv(
    header: &[String],
    rows: &[Vec<f64>],
    path: &Path,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_sig12(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))
}
