//! Batch front door: JSON config in, JSON report plus frontier/adaptive-set
//! CSVs out. All numerical work happens in `falsify-iv-core`; this crate only
//! loads data, dispatches to the chosen model, and serializes results.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use thiserror::Error;

use falsify_iv_core::geometry::{DIST_ZERO_TOL, FEAS_TOL};
use falsify_iv_core::het_binary::{self, CDependence, CSTAR_BISECTION_TOL};
use falsify_iv_core::het_continuous::{self, sieve_table_from_joint, SieveSpec};
use falsify_iv_core::linear_iv::{self, LinearIdentifiedSet, RelaxationVector, A1_PRIME_TOL};
use falsify_iv_core::moments::{self, CONDITION_LIMIT};
use falsify_iv_core::{FasResult, MomentSet, ReducedMoments, SampleData};

pub mod config;
pub mod data;
pub mod report;

use config::{AnalysisConfig, ModelKind, Options};
use report::*;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

fn data_err(e: impl std::fmt::Display, context: &str) -> CliError {
    CliError::Data(format!("{context}: {e}"))
}

/// Caps the global thread pool from FALSIFY_IV_THREADS (first call wins).
pub fn init_threads_from_env() {
    if let Ok(v) = std::env::var("FALSIFY_IV_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn resolve(path: &Path, out_dir: Option<&Path>) -> PathBuf {
    match out_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn base_provenance(cfg: &AnalysisConfig) -> Provenance {
    Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        feasibility_tol: FEAS_TOL,
        distance_zero_tol: DIST_ZERO_TOL,
        cstar_bisection_tol: CSTAR_BISECTION_TOL,
        relevance_tol: A1_PRIME_TOL,
        condition_limit: CONDITION_LIMIT,
        covariance_denominator: "n-1".to_string(),
        robust_dof_correction: "n/(n-k)".to_string(),
        weak_iv_cutoff: None,
        standardize_instruments: None,
        frontier_points: None,
        simplex_subdivisions: None,
        c_resolution: None,
        sieve_order_m: None,
        sieve_grid_n: None,
        breakdown_delta2_cap: cfg.options.breakdown.as_ref().map(|b| b.delta2_cap),
        oracle_grid_steps: cfg.options.oracle_grid_steps,
    }
}

/// Runs the configured analysis, writes the requested output files, and
/// returns the report.
pub fn run_analysis(cfg: &AnalysisConfig, out_dir: Option<&Path>) -> Result<Report, CliError> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("create {}: {e}", dir.display())))?;
    }
    let report = match cfg.model {
        ModelKind::Linear => run_linear(cfg, out_dir)?,
        ModelKind::HetBinary => run_het_binary(cfg, out_dir)?,
        ModelKind::HetContinuous => run_het_continuous(cfg, out_dir)?,
    };
    let report_path = cfg
        .output
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from("report.json"));
    emit_report_json(&report, &resolve(&report_path, out_dir))?;
    Ok(report)
}

/// Computes and writes only the frontier CSV.
pub fn run_frontier(cfg: &AnalysisConfig, out: &Path) -> Result<(), CliError> {
    let (header, rows) = match cfg.model {
        ModelKind::Linear => {
            let (r, names, _, _) = linear_inputs(cfg)?;
            linear_frontier_rows(&r, &names, &cfg.options)?
        }
        ModelKind::HetBinary => {
            let joint = binary_joint(cfg)?;
            het_binary_frontier_rows(&joint, &cfg.options)?
        }
        ModelKind::HetContinuous => {
            let table = continuous_table(cfg)?;
            het_continuous_frontier_rows(&table, &cfg.options)?
        }
    };
    emit_frontier_csv(&header, &rows, out)
}

// ---------------------------------------------------------------------------
// Linear model
// ---------------------------------------------------------------------------

fn linear_inputs(
    cfg: &AnalysisConfig,
) -> Result<(ReducedMoments, Vec<String>, Option<SampleData>, Option<usize>), CliError> {
    let cols = cfg
        .columns
        .as_ref()
        .ok_or_else(|| CliError::Config("linear model requires a columns section".into()))?;
    let (moment_set, names, sample): (MomentSet, Vec<String>, Option<SampleData>) =
        if let Some(path) = &cfg.data.csv {
            let loaded = data::load_csv(path, cols)?;
            let ms = moments::moment_set_from_sample(&loaded.sample)
                .map_err(|e| data_err(e, "moments.moment_set_from_sample"))?;
            (ms, loaded.instrument_names, Some(loaded.sample))
        } else if let Some(m) = &cfg.data.moments {
            let (ms, names) = data::load_moments(m, cols)?;
            (ms, names, None)
        } else {
            return Err(CliError::Config(
                "linear model needs data.csv or data.moments".into(),
            ));
        };
    let n_obs = moment_set.n_obs();
    let reduced =
        moments::partial_out_controls_with(&moment_set, cfg.options.standardize_instruments)
            .map_err(|e| data_err(e, "moments.partial_out_controls"))?;
    Ok((reduced, names, sample, n_obs))
}

fn fas_to_report(fas: &FasResult, names: &[String]) -> FasReport {
    match fas {
        FasResult::Interval {
            lo,
            hi,
            lo_instrument,
            hi_instrument,
            lo_se,
            hi_se,
            ..
        } => FasReport {
            kind: "interval".into(),
            lo: Some(*lo),
            hi: Some(*hi),
            lo_instrument: Some(names[*lo_instrument].clone()),
            hi_instrument: Some(names[*hi_instrument].clone()),
            lo_se: *lo_se,
            hi_se: *hi_se,
            vertices: None,
        },
        FasResult::VertexSet { vertices, .. } => FasReport {
            kind: "vertex_set".into(),
            lo: None,
            hi: None,
            lo_instrument: None,
            hi_instrument: None,
            lo_se: None,
            hi_se: None,
            vertices: Some(
                vertices
                    .iter()
                    .map(|v| FasVertex {
                        excluded: v.excluded.iter().map(|&i| names[i].clone()).collect(),
                        beta: v.beta.iter().copied().collect(),
                    })
                    .collect(),
            ),
        },
    }
}

fn linear_frontier_rows(
    r: &ReducedMoments,
    _names: &[String],
    opts: &Options,
) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let l = r.n_instruments();
    let k = r.n_treatments();
    let curve = if k == 1 {
        linear_iv::falsification_frontier_k1(r, opts.frontier_points)
            .map_err(|e| data_err(e, "linear_iv.falsification_frontier_k1"))?
    } else {
        linear_iv::ff_general_curve(r, opts.simplex_subdivisions)
            .map_err(|e| data_err(e, "linear_iv.ff_general"))?
    };
    let mut header: Vec<String> = (1..=l).map(|i| format!("delta_{i}")).collect();
    header.extend((1..=k).map(|i| format!("b_{i}")));
    let rows = curve
        .deltas
        .iter()
        .zip(&curve.params)
        .map(|(d, b)| {
            let mut row: Vec<f64> = d.as_slice().to_vec();
            row.extend(b.iter().copied());
            row
        })
        .collect();
    Ok((header, rows))
}

fn run_linear(cfg: &AnalysisConfig, out_dir: Option<&Path>) -> Result<Report, CliError> {
    let opts = &cfg.options;
    let (r, names, sample, n_obs) = linear_inputs(cfg)?;
    let k = r.n_treatments();
    let l = r.n_instruments();

    let baseline = linear_iv::identified_set_linear(&r, &RelaxationVector::zeros(l))
        .map_err(|e| data_err(e, "linear_iv.identified_set_linear"))?;
    let baseline_falsified = baseline
        .is_empty_set()
        .map_err(|e| data_err(e, "linear_iv.identified_set_linear"))?;

    let (sargan_max, sargan_residuals) = if k == 1 {
        let res = linear_iv::sargan_residuals(&r)
            .map_err(|e| data_err(e, "linear_iv.sargan_residuals"))?;
        let max = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let rows: Vec<Vec<f64>> = (0..res.nrows())
            .map(|i| res.row(i).iter().copied().collect())
            .collect();
        (Some(max), Some(rows))
    } else {
        (None, None)
    };

    let (f_stats, screened_out, fas) = if k == 1 {
        if let Some(sample) = &sample {
            let mut fs = Vec::with_capacity(l);
            for ell in 0..l {
                let f = moments::first_stage_f_stat(sample, ell)
                    .map_err(|e| data_err(e, "moments.first_stage_f_stat"))?;
                fs.push(FStatEntry {
                    instrument: names[ell].clone(),
                    f,
                });
            }
            let fas = linear_iv::estimate_fas(sample, opts.weak_iv_cutoff)
                .map_err(|e| data_err(e, "linear_iv.estimate_fas"))?;
            let screened: Vec<String> = match &fas {
                FasResult::Interval { screened_out, .. } => {
                    screened_out.iter().map(|&i| names[i].clone()).collect()
                }
                _ => Vec::new(),
            };
            (Some(fs), Some(screened), fas)
        } else {
            let fas = linear_iv::fas_k1(&r).map_err(|e| data_err(e, "linear_iv.fas_k1"))?;
            (None, None, fas)
        }
    } else {
        let fas = linear_iv::fas_general(&r).map_err(|e| data_err(e, "linear_iv.fas_general"))?;
        (None, None, fas)
    };

    let fas_projection = match (&opts.alpha, k) {
        (Some(alpha), k) if k > 1 => {
            let av = DVector::from_column_slice(alpha);
            let (lo, hi) = linear_iv::fas_projection(&r, &av)
                .map_err(|e| data_err(e, "linear_iv.fas_projection"))?;
            Some(ProjectionReport {
                alpha: alpha.clone(),
                lo,
                hi,
            })
        }
        _ => None,
    };

    let (full, weights) = if k == 1 {
        let full = moments::full_2sls(&r).ok();
        let w = linear_iv::twosls_weights(&r)
            .ok()
            .map(|w| w.iter().copied().collect());
        (full, w)
    } else {
        (None, None)
    };

    // Frontier rows (also written to CSV when requested).
    let (frontier_header, frontier_rows) = linear_frontier_rows(&r, &names, opts)?;
    let frontier = {
        let mut summary = FrontierSummary {
            n_points: frontier_rows.len(),
            intercept_1: None,
            intercept_2: None,
            slope: None,
        };
        if k == 1 && l == 2 {
            if let Ok((d1, d2, slope)) = linear_iv::ff_two_instruments(&r) {
                summary.intercept_1 = Some(d1);
                summary.intercept_2 = Some(d2);
                summary.slope = Some(slope);
            }
        }
        Some(summary)
    };

    let bounds = match &opts.delta_grid {
        None => None,
        Some(grid) => {
            let mut rows = Vec::with_capacity(grid.len());
            for delta in grid {
                let rv = RelaxationVector::new(delta.clone())
                    .map_err(|e| CliError::Config(format!("delta_grid: {e}")))?;
                let set = linear_iv::identified_set_linear(&r, &rv)
                    .map_err(|e| data_err(e, "linear_iv.identified_set_linear"))?;
                rows.push(delta_bound_row(delta, &set)?);
            }
            Some(rows)
        }
    };

    let breakdown = match &opts.breakdown {
        None => None,
        Some(b) => {
            let conclusion = (
                b.conclusion.0.unwrap_or(f64::NEG_INFINITY),
                b.conclusion.1.unwrap_or(f64::INFINITY),
            );
            let curve =
                linear_iv::breakdown_frontier_k1(&r, conclusion, &b.delta1_grid, b.delta2_cap)
                    .map_err(|e| data_err(e, "linear_iv.breakdown_frontier_k1"))?;
            Some(BreakdownReport {
                conclusion_lo: b.conclusion.0,
                conclusion_hi: b.conclusion.1,
                delta2_cap: curve.delta2_cap,
                delta1: curve.delta1,
                bf: curve.bf,
            })
        }
    };

    if let Some(path) = &cfg.output.frontier_csv {
        emit_frontier_csv(&frontier_header, &frontier_rows, &resolve(path, out_dir))?;
    }
    if let Some(path) = &cfg.output.fas_csv {
        emit_linear_fas_csv(&fas, &resolve(path, out_dir))?;
    }

    let fas_report = fas_to_report(&fas, &names);
    let mut provenance = base_provenance(cfg);
    provenance.weak_iv_cutoff = sample.as_ref().map(|_| opts.weak_iv_cutoff);
    provenance.standardize_instruments = Some(opts.standardize_instruments);
    provenance.frontier_points = Some(opts.frontier_points);
    if k > 1 {
        provenance.simplex_subdivisions = Some(opts.simplex_subdivisions);
    }

    Ok(Report {
        model: "linear".into(),
        n_obs,
        linear: Some(LinearReport {
            instruments: names,
            n_treatments: k,
            baseline_falsified,
            sargan_max_abs_residual: sargan_max,
            sargan_residuals,
            f_stats,
            screened_out,
            full_2sls: full,
            twosls_weights: weights,
            fas: fas_report,
            fas_projection,
            frontier,
            bounds,
            breakdown,
        }),
        het_binary: None,
        het_continuous: None,
        provenance,
    })
}

fn delta_bound_row(delta: &[f64], set: &LinearIdentifiedSet) -> Result<DeltaBound, CliError> {
    Ok(match set {
        LinearIdentifiedSet::Empty => DeltaBound {
            delta: delta.to_vec(),
            kind: "empty".into(),
            lo: None,
            hi: None,
        },
        LinearIdentifiedSet::AllSpace => DeltaBound {
            delta: delta.to_vec(),
            kind: "all_space".into(),
            lo: None,
            hi: None,
        },
        LinearIdentifiedSet::Interval { lo, hi } => DeltaBound {
            delta: delta.to_vec(),
            kind: "interval".into(),
            lo: Some(vec![*lo]),
            hi: Some(vec![*hi]),
        },
        LinearIdentifiedSet::Polytope(p) => {
            let cs: falsify_iv_core::ConvexSet = p.clone().into();
            let kdim = p.dim();
            let feasible = falsify_iv_core::geometry::intersection_feasible(&[&cs])
                .map_err(|e| data_err(e, "geometry.lp_minmax"))?;
            if !feasible {
                DeltaBound {
                    delta: delta.to_vec(),
                    kind: "empty".into(),
                    lo: None,
                    hi: None,
                }
            } else {
                let mut lo = Vec::with_capacity(kdim);
                let mut hi = Vec::with_capacity(kdim);
                for coord in 0..kdim {
                    let mut obj = DVector::zeros(kdim);
                    obj[coord] = 1.0;
                    let mm = falsify_iv_core::geometry::lp_minmax(&obj, &cs)
                        .map_err(|e| data_err(e, "geometry.lp_minmax"))?;
                    lo.push(mm.min);
                    hi.push(mm.max);
                }
                DeltaBound {
                    delta: delta.to_vec(),
                    kind: "polytope".into(),
                    lo: Some(lo),
                    hi: Some(hi),
                }
            }
        }
    })
}

fn emit_linear_fas_csv(fas: &FasResult, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    match fas {
        FasResult::Interval {
            lo, hi, lo_se, hi_se, ..
        } => {
            out.push_str("lo,hi,lo_se,hi_se\n");
            let cells = [
                fmt_sig12(*lo),
                fmt_sig12(*hi),
                lo_se.map(fmt_sig12).unwrap_or_default(),
                hi_se.map(fmt_sig12).unwrap_or_default(),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        FasResult::VertexSet { vertices, .. } => {
            let k = vertices.first().map_or(0, |v| v.beta.len());
            let mut header: Vec<String> = (1..=k).map(|i| format!("beta_{i}")).collect();
            header.push("excluded".into());
            out.push_str(&header.join(","));
            out.push('\n');
            for v in vertices {
                let mut cells: Vec<String> = v.beta.iter().map(|b| fmt_sig12(*b)).collect();
                cells.push(
                    v.excluded
                        .iter()
                        .map(|i| i.to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                );
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Binary-outcome heterogeneous model
// ---------------------------------------------------------------------------

fn binary_joint(cfg: &AnalysisConfig) -> Result<falsify_iv_core::DiscreteJoint, CliError> {
    if let Some(t) = &cfg.data.prob_table {
        data::load_prob_table(t)
    } else if let Some(path) = &cfg.data.csv {
        let cols = cfg
            .columns
            .as_ref()
            .ok_or_else(|| CliError::Config("csv data requires a columns section".into()))?;
        let loaded = data::load_csv(path, cols)?;
        data::joint_from_rows(&loaded)
    } else {
        Err(CliError::Config(
            "het_binary model needs data.prob_table or data.csv".into(),
        ))
    }
}

fn het_binary_frontier_rows(
    joint: &falsify_iv_core::DiscreteJoint,
    opts: &Options,
) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let l = joint.n_instruments();
    let frontier = if l == 1 {
        let c_star = het_binary::falsification_point_single(joint)
            .map_err(|e| data_err(e, "het_binary.falsification_point_single"))?;
        vec![vec![c_star]]
    } else {
        het_binary::falsification_frontier_grid(joint, opts.c_resolution)
            .map_err(|e| data_err(e, "het_binary.falsification_frontier_grid"))?
    };
    let mut header: Vec<String> = (1..=l).map(|i| format!("c_{i}")).collect();
    header.push("ate_lo".into());
    header.push("ate_hi".into());
    let mut rows = Vec::with_capacity(frontier.len());
    for c in &frontier {
        let cd = CDependence::new(c.clone()).map_err(|e| data_err(e, "het_binary"))?;
        let (lo, hi) =
            het_binary::ate_bounds(joint, &cd).map_err(|e| data_err(e, "het_binary.ate_bounds"))?;
        let mut row = c.clone();
        row.push(lo);
        row.push(hi);
        rows.push(row);
    }
    Ok((header, rows))
}

fn run_het_binary(cfg: &AnalysisConfig, out_dir: Option<&Path>) -> Result<Report, CliError> {
    let opts = &cfg.options;
    let joint = binary_joint(cfg)?;
    let l = joint.n_instruments();

    let baseline_falsified = het_binary::is_falsified_at(
        &joint,
        &CDependence::uniform(l, 0.0).map_err(|e| data_err(e, "het_binary"))?,
    )
    .map_err(|e| data_err(e, "het_binary.is_falsified_at"))?;

    let c_star = if l == 1 {
        Some(
            het_binary::falsification_point_single(&joint)
                .map_err(|e| data_err(e, "het_binary.falsification_point_single"))?,
        )
    } else {
        None
    };
    let oracle_c_star = match (l, joint.support_size(0), opts.oracle_grid_steps) {
        (1, 2, Some(steps)) => Some(
            het_binary::oracle_cstar_latent(&joint, steps)
                .map_err(|e| data_err(e, "het_binary.oracle_cstar_latent"))?,
        ),
        _ => None,
    };

    let (frontier_header, frontier_rows) = het_binary_frontier_rows(&joint, opts)?;
    let frontier_points: Vec<Vec<f64>> = frontier_rows
        .iter()
        .map(|r| r[..l].to_vec())
        .collect();

    let (fas_lo, fas_hi) = het_binary::fas_ate(&joint, opts.c_resolution)
        .map_err(|e| data_err(e, "het_binary.fas_ate"))?;
    let ones = CDependence::uniform(l, 1.0).map_err(|e| data_err(e, "het_binary"))?;
    let (na_lo, na_hi) = het_binary::ate_bounds(&joint, &ones)
        .map_err(|e| data_err(e, "het_binary.ate_bounds"))?;

    let bounds = match &opts.c_grid {
        None => None,
        Some(grid) => {
            let mut rows = Vec::with_capacity(grid.len());
            for c in grid {
                let cd = CDependence::new(c.clone())
                    .map_err(|e| CliError::Config(format!("c_grid: {e}")))?;
                let falsified = het_binary::is_falsified_at(&joint, &cd)
                    .map_err(|e| data_err(e, "het_binary.is_falsified_at"))?;
                if falsified {
                    rows.push(CBound {
                        c: c.clone(),
                        falsified,
                        ate_lo: None,
                        ate_hi: None,
                        p1_lo: None,
                        p1_hi: None,
                        p0_lo: None,
                        p0_hi: None,
                    });
                } else {
                    let (a_lo, a_hi) = het_binary::ate_bounds(&joint, &cd)
                        .map_err(|e| data_err(e, "het_binary.ate_bounds"))?;
                    let (p1_lo, p1_hi) = het_binary::potential_outcome_bounds(&joint, &cd, 1)
                        .map_err(|e| data_err(e, "het_binary.potential_outcome_bounds"))?;
                    let (p0_lo, p0_hi) = het_binary::potential_outcome_bounds(&joint, &cd, 0)
                        .map_err(|e| data_err(e, "het_binary.potential_outcome_bounds"))?;
                    rows.push(CBound {
                        c: c.clone(),
                        falsified,
                        ate_lo: Some(a_lo),
                        ate_hi: Some(a_hi),
                        p1_lo: Some(p1_lo),
                        p1_hi: Some(p1_hi),
                        p0_lo: Some(p0_lo),
                        p0_hi: Some(p0_hi),
                    });
                }
            }
            Some(rows)
        }
    };

    if let Some(path) = &cfg.output.frontier_csv {
        emit_frontier_csv(&frontier_header, &frontier_rows, &resolve(path, out_dir))?;
    }
    if let Some(path) = &cfg.output.fas_csv {
        let mut out = String::from("ate_lo,ate_hi\n");
        out.push_str(&format!("{},{}\n", fmt_sig12(fas_lo), fmt_sig12(fas_hi)));
        std::fs::write(resolve(path, out_dir), out)
            .map_err(|e| CliError::Io(format!("write fas csv: {e}")))?;
    }

    let mut provenance = base_provenance(cfg);
    provenance.c_resolution = Some(opts.c_resolution);

    Ok(Report {
        model: "het_binary".into(),
        n_obs: None,
        linear: None,
        het_binary: Some(HetBinaryReport {
            n_instruments: l,
            baseline_falsified,
            c_star,
            oracle_c_star,
            frontier_points,
            fas_ate_lo: fas_lo,
            fas_ate_hi: fas_hi,
            no_assumption_lo: na_lo,
            no_assumption_hi: na_hi,
            bounds,
        }),
        het_continuous: None,
        provenance,
    })
}

// ---------------------------------------------------------------------------
// Continuous-outcome heterogeneous model
// ---------------------------------------------------------------------------

fn continuous_table(
    cfg: &AnalysisConfig,
) -> Result<falsify_iv_core::ConditionalDensityTable, CliError> {
    let t = cfg.data.density_table.as_ref().ok_or_else(|| {
        CliError::Config("het_continuous model needs data.density_table".into())
    })?;
    let loaded = data::load_density_table(t)?;
    let spec = SieveSpec::new(cfg.options.sieve.order_m, cfg.options.sieve.grid_n)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let densities = loaded.densities.clone();
    let l = loaded.l;
    sieve_table_from_joint(
        move |y, x, m| densities[x * (1 << l) + m].eval(y),
        &loaded.joint,
        spec,
    )
    .map_err(|e| data_err(e, "het_continuous.sieve_table_from_joint"))
}

fn het_continuous_frontier_rows(
    table: &falsify_iv_core::ConditionalDensityTable,
    opts: &Options,
) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let l = table.joint().n_instruments();
    let (frontier, _) = het_continuous::approx_ff_fas_cont(table, opts.c_resolution, |y| y, |y| -y)
        .map_err(|e| data_err(e, "het_continuous.approx_ff_fas_cont"))?;
    let mut header: Vec<String> = (1..=l).map(|i| format!("c_{i}")).collect();
    header.push("ate_lo".into());
    header.push("ate_hi".into());
    let mut rows = Vec::with_capacity(frontier.len());
    for c in &frontier {
        let (lo, hi) = het_continuous::functional_bounds_cont(table, c, |y| y, |y| -y)
            .map_err(|e| data_err(e, "het_continuous.functional_bounds_cont"))?;
        let mut row = c.clone();
        row.push(lo);
        row.push(hi);
        rows.push(row);
    }
    Ok((header, rows))
}

fn run_het_continuous(cfg: &AnalysisConfig, out_dir: Option<&Path>) -> Result<Report, CliError> {
    let opts = &cfg.options;
    let table = continuous_table(cfg)?;
    let l = table.joint().n_instruments();

    let baseline_falsified = het_continuous::is_falsified_cont(&table, &vec![0.0; l])
        .map_err(|e| data_err(e, "het_continuous.is_falsified_cont"))?;

    let (frontier, (fas_lo, fas_hi)) =
        het_continuous::approx_ff_fas_cont(&table, opts.c_resolution, |y| y, |y| -y)
            .map_err(|e| data_err(e, "het_continuous.approx_ff_fas_cont"))?;

    let kitagawa = if opts.kitagawa && l == 1 {
        let t = cfg.data.density_table.as_ref().unwrap();
        let loaded = data::load_density_table(t)?;
        let mut entries = Vec::new();
        for x in 0..2usize {
            let joint = &loaded.joint;
            let px = [
                joint.p_x_given_zl(x, 0, 0),
                joint.p_x_given_zl(x, 0, 1),
            ];
            let dens0 = loaded.density(x, 0).clone();
            let dens1 = loaded.density(x, 1).clone();
            let f = move |y: f64, z: usize| -> f64 {
                let d = if z == 0 { &dens0 } else { &dens1 };
                d.eval(y) * px[z]
            };
            let (integral, refuted) = het_continuous::kitagawa_refutation_check(f, (0.0, 1.0))
                .map_err(|e| data_err(e, "het_continuous.kitagawa_refutation_check"))?;
            entries.push(KitagawaEntry {
                x: x as u8,
                integral,
                refuted,
            });
        }
        Some(entries)
    } else {
        None
    };

    if let Some(path) = &cfg.output.frontier_csv {
        let (header, rows) = het_continuous_frontier_rows(&table, opts)?;
        emit_frontier_csv(&header, &rows, &resolve(path, out_dir))?;
    }
    if let Some(path) = &cfg.output.fas_csv {
        let mut out = String::from("ate_lo,ate_hi\n");
        out.push_str(&format!("{},{}\n", fmt_sig12(fas_lo), fmt_sig12(fas_hi)));
        std::fs::write(resolve(path, out_dir), out)
            .map_err(|e| CliError::Io(format!("write fas csv: {e}")))?;
    }

    let mut provenance = base_provenance(cfg);
    provenance.c_resolution = Some(opts.c_resolution);
    provenance.sieve_order_m = Some(opts.sieve.order_m);
    provenance.sieve_grid_n = Some(opts.sieve.grid_n);

    Ok(Report {
        model: "het_continuous".into(),
        n_obs: None,
        linear: None,
        het_binary: None,
        het_continuous: Some(HetContinuousReport {
            n_instruments: l,
            baseline_falsified,
            frontier_points: frontier,
            fas_ate_lo: fas_lo,
            fas_ate_hi: fas_hi,
            kitagawa,
        }),
        provenance,
    })
}
