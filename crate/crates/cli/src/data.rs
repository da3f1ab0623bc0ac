//! Data ingestion: CSV rows, moment matrices, probability tables, density
//! tables.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use falsify_iv_core::het_continuous::{PiecewiseDensity, TreatmentInstrumentJoint};
use falsify_iv_core::{DiscreteJoint, MomentSet, SampleData, VariableRole};

use crate::config::{ColumnRoles, DensityTableJson, MomentsJson, ProbTableJson};
use crate::CliError;

pub struct LoadedCsv {
    pub sample: SampleData,
    /// Instrument names in the order the core library sees them.
    pub instrument_names: Vec<String>,
    pub weights: Option<Vec<f64>>,
}

/// Reads a CSV with a header row and arranges columns in role order:
/// outcome, treatments, instruments, controls.
pub fn load_csv(path: &Path, cols: &ColumnRoles) -> Result<LoadedCsv, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("csv header: {e}")))?
        .clone();
    let find = |name: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("column '{name}' not found in {}", path.display())))
    };
    let mut picks: Vec<(usize, VariableRole)> = vec![(find(&cols.outcome)?, VariableRole::Outcome)];
    for t in &cols.treatments {
        picks.push((find(t)?, VariableRole::Treatment));
    }
    for z in &cols.instruments {
        picks.push((find(z)?, VariableRole::Instrument));
    }
    for w in &cols.controls {
        picks.push((find(w)?, VariableRole::Control));
    }
    let weight_idx = cols.weight.as_deref().map(find).transpose()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("csv row {}: {e}", i + 2)))?;
        let mut row = Vec::with_capacity(picks.len());
        for (idx, _) in &picks {
            let cell = record.get(*idx).ok_or_else(|| {
                CliError::Data(format!("csv row {}: missing cell {}", i + 2, idx))
            })?;
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Data(format!(
                    "csv row {}: cannot parse '{}' in column {}",
                    i + 2,
                    cell,
                    headers.get(*idx).unwrap_or("?")
                ))
            })?;
            row.push(v);
        }
        if let Some(wi) = weight_idx {
            let cell = record
                .get(wi)
                .ok_or_else(|| CliError::Data(format!("csv row {}: missing weight", i + 2)))?;
            let w: f64 = cell.trim().parse().map_err(|_| {
                CliError::Data(format!("csv row {}: cannot parse weight '{cell}'", i + 2))
            })?;
            weights.push(w);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Data("csv contains no data rows".into()));
    }
    let ncols = picks.len();
    let data = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    let roles: Vec<VariableRole> = picks.iter().map(|(_, r)| *r).collect();
    let sample = SampleData::new(data, roles).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(LoadedCsv {
        sample,
        instrument_names: cols.instruments.clone(),
        weights: weight_idx.map(|_| weights),
    })
}

/// Builds a population-mode moment set from a moments JSON block, assigning
/// roles by the column-role names.
pub fn load_moments(m: &MomentsJson, cols: &ColumnRoles) -> Result<(MomentSet, Vec<String>), CliError> {
    let p = m.variables.len();
    if m.mean.len() != p || m.cov.len() != p || m.cov.iter().any(|r| r.len() != p) {
        return Err(CliError::Config(
            "moments: mean/cov dimensions do not match variables".into(),
        ));
    }
    let role_of = |name: &String| -> Result<VariableRole, CliError> {
        if *name == cols.outcome {
            Ok(VariableRole::Outcome)
        } else if cols.treatments.contains(name) {
            Ok(VariableRole::Treatment)
        } else if cols.instruments.contains(name) {
            Ok(VariableRole::Instrument)
        } else if cols.controls.contains(name) {
            Ok(VariableRole::Control)
        } else {
            Err(CliError::Config(format!(
                "moments variable '{name}' has no role in columns"
            )))
        }
    };
    // Reorder into role order so instrument indices match the config order.
    let mut order: Vec<usize> = Vec::with_capacity(p);
    let mut names_in_order: Vec<&String> = vec![&cols.outcome];
    names_in_order.extend(cols.treatments.iter());
    names_in_order.extend(cols.instruments.iter());
    names_in_order.extend(cols.controls.iter());
    for name in &names_in_order {
        let idx = m
            .variables
            .iter()
            .position(|v| v == *name)
            .ok_or_else(|| CliError::Config(format!("column '{name}' not found in moments")))?;
        order.push(idx);
    }
    if order.len() != p {
        return Err(CliError::Config(
            "moments: every variable needs exactly one role".into(),
        ));
    }
    let mean = DVector::from_iterator(p, order.iter().map(|&i| m.mean[i]));
    let cov = DMatrix::from_fn(p, p, |i, j| m.cov[order[i]][order[j]]);
    let roles: Vec<VariableRole> = names_in_order.iter().map(|n| role_of(n).unwrap()).collect();
    let ms = MomentSet::from_parts(mean, cov, roles, m.n_obs)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok((ms, cols.instruments.clone()))
}

/// Builds a discrete joint from an explicit probability-table JSON.
pub fn load_prob_table(t: &ProbTableJson) -> Result<DiscreteJoint, CliError> {
    let supports = t.z_supports.clone();
    let s: usize = supports.iter().map(|v| v.len()).product();
    let mut probs = vec![0.0; 4 * s];
    for e in &t.entries {
        if e.y > 1 || e.x > 1 {
            return Err(CliError::Config("prob_table: y and x must be 0/1".into()));
        }
        if e.z.len() != supports.len() {
            return Err(CliError::Config(
                "prob_table: z vector length must equal the number of instruments".into(),
            ));
        }
        let mut m = 0usize;
        let mut stride = 1usize;
        for (l, zv) in e.z.iter().enumerate() {
            let j = supports[l]
                .iter()
                .position(|s| (s - zv).abs() < 1e-12)
                .ok_or_else(|| {
                    CliError::Config(format!("prob_table: z value {zv} not in support of Z_{l}"))
                })?;
            m += j * stride;
            stride *= supports[l].len();
        }
        probs[(e.y as usize * 2 + e.x as usize) * s + m] += e.p;
    }
    DiscreteJoint::new(supports, probs).map_err(|e| CliError::Data(e.to_string()))
}

/// Builds a discrete joint from (possibly weighted) CSV rows of binary
/// (Y, X, Z...) realizations.
pub fn joint_from_rows(loaded: &LoadedCsv) -> Result<DiscreteJoint, CliError> {
    let sample = &loaded.sample;
    let data = sample.data();
    let y_col = sample.outcome_col();
    let x_cols = sample.treatment_cols();
    if x_cols.len() != 1 {
        return Err(CliError::Config(
            "binary-outcome model needs exactly one treatment column".into(),
        ));
    }
    let z_cols = sample.instrument_cols();
    // Instrument supports from sorted distinct values.
    let mut supports: Vec<Vec<f64>> = Vec::new();
    for &c in &z_cols {
        let mut vals: Vec<f64> = (0..data.nrows()).map(|i| data[(i, c)]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        supports.push(vals);
    }
    let s: usize = supports.iter().map(|v| v.len()).product();
    let mut probs = vec![0.0; 4 * s];
    let mut total = 0.0;
    for i in 0..data.nrows() {
        let w = loaded.weights.as_ref().map_or(1.0, |ws| ws[i]);
        if w < 0.0 {
            return Err(CliError::Data(format!("negative weight in row {}", i + 2)));
        }
        let y = data[(i, y_col)];
        let x = data[(i, x_cols[0])];
        for (name, v) in [("outcome", y), ("treatment", x)] {
            if (v - 0.0).abs() > 1e-9 && (v - 1.0).abs() > 1e-9 {
                return Err(CliError::Data(format!(
                    "{name} must be binary 0/1, found {v} in row {}",
                    i + 2
                )));
            }
        }
        let mut m = 0usize;
        let mut stride = 1usize;
        for (l, &c) in z_cols.iter().enumerate() {
            let zv = data[(i, c)];
            let j = supports[l]
                .iter()
                .position(|sv| (sv - zv).abs() < 1e-12)
                .expect("value drawn from support");
            m += j * stride;
            stride *= supports[l].len();
        }
        probs[((y.round() as usize) * 2 + x.round() as usize) * s + m] += w;
        total += w;
    }
    if total <= 0.0 {
        return Err(CliError::Data("weights sum to zero".into()));
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    DiscreteJoint::new(supports, probs).map_err(|e| CliError::Data(e.to_string()))
}

pub struct LoadedDensityTable {
    pub joint: TreatmentInstrumentJoint,
    pub densities: Vec<PiecewiseDensity>,
    pub l: usize,
}

impl LoadedDensityTable {
    pub fn density(&self, x: usize, m: usize) -> &PiecewiseDensity {
        &self.densities[x * (1 << self.l) + m]
    }
}

/// Loads piecewise-constant conditional outcome densities and the treatment
/// by instrument table.
pub fn load_density_table(t: &DensityTableJson) -> Result<LoadedDensityTable, CliError> {
    let l = t.n_instruments;
    if l == 0 || l > 16 {
        return Err(CliError::Config("n_instruments must be in 1..=16".into()));
    }
    let s = 1usize << l;
    let code = |z: &[u8]| -> Result<usize, CliError> {
        if z.len() != l {
            return Err(CliError::Config(
                "z vector length must equal n_instruments".into(),
            ));
        }
        let mut m = 0usize;
        for (i, b) in z.iter().enumerate() {
            if *b > 1 {
                return Err(CliError::Config("z entries must be 0/1".into()));
            }
            m |= (*b as usize) << i;
        }
        Ok(m)
    };
    let mut p = [vec![0.0; s], vec![0.0; s]];
    for e in &t.p_xz {
        if e.x > 1 {
            return Err(CliError::Config("p_xz: x must be 0/1".into()));
        }
        p[e.x as usize][code(&e.z)?] += e.p;
    }
    let joint = TreatmentInstrumentJoint::new(l, p[0].clone(), p[1].clone())
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut densities: Vec<Option<PiecewiseDensity>> = vec![None; 2 * s];
    for e in &t.densities {
        if e.x > 1 {
            return Err(CliError::Config("densities: x must be 0/1".into()));
        }
        let d = PiecewiseDensity::new(e.breaks.clone(), e.values.clone())
            .map_err(|e| CliError::Data(e.to_string()))?;
        densities[e.x as usize * s + code(&e.z)?] = Some(d);
    }
    let densities: Vec<PiecewiseDensity> = densities
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            d.ok_or_else(|| {
                CliError::Config(format!(
                    "missing density for x = {}, cell {}",
                    i / s,
                    i % s
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(LoadedDensityTable {
        joint,
        densities,
        l,
    })
}
