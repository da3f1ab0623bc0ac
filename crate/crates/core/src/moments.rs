//! Sufficient statistics of the linear instrumental-variable model.
//!
//! Raw data or user-supplied moment matrices are reduced to the reduced-form
//! coefficients psi = Var(Z)^-1 Cov(Z,Y), the first stage Pi = Var(Z)^-1
//! Cov(Z,X), and Var(Z), with exogenous controls partialled out of Y, X and Z
//! beforehand. Sample-only diagnostics (first-stage F statistics,
//! heteroskedasticity-robust standard errors) operate on the row data
//! directly.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Condition-number gate for matrix inversions.
pub const CONDITION_LIMIT: f64 = 1e12;

/// First-stage F statistics above this cap are reported as `+inf`.
pub const F_STAT_CAP: f64 = 1e12;

#[derive(Debug, Clone, Error)]
pub enum MomentsError {
    #[error("need at least two data rows")]
    EmptyData,
    #[error("column {0} has (near) zero variance but is used as an instrument or treatment")]
    ConstantColumn(usize),
    #[error("data contains a non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("role map does not match data: {0}")]
    RoleMismatch(String),
    #[error("covariance matrix is not symmetric")]
    NotSymmetric,
    #[error("covariance matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("control variance matrix is singular")]
    SingularControlVariance,
    #[error("instrument variance matrix is singular")]
    SingularInstrumentVariance,
    #[error("excluded-instrument submatrix is rank deficient")]
    RankDeficientSubmatrix,
    #[error("2SLS denominator is zero")]
    ZeroDenominator,
    #[error("operation requires sample data, not population moments")]
    PopulationModeUnsupported,
    #[error("too few observations: n = {n}, regressors = {k}")]
    InsufficientObservations { n: usize, k: usize },
    #[error("operation requires a single treatment (K = 1), got K = {0}")]
    KNotOne(usize),
    #[error("instrument index {0} out of range")]
    BadInstrumentIndex(usize),
}

/// Role of a data column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableRole {
    Outcome,
    Treatment,
    Instrument,
    Control,
}

/// Row-level data with a role per column.
#[derive(Debug, Clone)]
pub struct SampleData {
    data: DMatrix<f64>,
    roles: Vec<VariableRole>,
}

impl SampleData {
    pub fn new(data: DMatrix<f64>, roles: Vec<VariableRole>) -> Result<Self, MomentsError> {
        if roles.len() != data.ncols() {
            return Err(MomentsError::RoleMismatch(format!(
                "{} roles for {} columns",
                roles.len(),
                data.ncols()
            )));
        }
        check_roles(&roles)?;
        for i in 0..data.nrows() {
            for j in 0..data.ncols() {
                if !data[(i, j)].is_finite() {
                    return Err(MomentsError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self { data, roles })
    }

    pub fn n_obs(&self) -> usize {
        self.data.nrows()
    }

    pub fn roles(&self) -> &[VariableRole] {
        &self.roles
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    fn cols_with(&self, role: VariableRole) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn outcome_col(&self) -> usize {
        self.cols_with(VariableRole::Outcome)[0]
    }

    pub fn treatment_cols(&self) -> Vec<usize> {
        self.cols_with(VariableRole::Treatment)
    }

    pub fn instrument_cols(&self) -> Vec<usize> {
        self.cols_with(VariableRole::Instrument)
    }

    pub fn control_cols(&self) -> Vec<usize> {
        self.cols_with(VariableRole::Control)
    }
}

fn check_roles(roles: &[VariableRole]) -> Result<(), MomentsError> {
    let count = |r: VariableRole| roles.iter().filter(|x| **x == r).count();
    if count(VariableRole::Outcome) != 1 {
        return Err(MomentsError::RoleMismatch(
            "exactly one outcome column is required".into(),
        ));
    }
    if count(VariableRole::Treatment) == 0 {
        return Err(MomentsError::RoleMismatch(
            "at least one treatment column is required".into(),
        ));
    }
    if count(VariableRole::Instrument) == 0 {
        return Err(MomentsError::RoleMismatch(
            "at least one instrument column is required".into(),
        ));
    }
    Ok(())
}

/// Means and covariance of all model variables, with the role of each entry.
///
/// `n_obs` is `None` in population mode, where the moments are taken as exact
/// and sample-only operations are unavailable.
#[derive(Debug, Clone)]
pub struct MomentSet {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n_obs: Option<usize>,
    roles: Vec<VariableRole>,
}

impl MomentSet {
    /// Builds a moment set from user-supplied moments (population mode when
    /// `n_obs` is `None`).
    pub fn from_parts(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        roles: Vec<VariableRole>,
        n_obs: Option<usize>,
    ) -> Result<Self, MomentsError> {
        if mean.len() != cov.nrows() || cov.nrows() != cov.ncols() || roles.len() != mean.len() {
            return Err(MomentsError::RoleMismatch(
                "mean, covariance and role dimensions disagree".into(),
            ));
        }
        check_roles(&roles)?;
        let scale = cov.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..cov.nrows() {
            for j in (i + 1)..cov.ncols() {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(MomentsError::NotSymmetric);
                }
            }
        }
        let sym = (cov.clone() + cov.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        if min_eig < -1e-10 * scale.max(1.0) {
            return Err(MomentsError::NotPsd(min_eig));
        }
        Ok(Self {
            mean,
            cov: sym,
            n_obs,
            roles,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n_obs(&self) -> Option<usize> {
        self.n_obs
    }

    pub fn roles(&self) -> &[VariableRole] {
        &self.roles
    }

    fn cols_with(&self, role: VariableRole) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.cov[(rows[i], cols[j])])
    }
}

/// Sample means and covariances (denominator n-1) from row data.
pub fn moment_set_from_sample(sample: &SampleData) -> Result<MomentSet, MomentsError> {
    let n = sample.n_obs();
    if n < 2 {
        return Err(MomentsError::EmptyData);
    }
    let p = sample.data.ncols();
    let mut mean = DVector::zeros(p);
    for j in 0..p {
        mean[j] = sample.data.column(j).sum() / n as f64;
    }
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let mut acc = 0.0;
            for r in 0..n {
                acc += (sample.data[(r, i)] - mean[i]) * (sample.data[(r, j)] - mean[j]);
            }
            let v = acc / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let scale = cov.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for (j, role) in sample.roles.iter().enumerate() {
        if matches!(role, VariableRole::Instrument | VariableRole::Treatment)
            && cov[(j, j)] <= 1e-14 * scale
        {
            return Err(MomentsError::ConstantColumn(j));
        }
    }
    MomentSet::from_parts(mean, cov, sample.roles.clone(), Some(n))
}

/// Reduced-form and first-stage coefficients after partialling out controls.
#[derive(Debug, Clone)]
pub struct ReducedMoments {
    /// psi, length L.
    pub psi: DVector<f64>,
    /// Pi, L x K.
    pub pi: DMatrix<f64>,
    /// Var(Z) after partialling out controls, L x L.
    pub var_z: DMatrix<f64>,
    pub controls_absorbed: bool,
}

impl ReducedMoments {
    pub fn n_instruments(&self) -> usize {
        self.psi.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.pi.ncols()
    }

    /// Raw covariance vector Cov(Z, Y) = Var(Z) psi.
    pub fn cov_zy(&self) -> DVector<f64> {
        &self.var_z * &self.psi
    }

    /// Raw covariance matrix Cov(Z, X) = Var(Z) Pi.
    pub fn cov_zx(&self) -> DMatrix<f64> {
        &self.var_z * &self.pi
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.iter().fold(0.0f64, |a, &v| a.max(v));
    let min = svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn invert_guarded(m: &DMatrix<f64>, err: MomentsError) -> Result<DMatrix<f64>, MomentsError> {
    if condition_number(m) >= CONDITION_LIMIT {
        return Err(err);
    }
    m.clone().try_inverse().ok_or(err)
}

/// Reduces a [`MomentSet`] to `(psi, Pi, Var(Z))`, partialling out any control
/// variables from Y, X and Z. With no controls this is the identity reduction.
pub fn partial_out_controls(m: &MomentSet) -> Result<ReducedMoments, MomentsError> {
    partial_out_controls_with(m, false)
}

/// Like [`partial_out_controls`], optionally standardizing each instrument to
/// unit variance first so the relaxation magnitudes are comparable across
/// instruments.
pub fn partial_out_controls_with(
    m: &MomentSet,
    standardize_instruments: bool,
) -> Result<ReducedMoments, MomentsError> {
    let y = m.cols_with(VariableRole::Outcome);
    let x = m.cols_with(VariableRole::Treatment);
    let z = m.cols_with(VariableRole::Instrument);
    let w = m.cols_with(VariableRole::Control);

    let mut s_zz = m.block(&z, &z);
    let mut s_zy = m.block(&z, &y);
    let mut s_zx = m.block(&z, &x);

    if standardize_instruments {
        let scale: Vec<f64> = z.iter().map(|&j| m.cov[(j, j)].sqrt()).collect();
        for (i, si) in scale.iter().enumerate() {
            if *si <= 0.0 {
                return Err(MomentsError::ConstantColumn(z[i]));
            }
        }
        for i in 0..z.len() {
            for j in 0..z.len() {
                s_zz[(i, j)] /= scale[i] * scale[j];
            }
            s_zy[(i, 0)] /= scale[i];
            for k in 0..x.len() {
                s_zx[(i, k)] /= scale[i];
            }
        }
    }

    let (var_z, cov_zy, cov_zx, absorbed) = if w.is_empty() {
        (s_zz, s_zy, s_zx, false)
    } else {
        let s_ww = m.block(&w, &w);
        let mut s_zw = m.block(&z, &w);
        if standardize_instruments {
            let scale: Vec<f64> = z.iter().map(|&j| m.cov[(j, j)].sqrt()).collect();
            for i in 0..z.len() {
                for j in 0..w.len() {
                    s_zw[(i, j)] /= scale[i];
                }
            }
        }
        let s_wy = m.block(&w, &y);
        let s_wx = m.block(&w, &x);
        let ww_inv = invert_guarded(&s_ww, MomentsError::SingularControlVariance)?;
        let proj = &s_zw * &ww_inv;
        (
            &s_zz - &proj * s_zw.transpose(),
            &s_zy - &proj * s_wy,
            &s_zx - &proj * s_wx,
            true,
        )
    };

    let vz_inv = invert_guarded(&var_z, MomentsError::SingularInstrumentVariance)?;
    let psi_mat = &vz_inv * &cov_zy;
    let pi = &vz_inv * &cov_zx;
    Ok(ReducedMoments {
        psi: DVector::from_iterator(psi_mat.nrows(), psi_mat.column(0).iter().copied()),
        pi,
        var_z,
        controls_absorbed: absorbed,
    })
}

/// Just-identified two-stage least squares estimand.
#[derive(Debug, Clone)]
pub struct TwoSlsEstimate {
    /// Coefficients on the treatments, length K.
    pub beta: DVector<f64>,
    /// Zero-based indices of the excluded instruments, |excluded| = K.
    pub excluded: Vec<usize>,
    pub robust_se: Option<DVector<f64>>,
    pub f_stat: Option<f64>,
}

/// beta = Pi_L^-1 psi_L for the K instruments in `excluded`; the remaining
/// instruments act as controls.
pub fn just_identified_2sls(
    r: &ReducedMoments,
    excluded: &[usize],
) -> Result<TwoSlsEstimate, MomentsError> {
    let k = r.n_treatments();
    let l = r.n_instruments();
    if excluded.len() != k {
        return Err(MomentsError::RoleMismatch(format!(
            "excluded set has {} indices, need K = {}",
            excluded.len(),
            k
        )));
    }
    let mut seen = vec![false; l];
    for &e in excluded {
        if e >= l {
            return Err(MomentsError::BadInstrumentIndex(e));
        }
        if seen[e] {
            return Err(MomentsError::RoleMismatch("duplicate excluded index".into()));
        }
        seen[e] = true;
    }
    let sub = DMatrix::from_fn(k, k, |i, j| r.pi[(excluded[i], j)]);
    let rhs = DVector::from_fn(k, |i, _| r.psi[excluded[i]]);
    // Relative determinant gate (Hadamard scale).
    let det = sub.determinant();
    let scale: f64 = (0..k)
        .map(|i| sub.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .product();
    if det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(MomentsError::RankDeficientSubmatrix);
    }
    let beta = sub
        .full_piv_lu()
        .solve(&rhs)
        .ok_or(MomentsError::RankDeficientSubmatrix)?;
    Ok(TwoSlsEstimate {
        beta,
        excluded: excluded.to_vec(),
        robust_se: None,
        f_stat: None,
    })
}

/// The all-instrument 2SLS estimand for a single treatment:
/// `pi'Var(Z)psi / pi'Var(Z)pi`.
pub fn full_2sls(r: &ReducedMoments) -> Result<f64, MomentsError> {
    if r.n_treatments() != 1 {
        return Err(MomentsError::KNotOne(r.n_treatments()));
    }
    let pi = DVector::from_iterator(r.pi.nrows(), r.pi.column(0).iter().copied());
    let vpi = &r.var_z * &pi;
    let den = pi.dot(&vpi);
    let num = r.psi.dot(&vpi);
    let scale = r.var_z.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if den.abs() <= 1e-12 * scale {
        return Err(MomentsError::ZeroDenominator);
    }
    Ok(num / den)
}

/// Ordinary least squares with a heteroskedasticity-robust (sandwich)
/// covariance, small-sample correction n/(n-k).
pub(crate) fn ols_sandwich(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), MomentsError> {
    let n = design.nrows();
    let k = design.ncols();
    if n <= k + 1 {
        return Err(MomentsError::InsufficientObservations { n, k });
    }
    let xtx = design.transpose() * design;
    let bread = invert_guarded(&xtx, MomentsError::RankDeficientSubmatrix)?;
    let beta = &bread * (design.transpose() * y);
    let resid = y - design * &beta;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let e2 = resid[i] * resid[i];
        if e2 == 0.0 {
            continue;
        }
        let row = design.row(i);
        for a in 0..k {
            for b in a..k {
                let v = e2 * row[a] * row[b];
                meat[(a, b)] += v;
                if a != b {
                    meat[(b, a)] += v;
                }
            }
        }
    }
    let dof = n as f64 / (n - k) as f64;
    let cov = (&bread * meat * &bread) * dof;
    Ok((beta, cov))
}

/// Just-identified IV (instrument matrix square in the regressor matrix) with
/// sandwich covariance.
fn iv_sandwich(
    instruments: &DMatrix<f64>,
    regressors: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), MomentsError> {
    let n = regressors.nrows();
    let k = regressors.ncols();
    if n <= k + 1 {
        return Err(MomentsError::InsufficientObservations { n, k });
    }
    let ztx = instruments.transpose() * regressors;
    let bread = invert_guarded(&ztx, MomentsError::RankDeficientSubmatrix)?;
    let beta = &bread * (instruments.transpose() * y);
    let resid = y - regressors * &beta;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let e2 = resid[i] * resid[i];
        if e2 == 0.0 {
            continue;
        }
        let row = instruments.row(i);
        for a in 0..k {
            for b in a..k {
                let v = e2 * row[a] * row[b];
                meat[(a, b)] += v;
                if a != b {
                    meat[(b, a)] += v;
                }
            }
        }
    }
    let dof = n as f64 / (n - k) as f64;
    let cov = (&bread * meat * bread.transpose()) * dof;
    Ok((beta, cov))
}

/// Design matrix `(1, Z, W)` and the column position of each instrument.
fn first_stage_design(sample: &SampleData) -> (DMatrix<f64>, Vec<usize>) {
    let n = sample.n_obs();
    let z = sample.instrument_cols();
    let w = sample.control_cols();
    let k = 1 + z.len() + w.len();
    let mut design = DMatrix::zeros(n, k);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for (jj, &col) in z.iter().enumerate() {
            design[(i, 1 + jj)] = sample.data[(i, col)];
        }
        for (jj, &col) in w.iter().enumerate() {
            design[(i, 1 + z.len() + jj)] = sample.data[(i, col)];
        }
    }
    let positions = (0..z.len()).map(|j| 1 + j).collect();
    (design, positions)
}

/// Heteroskedasticity-robust Wald F statistic for the coefficient on
/// instrument `ell` (zero-based) in the regression of the treatment on
/// `(1, Z, W)`.
pub fn first_stage_f_stat(sample: &SampleData, ell: usize) -> Result<f64, MomentsError> {
    let x_cols = sample.treatment_cols();
    if x_cols.len() != 1 {
        return Err(MomentsError::KNotOne(x_cols.len()));
    }
    let z = sample.instrument_cols();
    if ell >= z.len() {
        return Err(MomentsError::BadInstrumentIndex(ell));
    }
    let n = sample.n_obs();
    let (design, positions) = first_stage_design(sample);
    if n <= design.ncols() + 1 {
        return Err(MomentsError::InsufficientObservations {
            n,
            k: design.ncols(),
        });
    }
    let x = DVector::from_fn(n, |i, _| sample.data[(i, x_cols[0])]);
    let (beta, cov) = ols_sandwich(&design, &x)?;
    let pos = positions[ell];
    let var = cov[(pos, pos)];
    if var <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let f = beta[pos] * beta[pos] / var;
    Ok(if f > F_STAT_CAP { f64::INFINITY } else { f })
}

/// Sandwich standard errors of the just-identified 2SLS coefficients using the
/// instruments in `excluded` (zero-based) and the remaining instruments plus
/// controls as included regressors.
pub fn robust_se_just_identified(
    sample: &SampleData,
    excluded: &[usize],
) -> Result<DVector<f64>, MomentsError> {
    let (beta, cov) = iv_fit(sample, excluded)?;
    let k = sample.treatment_cols().len();
    let _ = beta;
    Ok(DVector::from_fn(k, |i, _| cov[(1 + i, 1 + i)].max(0.0).sqrt()))
}

/// Full just-identified IV fit on sample rows. Coefficient order in the
/// returned vector: intercept, treatments, remaining instruments, controls.
pub(crate) fn iv_fit(
    sample: &SampleData,
    excluded: &[usize],
) -> Result<(DVector<f64>, DMatrix<f64>), MomentsError> {
    let n = sample.n_obs();
    let y_col = sample.outcome_col();
    let x_cols = sample.treatment_cols();
    let z_cols = sample.instrument_cols();
    let w_cols = sample.control_cols();
    if excluded.len() != x_cols.len() {
        return Err(MomentsError::RoleMismatch(
            "excluded set size must equal the number of treatments".into(),
        ));
    }
    for &e in excluded {
        if e >= z_cols.len() {
            return Err(MomentsError::BadInstrumentIndex(e));
        }
    }
    let other: Vec<usize> = (0..z_cols.len()).filter(|j| !excluded.contains(j)).collect();
    let k = 1 + x_cols.len() + other.len() + w_cols.len();
    let mut regressors = DMatrix::zeros(n, k);
    let mut instruments = DMatrix::zeros(n, k);
    for i in 0..n {
        regressors[(i, 0)] = 1.0;
        instruments[(i, 0)] = 1.0;
        for (jj, &col) in x_cols.iter().enumerate() {
            regressors[(i, 1 + jj)] = sample.data[(i, col)];
            instruments[(i, 1 + jj)] = sample.data[(i, z_cols[excluded[jj]])];
        }
        for (jj, &zi) in other.iter().enumerate() {
            let col = z_cols[zi];
            regressors[(i, 1 + x_cols.len() + jj)] = sample.data[(i, col)];
            instruments[(i, 1 + x_cols.len() + jj)] = sample.data[(i, col)];
        }
        for (jj, &col) in w_cols.iter().enumerate() {
            let pos = 1 + x_cols.len() + other.len() + jj;
            regressors[(i, pos)] = sample.data[(i, col)];
            instruments[(i, pos)] = sample.data[(i, col)];
        }
    }
    let y = DVector::from_fn(n, |i, _| sample.data[(i, y_col)]);
    iv_sandwich(&instruments, &regressors, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn roles_yxz(l: usize) -> Vec<VariableRole> {
        let mut r = vec![VariableRole::Outcome, VariableRole::Treatment];
        r.extend(std::iter::repeat(VariableRole::Instrument).take(l));
        r
    }

    #[test]
    fn collinear_three_rows() {
        let data = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let sample = SampleData::new(data, roles_yxz(1)).unwrap();
        let m = moment_set_from_sample(&sample).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.cov()[(i, j)] - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(m.n_obs(), Some(3));
    }

    #[test]
    fn constant_instrument_rejected() {
        let data = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 1.0, 1.0, 1.5, 1.0, 2.0, 2.5, 1.0]);
        let sample = SampleData::new(data, roles_yxz(1)).unwrap();
        assert!(matches!(
            moment_set_from_sample(&sample),
            Err(MomentsError::ConstantColumn(2))
        ));
    }

    #[test]
    fn single_row_rejected() {
        let data = DMatrix::from_row_slice(1, 3, &[0.0, 0.5, 1.0]);
        let sample = SampleData::new(data, roles_yxz(1)).unwrap();
        assert!(matches!(
            moment_set_from_sample(&sample),
            Err(MomentsError::EmptyData)
        ));
    }

    #[test]
    fn sample_covariances_near_truth() {
        // 1000 iid draws from a known Gaussian dgp; sample covariances must be
        // within 5 sigma / sqrt(n) of the generating values.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1000;
        let mut data = DMatrix::zeros(n, 3);
        for i in 0..n {
            let z = normal(&mut rng);
            let x = 0.8 * z + 0.6 * normal(&mut rng);
            let y = 1.5 * x + 0.5 * z + normal(&mut rng);
            data[(i, 0)] = y;
            data[(i, 1)] = x;
            data[(i, 2)] = z;
        }
        let sample = SampleData::new(data, roles_yxz(1)).unwrap();
        let m = moment_set_from_sample(&sample).unwrap();
        // Truth: Var(z)=1, Cov(x,z)=0.8, Var(x)=1, Cov(y,z)=1.5*0.8+0.5=1.7,
        // Cov(y,x)=1.5*1+0.5*0.8=1.9, Var(y)=1.5^2*1+0.25+1+2*1.5*0.5*0.8=4.7
        let truth = [
            (0usize, 0usize, 4.7),
            (0, 1, 1.9),
            (0, 2, 1.7),
            (1, 1, 1.0),
            (1, 2, 0.8),
            (2, 2, 1.0),
        ];
        for (i, j, t) in truth {
            // 5 sigma / sqrt(n), with sigma approximated by the product of
            // the two standard deviations.
            let s = (m.cov()[(i, i)] * m.cov()[(j, j)]).sqrt().max(1.0);
            let tol = 5.0 * s / (n as f64).sqrt();
            assert!(
                (m.cov()[(i, j)] - t).abs() < tol,
                "cov[{i},{j}] = {} vs {t} (tol {tol})",
                m.cov()[(i, j)]
            );
        }
    }

    #[test]
    fn partial_out_identity_with_no_controls() {
        // Moments of the dgp y = z1 + 5 z2 + e, x = z1 + z2 + v with
        // independent unit-variance components: Var(Z) = I, psi = (1,5),
        // Pi = (1,1).
        let cov = DMatrix::from_row_slice(
            4,
            4,
            &[
                27.0, 6.0, 1.0, 5.0, //
                6.0, 3.0, 1.0, 1.0, //
                1.0, 1.0, 1.0, 0.0, //
                5.0, 1.0, 0.0, 1.0,
            ],
        );
        let m = MomentSet::from_parts(DVector::zeros(4), cov, roles_yxz(2), None).unwrap();
        let r = partial_out_controls(&m).unwrap();
        assert!(!r.controls_absorbed);
        assert!((r.psi[0] - 1.0).abs() < 1e-12);
        assert!((r.psi[1] - 5.0).abs() < 1e-12);
        assert!((r.pi[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((r.pi[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncorrelated_control_changes_nothing() {
        let mut roles = roles_yxz(2);
        roles.push(VariableRole::Control);
        let mut cov = DMatrix::identity(5, 5);
        cov[(0, 2)] = 0.3;
        cov[(2, 0)] = 0.3;
        cov[(0, 1)] = 0.5;
        cov[(1, 0)] = 0.5;
        cov[(1, 2)] = 0.4;
        cov[(2, 1)] = 0.4;
        let with_w = MomentSet::from_parts(DVector::zeros(5), cov.clone(), roles, None).unwrap();
        let without = MomentSet::from_parts(
            DVector::zeros(4),
            cov.view((0, 0), (4, 4)).into_owned(),
            roles_yxz(2),
            None,
        )
        .unwrap();
        let a = partial_out_controls(&with_w).unwrap();
        let b = partial_out_controls(&without).unwrap();
        assert!((&a.psi - &b.psi).amax() < 1e-12);
        assert!((&a.pi - &b.pi).amax() < 1e-12);
        assert!((&a.var_z - &b.var_z).amax() < 1e-12);
    }

    #[test]
    fn partialled_psi_matches_long_ols_oracle() {
        // One control W correlated with Z1: psi from partialling must equal
        // the coefficient on Z from the long regression of Y on (1, Z, W),
        // computed here by the normal equations on sample moments.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 4000;
        let mut data = DMatrix::zeros(n, 5); // y, x, z1, z2, w
        for i in 0..n {
            let z1 = normal(&mut rng);
            let z2 = normal(&mut rng);
            let w = z1 + 0.5 * normal(&mut rng);
            let x = z1 + z2 + normal(&mut rng);
            let y = 2.0 * x + 0.7 * w + normal(&mut rng);
            data[(i, 0)] = y;
            data[(i, 1)] = x;
            data[(i, 2)] = z1;
            data[(i, 3)] = z2;
            data[(i, 4)] = w;
        }
        let mut roles = roles_yxz(2);
        roles.push(VariableRole::Control);
        let sample = SampleData::new(data.clone(), roles).unwrap();
        let m = moment_set_from_sample(&sample).unwrap();
        let r = partial_out_controls(&m).unwrap();

        // Long OLS oracle: regress y on (1, z1, z2, w).
        let design = DMatrix::from_fn(n, 4, |i, j| match j {
            0 => 1.0,
            1 => data[(i, 2)],
            2 => data[(i, 3)],
            3 => data[(i, 4)],
            _ => unreachable!(),
        });
        let y = DVector::from_fn(n, |i, _| data[(i, 0)]);
        let xtx = design.transpose() * &design;
        let beta = xtx
            .full_piv_lu()
            .solve(&(design.transpose() * &y))
            .unwrap();
        assert!((r.psi[0] - beta[1]).abs() < 1e-9, "{} vs {}", r.psi[0], beta[1]);
        assert!((r.psi[1] - beta[2]).abs() < 1e-9);
    }

    fn fixture_l2() -> ReducedMoments {
        ReducedMoments {
            psi: DVector::from_column_slice(&[1.0, 5.0]),
            pi: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            var_z: DMatrix::identity(2, 2),
            controls_absorbed: false,
        }
    }

    #[test]
    fn just_identified_scalar_ratios() {
        let r = fixture_l2();
        let b1 = just_identified_2sls(&r, &[0]).unwrap();
        assert!((b1.beta[0] - 1.0).abs() < 1e-12);
        let b2 = just_identified_2sls(&r, &[1]).unwrap();
        assert!((b2.beta[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn just_identified_k2_system() {
        let r = ReducedMoments {
            psi: DVector::from_column_slice(&[0.0, 0.0, 1.0]),
            pi: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            var_z: DMatrix::identity(3, 3),
            controls_absorbed: false,
        };
        let b = just_identified_2sls(&r, &[1, 2]).unwrap();
        assert!((b.beta[0] - 1.0).abs() < 1e-12);
        assert!((b.beta[1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn just_identified_singular_submatrix() {
        let r = ReducedMoments {
            psi: DVector::from_column_slice(&[0.0, 0.0]),
            pi: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
            var_z: DMatrix::identity(2, 2),
            controls_absorbed: false,
        };
        assert!(matches!(
            just_identified_2sls(&r, &[0, 1]),
            Err(MomentsError::RankDeficientSubmatrix)
        ));
    }

    #[test]
    fn just_identified_matches_lemma_oracle() {
        // psi_l / pi_l equals e_l' Cov(Z, Xtilde_l)^-1 Cov(Z, Y) where
        // Xtilde_l replaces Z_l by X.
        let var_z = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.5]);
        let cov_zy = DVector::from_column_slice(&[0.9, 2.1]);
        let cov_zx = DVector::from_column_slice(&[0.7, 0.4]);
        let vz_inv = var_z.clone().try_inverse().unwrap();
        let psi = &vz_inv * &cov_zy;
        let pi_vec = &vz_inv * &cov_zx;
        let r = ReducedMoments {
            psi: psi.clone(),
            pi: DMatrix::from_column_slice(2, 1, pi_vec.as_slice()),
            var_z: var_z.clone(),
            controls_absorbed: false,
        };
        for ell in 0..2 {
            let est = just_identified_2sls(&r, &[ell]).unwrap().beta[0];
            // Cov(Z, Xtilde_ell): replace column ell of Var(Z) by Cov(Z, X).
            let mut cov_zxt = var_z.clone();
            for i in 0..2 {
                cov_zxt[(i, ell)] = cov_zx[i];
            }
            let sol = cov_zxt.full_piv_lu().solve(&cov_zy).unwrap();
            assert!((est - sol[ell]).abs() < 1e-10, "{est} vs {}", sol[ell]);
        }
    }

    #[test]
    fn full_2sls_values() {
        let r = ReducedMoments {
            psi: DVector::from_column_slice(&[2.0, 4.0]),
            pi: DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
            var_z: DMatrix::identity(2, 2),
            controls_absorbed: false,
        };
        assert!((full_2sls(&r).unwrap() - 2.0).abs() < 1e-12);
        let r = fixture_l2();
        assert!((full_2sls(&r).unwrap() - 3.0).abs() < 1e-12);
        let degenerate = ReducedMoments {
            psi: DVector::from_column_slice(&[1.0, 1.0]),
            pi: DMatrix::from_column_slice(2, 1, &[0.0, 0.0]),
            var_z: DMatrix::identity(2, 2),
            controls_absorbed: false,
        };
        assert!(matches!(
            full_2sls(&degenerate),
            Err(MomentsError::ZeroDenominator)
        ));
    }

    fn sample_from_dgp(seed: u64, n: usize, noise_z3: bool) -> SampleData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = if noise_z3 { 3 } else { 2 };
        let mut data = DMatrix::zeros(n, 2 + l);
        for i in 0..n {
            let z1 = normal(&mut rng);
            let z2 = normal(&mut rng);
            let z3 = normal(&mut rng);
            let x = z1 + z2 + normal(&mut rng);
            let y = z1 + 5.0 * z2 + normal(&mut rng);
            data[(i, 0)] = y;
            data[(i, 1)] = x;
            data[(i, 2)] = z1;
            data[(i, 3)] = z2;
            if noise_z3 {
                data[(i, 4)] = z3;
            }
        }
        SampleData::new(data, roles_yxz(l)).unwrap()
    }

    #[test]
    fn f_stat_perfect_instrument_is_infinite() {
        let mut data = DMatrix::zeros(64, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..64 {
            let z = normal(&mut rng);
            data[(i, 0)] = 2.0 * z;
            data[(i, 1)] = z; // X identical to Z
            data[(i, 2)] = z;
        }
        let sample = SampleData::new(data, roles_yxz(1)).unwrap();
        let f = first_stage_f_stat(&sample, 0).unwrap();
        assert!(f.is_infinite());
    }

    #[test]
    fn f_stat_noise_instrument_median_small() {
        let mut medians = Vec::new();
        for rep in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
            let n = 2000;
            let mut data = DMatrix::zeros(n, 3);
            for i in 0..n {
                let z = normal(&mut rng);
                let x = normal(&mut rng); // independent of z
                data[(i, 0)] = x + normal(&mut rng);
                data[(i, 1)] = x;
                data[(i, 2)] = z;
            }
            let sample = SampleData::new(data, roles_yxz(1)).unwrap();
            medians.push(first_stage_f_stat(&sample, 0).unwrap());
        }
        medians.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = medians[medians.len() / 2];
        assert!(median < 3.0, "median F = {median}");
    }

    #[test]
    fn f_stat_insufficient_observations() {
        let data = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 2.0, 0.0]);
        let sample = SampleData::new(data, roles_yxz(1)).unwrap();
        assert!(matches!(
            first_stage_f_stat(&sample, 0),
            Err(MomentsError::InsufficientObservations { .. })
        ));
    }

    #[test]
    fn robust_se_close_to_classical_under_homoskedasticity() {
        let sample = sample_from_dgp(11, 50_000, false);
        let se = robust_se_just_identified(&sample, &[0]).unwrap();
        // Classical 2SLS covariance with the same bread and sigma^2 I meat.
        let n = sample.n_obs();
        let y_col = sample.outcome_col();
        let (beta, _) = iv_fit(&sample, &[0]).unwrap();
        // Rebuild matrices to compute the classical SE directly.
        let z_cols = sample.instrument_cols();
        let x_col = sample.treatment_cols()[0];
        let mut zmat = DMatrix::zeros(n, 3);
        let mut xmat = DMatrix::zeros(n, 3);
        for i in 0..n {
            zmat[(i, 0)] = 1.0;
            xmat[(i, 0)] = 1.0;
            zmat[(i, 1)] = sample.data()[(i, z_cols[0])];
            xmat[(i, 1)] = sample.data()[(i, x_col)];
            zmat[(i, 2)] = sample.data()[(i, z_cols[1])];
            xmat[(i, 2)] = sample.data()[(i, z_cols[1])];
        }
        let y = DVector::from_fn(n, |i, _| sample.data()[(i, y_col)]);
        let resid = &y - &xmat * &beta;
        let sigma2 = resid.dot(&resid) / (n - 3) as f64;
        let ztx = zmat.transpose() * &xmat;
        let bread = ztx.try_inverse().unwrap();
        let ztz = zmat.transpose() * &zmat;
        let cov = &bread * ztz * bread.transpose() * sigma2;
        let classical = cov[(1, 1)].sqrt();
        assert!(
            (se[0] - classical).abs() / classical < 0.10,
            "robust {} vs classical {classical}",
            se[0]
        );
    }

    #[test]
    fn duplicated_rows_match_sandwich_recomputation() {
        let sample = sample_from_dgp(13, 500, false);
        let n = sample.n_obs();
        let doubled = {
            let mut data = DMatrix::zeros(2 * n, sample.data().ncols());
            for i in 0..n {
                for j in 0..sample.data().ncols() {
                    data[(i, j)] = sample.data()[(i, j)];
                    data[(n + i, j)] = sample.data()[(i, j)];
                }
            }
            SampleData::new(data, sample.roles().to_vec()).unwrap()
        };
        let se1 = robust_se_just_identified(&sample, &[0]).unwrap();
        let se2 = robust_se_just_identified(&doubled, &[0]).unwrap();
        // Exact sandwich recomputation: doubling rows doubles bread^-1 and
        // meat, so cov scales by 1/2 modulo the dof correction.
        let k = 3.0;
        let dof1 = n as f64 / (n as f64 - k);
        let dof2 = 2.0 * n as f64 / (2.0 * n as f64 - k);
        let expected = se1[0] / 2f64.sqrt() * (dof2 / dof1).sqrt();
        assert!((se2[0] - expected).abs() < 1e-6 * expected.max(1.0));
    }

    #[test]
    fn zero_residual_fit_gives_zero_se() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100;
        let mut data = DMatrix::zeros(n, 3);
        for i in 0..n {
            let z = normal(&mut rng);
            let x = z + normal(&mut rng);
            data[(i, 0)] = 3.0 * x; // exact fit
            data[(i, 1)] = x;
            data[(i, 2)] = z;
        }
        let sample = SampleData::new(data, roles_yxz(1)).unwrap();
        let se = robust_se_just_identified(&sample, &[0]).unwrap();
        assert!(se[0].abs() < 1e-10);
    }

    #[test]
    fn diagonal_rescaling_preserves_ratios() {
        // Appendix-style invariance at the moments level: scaling instruments
        // leaves psi_l / pi_l unchanged.
        let r = fixture_l2();
        let a = [2.5, -0.7];
        let var_z = DMatrix::from_fn(2, 2, |i, j| r.var_z[(i, j)] * a[i] * a[j]);
        let cov_zy = DVector::from_fn(2, |i, _| (r.cov_zy())[i] * a[i]);
        let cov_zx = DVector::from_fn(2, |i, _| (r.cov_zx())[(i, 0)] * a[i]);
        let inv = var_z.clone().try_inverse().unwrap();
        let psi2 = &inv * cov_zy;
        let pi2 = &inv * cov_zx;
        for l in 0..2 {
            let ratio1 = r.psi[l] / r.pi[(l, 0)];
            let ratio2 = psi2[l] / pi2[l];
            assert!((ratio1 - ratio2).abs() < 1e-10);
        }
    }

    #[test]
    fn standardization_flag_rescales_var_z() {
        let mut cov = DMatrix::identity(4, 4);
        cov[(2, 2)] = 4.0; // sd 2 instrument
        cov[(0, 2)] = 2.0;
        cov[(2, 0)] = 2.0;
        cov[(1, 2)] = 1.0;
        cov[(2, 1)] = 1.0;
        cov[(0, 1)] = 0.5;
        cov[(1, 0)] = 0.5;
        let m = MomentSet::from_parts(DVector::zeros(4), cov, roles_yxz(2), None).unwrap();
        let r = partial_out_controls_with(&m, true).unwrap();
        assert!((r.var_z[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((r.var_z[(1, 1)] - 1.0).abs() < 1e-12);
        // Ratios are invariant to the rescaling.
        let r0 = partial_out_controls(&m).unwrap();
        for l in 0..2 {
            assert!(
                (r.psi[l] / r.pi[(l, 0)] - r0.psi[l] / r0.pi[(l, 0)]).abs() < 1e-10
                    || (r0.pi[(l, 0)].abs() < 1e-12)
            );
        }
    }
}
