//! Continuous-outcome heterogeneous-treatment-effect model via a Bernstein
//! polynomial sieve.
//!
//! Outcomes are rescaled to [0,1]; every conditional density is approximated
//! by its Bernstein coefficient vector on the probability simplex
//! (coefficients are midpoint evaluations `f(m/M)`, renormalized). The
//! c-dependence constraints become linear inequalities between coefficient
//! vectors, enforced on a grid of N points, and the data-consistency set is
//! an affine image of a product of coefficient simplices. Refutation checks,
//! functional bounds (including the ATE), and approximate falsification
//! frontiers and adaptive sets all reduce to linear programs over these
//! polytopes.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{self, AffineImageSet, ConvexSet, GeometryError, Polytope};
use crate::het_binary::{kz_factor, pareto_frontier_scan, HetBinaryError};

/// Largest supported Bernstein order.
pub const MAX_ORDER: usize = 500;

/// Absolute tolerance of the refutation-check quadrature.
pub const QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Error)]
pub enum HetContinuousError {
    #[error("evaluation point {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("density evaluator returned a negative value at y = {0}")]
    NegativeDensity(f64),
    #[error("density row sums to zero or less; cannot normalize")]
    UnnormalizableRow,
    #[error("integrand is not integrable (non-finite value encountered)")]
    NonIntegrable,
    #[error("model is falsified at the requested c")]
    ModelFalsifiedAtC,
    #[error("treatment/instrument table invalid: {0}")]
    InvalidTable(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<HetBinaryError> for HetContinuousError {
    fn from(e: HetBinaryError) -> Self {
        HetContinuousError::BadInput(e.to_string())
    }
}

/// Sieve configuration: Bernstein order M and the number N of grid points on
/// which the density inequalities are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SieveSpec {
    pub order_m: usize,
    pub grid_n: usize,
}

impl SieveSpec {
    pub fn new(order_m: usize, grid_n: usize) -> Result<Self, HetContinuousError> {
        if order_m < 1 || order_m > MAX_ORDER {
            return Err(HetContinuousError::BadInput(format!(
                "Bernstein order {order_m} outside [1, {MAX_ORDER}]"
            )));
        }
        if grid_n < 2 {
            return Err(HetContinuousError::BadInput(
                "need at least two grid points".into(),
            ));
        }
        Ok(Self { order_m, grid_n })
    }

    fn grid(&self) -> Vec<f64> {
        (0..self.grid_n)
            .map(|n| n as f64 / (self.grid_n - 1) as f64)
            .collect()
    }
}

impl Default for SieveSpec {
    fn default() -> Self {
        Self {
            order_m: 30,
            grid_n: 201,
        }
    }
}

/// Bernstein basis vector `(b_0(y), ..., b_M(y))` with
/// `b_m(y) = C(M,m) y^m (1-y)^(M-m)`.
pub fn bernstein_basis(m_order: usize, y: f64) -> Result<DVector<f64>, HetContinuousError> {
    if !(0.0..=1.0).contains(&y) {
        return Err(HetContinuousError::OutOfRange(y));
    }
    if m_order > MAX_ORDER {
        return Err(HetContinuousError::BadInput(format!(
            "Bernstein order {m_order} too large"
        )));
    }
    let m = m_order;
    let mut out = DVector::zeros(m + 1);
    if y == 0.0 {
        out[0] = 1.0;
        return Ok(out);
    }
    if y == 1.0 {
        out[m] = 1.0;
        return Ok(out);
    }
    let ratio = y / (1.0 - y);
    let mut term = (1.0 - y).powi(m as i32);
    for k in 0..=m {
        out[k] = term;
        if k < m {
            term *= ratio * (m - k) as f64 / (k + 1) as f64;
        }
    }
    Ok(out)
}

/// A piecewise-constant density on an interval, used to describe test and
/// fixture distributions. Evaluation at an interior breakpoint returns the
/// midpoint of the two adjacent values.
#[derive(Debug, Clone)]
pub struct PiecewiseDensity {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseDensity {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self, HetContinuousError> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(HetContinuousError::BadInput(
                "need k+1 breakpoints for k pieces".into(),
            ));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HetContinuousError::BadInput(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(HetContinuousError::BadInput(
                "piece values must be nonnegative and finite".into(),
            ));
        }
        Ok(Self { breaks, values })
    }

    pub fn eval(&self, y: f64) -> f64 {
        let k = self.values.len();
        if y < self.breaks[0] || y > self.breaks[k] {
            return 0.0;
        }
        for i in 1..k {
            if (y - self.breaks[i]).abs() < 1e-14 {
                return 0.5 * (self.values[i - 1] + self.values[i]);
            }
        }
        match self.breaks.partition_point(|b| *b <= y) {
            0 => self.values[0],
            idx if idx > k => self.values[k - 1],
            idx => self.values[idx - 1],
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * (self.breaks[i + 1] - self.breaks[i]))
            .sum()
    }
}

/// Joint distribution of (X, Z) for binary X and L binary instruments.
/// Support index `m` is bit-coded with instrument 0 as bit 0.
#[derive(Debug, Clone)]
pub struct TreatmentInstrumentJoint {
    l: usize,
    /// p[x][m] = P(X = x, Z = z^m)
    p: [Vec<f64>; 2],
}

impl TreatmentInstrumentJoint {
    pub fn new(l: usize, p_x0: Vec<f64>, p_x1: Vec<f64>) -> Result<Self, HetContinuousError> {
        let s = 1usize << l;
        if l == 0 || p_x0.len() != s || p_x1.len() != s {
            return Err(HetContinuousError::InvalidTable(format!(
                "need 2^{l} = {s} entries per treatment arm"
            )));
        }
        if p_x0
            .iter()
            .chain(p_x1.iter())
            .any(|v| !v.is_finite() || *v < -1e-12)
        {
            return Err(HetContinuousError::InvalidTable(
                "negative or non-finite probability".into(),
            ));
        }
        let total: f64 = p_x0.iter().sum::<f64>() + p_x1.iter().sum::<f64>();
        if (total - 1.0).abs() > 1e-9 {
            return Err(HetContinuousError::InvalidTable(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let p0: Vec<f64> = p_x0.iter().map(|v| v.max(0.0) / total).collect();
        let p1: Vec<f64> = p_x1.iter().map(|v| v.max(0.0) / total).collect();
        let joint = Self { l, p: [p0, p1] };
        for ell in 0..l {
            for z in 0..2 {
                let pz = joint.p_zl(ell, z);
                if pz <= 1e-12 || pz >= 1.0 - 1e-12 {
                    return Err(HetContinuousError::InvalidTable(format!(
                        "P(Z_{ell} = {z}) = {pz} is degenerate"
                    )));
                }
                let px = joint.p_x_given_zl(1, ell, z);
                if px <= 1e-12 || px >= 1.0 - 1e-12 {
                    return Err(HetContinuousError::InvalidTable(format!(
                        "P(X = 1 | Z_{ell} = {z}) = {px} violates overlap"
                    )));
                }
            }
        }
        Ok(joint)
    }

    pub fn n_instruments(&self) -> usize {
        self.l
    }

    pub fn n_support(&self) -> usize {
        1usize << self.l
    }

    pub fn p_x_and_z(&self, x: usize, m: usize) -> f64 {
        self.p[x][m]
    }

    pub fn p_z(&self, m: usize) -> f64 {
        self.p[0][m] + self.p[1][m]
    }

    pub fn p_zl(&self, ell: usize, z: usize) -> f64 {
        (0..self.n_support())
            .filter(|m| (m >> ell) & 1 == z)
            .map(|m| self.p_z(m))
            .sum()
    }

    pub fn p_x_given_zl(&self, x: usize, ell: usize, z: usize) -> f64 {
        let num: f64 = (0..self.n_support())
            .filter(|m| (m >> ell) & 1 == z)
            .map(|m| self.p[x][m])
            .sum();
        num / self.p_zl(ell, z)
    }
}

/// Sieve coefficients of the observed conditional outcome densities, together
/// with the (X, Z) table they were built from.
#[derive(Debug, Clone)]
pub struct ConditionalDensityTable {
    joint: TreatmentInstrumentJoint,
    spec: SieveSpec,
    /// xi[x] is (2L) x (M+1); row (2 ell + z) holds the coefficients of
    /// f_{Y|X,Z_ell}(. | x, z).
    xi: [DMatrix<f64>; 2],
}

impl ConditionalDensityTable {
    pub fn spec(&self) -> SieveSpec {
        self.spec
    }

    pub fn joint(&self) -> &TreatmentInstrumentJoint {
        &self.joint
    }

    pub fn xi(&self, x: usize) -> &DMatrix<f64> {
        &self.xi[x]
    }

    fn coeff_dim(&self) -> usize {
        2 * self.joint.l * (self.spec.order_m + 1)
    }
}

/// Builds the coefficient table from a density evaluator
/// `f(y, x, m) = f_{Y|X,Z}(y | x, z^m)` (m bit-coded) and the (X, Z) joint.
/// Coefficients are `f(k/M)` per row, renormalized to the simplex.
pub fn sieve_table_from_joint<F>(
    evaluator: F,
    joint: &TreatmentInstrumentJoint,
    spec: SieveSpec,
) -> Result<ConditionalDensityTable, HetContinuousError>
where
    F: Fn(f64, usize, usize) -> f64,
{
    let l = joint.l;
    let m_ord = spec.order_m;
    let mut xi = [
        DMatrix::zeros(2 * l, m_ord + 1),
        DMatrix::zeros(2 * l, m_ord + 1),
    ];
    for x in 0..2usize {
        for ell in 0..l {
            for z in 0..2usize {
                let px_zl = joint.p_x_given_zl(x, ell, z) * joint.p_zl(ell, z);
                let mut row = vec![0.0; m_ord + 1];
                for (k, slot) in row.iter_mut().enumerate() {
                    let y = k as f64 / m_ord as f64;
                    // f_{Y|X,Z_ell}(y | x, z): mix the full-z conditionals.
                    let mut v = 0.0;
                    for m in 0..joint.n_support() {
                        if (m >> ell) & 1 != z {
                            continue;
                        }
                        let w = joint.p[x][m] / px_zl;
                        if w > 0.0 {
                            v += w * evaluator(y, x, m);
                        }
                    }
                    if v < -1e-12 || !v.is_finite() {
                        return Err(HetContinuousError::NegativeDensity(y));
                    }
                    *slot = v.max(0.0);
                }
                let total: f64 = row.iter().sum();
                if total <= 0.0 {
                    return Err(HetContinuousError::UnnormalizableRow);
                }
                for (k, v) in row.iter().enumerate() {
                    xi[x][(2 * ell + z, k)] = v / total;
                }
            }
        }
    }
    Ok(ConditionalDensityTable {
        joint: joint.clone(),
        spec,
        xi,
    })
}

/// The c-dependence polytope over the stacked coefficient space: for each
/// instrument and each grid point y_n,
/// `(a(0) k_0 - a(1))'b(y_n) <= 0` and `(a(1) k_1 - a(0))'b(y_n) <= 0`,
/// plus the simplex constraints on every coefficient block.
pub fn diamond_sieve_constraints(
    z_marginals: &[f64],
    c: &[f64],
    spec: SieveSpec,
) -> Result<Polytope, HetContinuousError> {
    let l = z_marginals.len();
    if c.len() != l {
        return Err(HetContinuousError::BadInput(format!(
            "c has length {}, expected {l}",
            c.len()
        )));
    }
    let m1 = spec.order_m + 1;
    let d = 2 * l * m1;
    let grid = spec.grid();
    let basis: Vec<DVector<f64>> = grid
        .iter()
        .map(|&y| bernstein_basis(spec.order_m, y))
        .collect::<Result<_, _>>()?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(2 * l * grid.len() + 4 * l);
    let mut rhs: Vec<f64> = Vec::with_capacity(rows.capacity());
    for ell in 0..l {
        let pz1 = z_marginals[ell];
        let k0 = kz_factor(pz1, c[ell], 0)?;
        let k1 = kz_factor(pz1, c[ell], 1)?;
        let off0 = (2 * ell) * m1;
        let off1 = (2 * ell + 1) * m1;
        for b in &basis {
            let mut row = vec![0.0; d];
            for k in 0..m1 {
                row[off0 + k] = k0 * b[k];
                row[off1 + k] = -b[k];
            }
            rows.push(row);
            rhs.push(0.0);
            let mut row = vec![0.0; d];
            for k in 0..m1 {
                row[off1 + k] = k1 * b[k];
                row[off0 + k] = -b[k];
            }
            rows.push(row);
            rhs.push(0.0);
        }
        for off in [off0, off1] {
            let mut row = vec![0.0; d];
            for k in 0..m1 {
                row[off + k] = 1.0;
            }
            rows.push(row.clone());
            rhs.push(1.0);
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            rows.push(neg);
            rhs.push(-1.0);
        }
    }
    let nrows = rows.len();
    let a = DMatrix::from_fn(nrows, d, |i, j| rows[i][j]);
    Ok(Polytope::new(
        a,
        DVector::from_vec(rhs),
        DVector::zeros(d),
        DVector::from_element(d, 1.0),
    )?)
}

/// The data-consistency coefficient set: observed coefficients `B_x Xi` plus
/// the affine spread `A_x` applied to a product of unknown coefficient
/// simplices (one per full instrument cell).
pub fn data_affine_set(
    table: &ConditionalDensityTable,
    x: usize,
) -> Result<AffineImageSet, HetContinuousError> {
    if x > 1 {
        return Err(HetContinuousError::BadInput("x must be 0 or 1".into()));
    }
    let joint = &table.joint;
    let l = joint.l;
    let m1 = table.spec.order_m + 1;
    let d = table.coeff_dim();
    let s = joint.n_support();
    let q = s * m1;
    let mut offset = DVector::zeros(d);
    let mut map = DMatrix::zeros(d, q);
    for ell in 0..l {
        for z in 0..2usize {
            let r = 2 * ell + z;
            let bx = joint.p_x_given_zl(x, ell, z);
            for k in 0..m1 {
                offset[r * m1 + k] = bx * table.xi[x][(r, k)];
            }
            let pzl = joint.p_zl(ell, z);
            for m in 0..s {
                if (m >> ell) & 1 != z {
                    continue;
                }
                let w = joint.p_x_and_z(1 - x, m) / pzl;
                for k in 0..m1 {
                    map[(r * m1 + k, m * m1 + k)] = w;
                }
            }
        }
    }
    let sums = (0..s).map(|m| ((m * m1..(m + 1) * m1).collect(), 1.0)).collect();
    Ok(AffineImageSet::unit_box(offset, map)?.with_source_sums(sums))
}

fn z_marginals(joint: &TreatmentInstrumentJoint) -> Vec<f64> {
    (0..joint.l).map(|ell| joint.p_zl(ell, 1)).collect()
}

/// Whether the sieve model is refuted at `c`: the diamond coefficient set and
/// the data coefficient set miss each other for some potential outcome.
pub fn is_falsified_cont(
    table: &ConditionalDensityTable,
    c: &[f64],
) -> Result<bool, HetContinuousError> {
    let diamond: ConvexSet =
        diamond_sieve_constraints(&z_marginals(&table.joint), c, table.spec)?.into();
    for x in [1usize, 0] {
        let data: ConvexSet = data_affine_set(table, x)?.into();
        if !geometry::intersection_feasible(&[&diamond, &data])? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Refutation check for a single binary instrument with continuous outcomes:
/// integrates `max_z f_{Y,X|Z}(y, x | z)` over the declared support by
/// adaptive quadrature; mass above one refutes the model at c = 0.
pub fn kitagawa_refutation_check<F>(
    f_yx_given_z: F,
    support: (f64, f64),
) -> Result<(f64, bool), HetContinuousError>
where
    F: Fn(f64, usize) -> f64,
{
    let (lo, hi) = support;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(HetContinuousError::BadInput(
            "support must be a finite nonempty interval".into(),
        ));
    }
    let g = |y: f64| -> Result<f64, HetContinuousError> {
        let v0 = f_yx_given_z(y, 0);
        let v1 = f_yx_given_z(y, 1);
        if !v0.is_finite() || !v1.is_finite() {
            return Err(HetContinuousError::NonIntegrable);
        }
        Ok(v0.max(v1))
    };
    let integral = adaptive_simpson(&g, lo, hi, QUAD_TOL)?;
    Ok((integral, integral > 1.0))
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson<E>(
    g: &impl Fn(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, E> {
    let fa = g(a)?;
    let fb = g(b)?;
    let m = 0.5 * (a + b);
    let fm = g(m)?;
    let whole = simpson(a, b, fa, fm, fb);
    rec_simpson(g, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn rec_simpson<E>(
    g: &impl Fn(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64, E> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = g(lm)?;
    let frm = g(rm)?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    let lv = rec_simpson(g, a, m, fa, flm, fm, left, tol * 0.5, depth - 1)?;
    let rv = rec_simpson(g, m, b, fm, frm, fb, right, tol * 0.5, depth - 1)?;
    Ok(lv + rv)
}

/// `integral of w(y) b_k(y) dy` for every basis index k, by composite Simpson
/// on a fixed fine grid (deterministic).
fn weight_integrals<F>(m_order: usize, w: F) -> Result<DVector<f64>, HetContinuousError>
where
    F: Fn(f64) -> f64,
{
    let n_seg = 2048usize;
    let h = 1.0 / n_seg as f64;
    let mut acc = DVector::zeros(m_order + 1);
    for i in 0..=n_seg {
        let y = i as f64 * h;
        let weight = if i == 0 || i == n_seg {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let wy = w(y);
        if !wy.is_finite() {
            return Err(HetContinuousError::NonIntegrable);
        }
        let b = bernstein_basis(m_order, y)?;
        acc.axpy(weight * wy, &b, 1.0);
    }
    Ok(acc * (h / 3.0))
}

fn functional_objective<F>(
    table: &ConditionalDensityTable,
    w: F,
) -> Result<DVector<f64>, HetContinuousError>
where
    F: Fn(f64) -> f64,
{
    let m1 = table.spec.order_m + 1;
    // A coefficient vector a on the simplex represents the density
    // (M+1) a'b(y), a mixture of Beta(k+1, M-k+1) densities; the functional
    // weights pick up the same factor.
    let wints = weight_integrals(table.spec.order_m, w)? * m1 as f64;
    let mut obj = DVector::zeros(table.coeff_dim());
    // Mixture over instrument 0's block; any block gives the same value.
    for z in 0..2usize {
        let pz = table.joint.p_zl(0, z);
        for k in 0..m1 {
            obj[z * m1 + k] = pz * wints[k];
        }
    }
    Ok(obj)
}

/// Identified interval for the linear functional
/// `integral w1 f_{Y_1} + integral w0 f_{Y_0}` at dependence bounds `c`.
/// `w1 = y`, `w0 = -y` gives the average treatment effect.
pub fn functional_bounds_cont<F1, F0>(
    table: &ConditionalDensityTable,
    c: &[f64],
    w1: F1,
    w0: F0,
) -> Result<(f64, f64), HetContinuousError>
where
    F1: Fn(f64) -> f64,
    F0: Fn(f64) -> f64,
{
    if is_falsified_cont(table, c)? {
        return Err(HetContinuousError::ModelFalsifiedAtC);
    }
    let diamond: ConvexSet =
        diamond_sieve_constraints(&z_marginals(&table.joint), c, table.spec)?.into();
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (x, obj) in [
        (1usize, functional_objective(table, w1)?),
        (0usize, functional_objective(table, w0)?),
    ] {
        let data: ConvexSet = data_affine_set(table, x)?.into();
        let mm = geometry::lp_minmax_intersection(&obj, &[&diamond, &data]).map_err(|e| {
            match e {
                GeometryError::Infeasible => HetContinuousError::ModelFalsifiedAtC,
                other => HetContinuousError::Geometry(other),
            }
        })?;
        lo += mm.min;
        hi += mm.max;
    }
    Ok((lo, hi))
}

/// Approximate falsification frontier (minimal non-refuted grid points) and
/// falsification adaptive set (union of the functional bounds over the
/// frontier).
pub fn approx_ff_fas_cont<F1, F0>(
    table: &ConditionalDensityTable,
    resolution: f64,
    w1: F1,
    w0: F0,
) -> Result<(Vec<Vec<f64>>, (f64, f64)), HetContinuousError>
where
    F1: Fn(f64) -> f64 + Copy,
    F0: Fn(f64) -> f64 + Copy,
{
    if !(resolution > 0.0 && resolution <= 0.25) {
        return Err(HetContinuousError::BadInput(format!(
            "resolution {resolution} outside (0, 0.25]"
        )));
    }
    let steps = (1.0 / resolution).ceil() as usize;
    let mut axis: Vec<f64> = (0..=steps)
        .map(|i| (i as f64 * resolution).min(1.0))
        .collect();
    axis.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let frontier = pareto_frontier_scan(&axis, table.joint.l, |c: &[f64]| {
        Ok::<bool, HetContinuousError>(!is_falsified_cont(table, c)?)
    })?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in &frontier {
        let (a, b) = functional_bounds_cont(table, c, w1, w0)?;
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((frontier, (lo, hi)))
}
