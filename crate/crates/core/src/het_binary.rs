//! Binary-outcome heterogeneous-treatment-effect model with discrete
//! instruments under c-dependence.
//!
//! The observable table P(Y, X, Z) pins down, for each instrument value, the
//! range of counterfactual probabilities P(Y_x = 1 | Z_l = z) consistent with
//! the data (an affine image of a unit box, the set `H_x`). The sensitivity
//! parameter `c_l` in [0,1] bounds how far P(Z_l | Y_x) may drift from the
//! marginal of `Z_l`, which carves out a polytope `D(c)`. The model at `c` is
//! falsified iff `D(c)` and `H_x` miss each other for some `x`; bounds on
//! counterfactual probabilities and the average treatment effect are linear
//! programs over the intersection.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{self, AffineImageSet, ConvexSet, GeometryError, Polytope};

/// Bisection tolerance for the scalar falsification point.
pub const CSTAR_BISECTION_TOL: f64 = 1e-8;

/// Default grid resolution for frontier scans.
pub const DEFAULT_FRONTIER_RESOLUTION: f64 = 0.01;

#[derive(Debug, Clone, Error)]
pub enum HetBinaryError {
    #[error("probability table invalid: {0}")]
    InvalidProbabilityTable(String),
    #[error("overlap condition fails: {0}")]
    OverlapViolation(String),
    #[error("instrument marginal probability {0} is degenerate")]
    DegenerateInstrument(f64),
    #[error("model is falsified at the requested c")]
    ModelFalsifiedAtC,
    #[error("operation requires a single binary instrument")]
    SingleBinaryInstrumentRequired,
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Full joint probability table of (Y, X, Z) with Y, X binary and Z a vector
/// of discrete instruments.
///
/// Support index `m` runs over the product support with instrument 0 as the
/// least significant digit. Tables whose mass deviates from one by at most
/// 1e-9 are renormalized; larger deviations are rejected.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    z_supports: Vec<Vec<f64>>,
    /// probs[(y * 2 + x) * n_support + m]
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(z_supports: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self, HetBinaryError> {
        if z_supports.is_empty() {
            return Err(HetBinaryError::InvalidProbabilityTable(
                "need at least one instrument".into(),
            ));
        }
        for (l, s) in z_supports.iter().enumerate() {
            if s.len() < 2 {
                return Err(HetBinaryError::InvalidProbabilityTable(format!(
                    "instrument {l} needs at least two support points"
                )));
            }
        }
        let s: usize = z_supports.iter().map(|v| v.len()).product();
        if probs.len() != 4 * s {
            return Err(HetBinaryError::InvalidProbabilityTable(format!(
                "expected {} probabilities, got {}",
                4 * s,
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < -1e-12) {
            return Err(HetBinaryError::InvalidProbabilityTable(
                "negative or non-finite entry".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(HetBinaryError::InvalidProbabilityTable(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p.max(0.0) / total).collect();
        let joint = Self { z_supports, probs };
        // Overlap conditions: every instrument value has interior marginal
        // probability and interior treatment probability.
        for l in 0..joint.n_instruments() {
            for j in 0..joint.support_size(l) {
                let pz = joint.p_zl(l, j);
                if pz <= 1e-12 || pz >= 1.0 - 1e-12 {
                    return Err(HetBinaryError::OverlapViolation(format!(
                        "P(Z_{l} = support point {j}) = {pz}"
                    )));
                }
                let px = joint.p_x_given_zl(1, l, j);
                if px <= 1e-12 || px >= 1.0 - 1e-12 {
                    return Err(HetBinaryError::OverlapViolation(format!(
                        "P(X = 1 | Z_{l} = support point {j}) = {px}"
                    )));
                }
            }
        }
        Ok(joint)
    }

    pub fn n_instruments(&self) -> usize {
        self.z_supports.len()
    }

    pub fn support_size(&self, l: usize) -> usize {
        self.z_supports[l].len()
    }

    pub fn z_supports(&self) -> &[Vec<f64>] {
        &self.z_supports
    }

    /// Total number of points in the product support.
    pub fn n_support(&self) -> usize {
        self.z_supports.iter().map(|v| v.len()).product()
    }

    /// Dimension of the counterfactual-probability space: sum of J_l.
    pub fn block_dim(&self) -> usize {
        self.z_supports.iter().map(|v| v.len()).sum()
    }

    fn block_offset(&self, l: usize) -> usize {
        self.z_supports[..l].iter().map(|v| v.len()).sum()
    }

    /// Decodes a product-support index into per-instrument indices.
    pub fn decode(&self, mut m: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_instruments());
        for s in &self.z_supports {
            out.push(m % s.len());
            m /= s.len();
        }
        out
    }

    pub fn prob(&self, y: usize, x: usize, m: usize) -> f64 {
        self.probs[(y * 2 + x) * self.n_support() + m]
    }

    /// P(Z = z^m).
    pub fn p_z(&self, m: usize) -> f64 {
        (0..2)
            .flat_map(|y| (0..2).map(move |x| (y, x)))
            .map(|(y, x)| self.prob(y, x, m))
            .sum()
    }

    /// P(Z_l = z_l^j).
    pub fn p_zl(&self, l: usize, j: usize) -> f64 {
        (0..self.n_support())
            .filter(|&m| self.decode(m)[l] == j)
            .map(|m| self.p_z(m))
            .sum()
    }

    /// P(X = x, Z = z^m).
    pub fn p_x_and_z(&self, x: usize, m: usize) -> f64 {
        self.prob(0, x, m) + self.prob(1, x, m)
    }

    /// P(X = x | Z_l = z_l^j).
    pub fn p_x_given_zl(&self, x: usize, l: usize, j: usize) -> f64 {
        let num: f64 = (0..self.n_support())
            .filter(|&m| self.decode(m)[l] == j)
            .map(|m| self.p_x_and_z(x, m))
            .sum();
        num / self.p_zl(l, j)
    }

    /// P(Y = y, X = x | Z_l = z_l^j).
    pub fn p_yx_given_zl(&self, y: usize, x: usize, l: usize, j: usize) -> f64 {
        let num: f64 = (0..self.n_support())
            .filter(|&m| self.decode(m)[l] == j)
            .map(|m| self.prob(y, x, m))
            .sum();
        num / self.p_zl(l, j)
    }
}

/// Per-instrument dependence bounds, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CDependence {
    c: Vec<f64>,
}

impl CDependence {
    pub fn new(c: Vec<f64>) -> Result<Self, HetBinaryError> {
        for (l, v) in c.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(HetBinaryError::BadInput(format!(
                    "c[{l}] = {v} outside [0,1]"
                )));
            }
        }
        Ok(Self { c })
    }

    pub fn uniform(l: usize, c: f64) -> Result<Self, HetBinaryError> {
        Self::new(vec![c; l])
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c
    }
}

/// Identified set for the counterfactual conditional probabilities at a given
/// `c`: per potential outcome, the polytope `D(c)` intersected with the
/// data-consistency set `H_x`.
#[derive(Debug, Clone)]
pub struct HetIdentifiedSet {
    pub diamond: Polytope,
    pub data_set_y0: AffineImageSet,
    pub data_set_y1: AffineImageSet,
    pub empty: bool,
}

/// The dependence factor `k_z(c)` for a single binary instrument with
/// P(Z = 1) = `pz_one`. Equals 1 at c = 0, 0 at c = 1, weakly decreasing.
pub fn kz_factor(pz_one: f64, c: f64, z: usize) -> Result<f64, HetBinaryError> {
    if !(pz_one > 0.0 && pz_one < 1.0) {
        return Err(HetBinaryError::DegenerateInstrument(pz_one));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(HetBinaryError::BadInput(format!("c = {c} outside [0,1]")));
    }
    let p_z = if z == 1 { pz_one } else { 1.0 - pz_one };
    let p_other = 1.0 - p_z;
    Ok(p_z * (p_other - c).max(0.0) / (p_other * (p_z + c).min(1.0)))
}

/// The c-dependence polytope `D(c)` over the stacked coordinates
/// `a_{l,j} = P(Y_x = 1 | Z_l = z_l^j)`.
///
/// At `c_l = 0` the block forces all J conditional probabilities of
/// instrument l to coincide; once `c_l` clears the largest marginal the block
/// is vacuous.
pub fn diamond_constraints(
    joint: &DiscreteJoint,
    c: &CDependence,
) -> Result<Polytope, HetBinaryError> {
    if c.len() != joint.n_instruments() {
        return Err(HetBinaryError::BadInput(format!(
            "c has length {}, expected {}",
            c.len(),
            joint.n_instruments()
        )));
    }
    let d = joint.block_dim();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for l in 0..joint.n_instruments() {
        let jl = joint.support_size(l);
        let off = joint.block_offset(l);
        let p: Vec<f64> = (0..jl).map(|j| joint.p_zl(l, j)).collect();
        let cl = c.as_slice()[l];
        for j in 0..jl {
            let nu = (p[j] + cl).min(1.0);
            let mu = (p[j] - cl).max(0.0);
            // p_j a_j <= nu * sum_k p_k a_k
            let mut row = vec![0.0; d];
            for k in 0..jl {
                row[off + k] = -nu * p[k];
            }
            row[off + j] += p[j];
            rows.push(row);
            rhs.push(0.0);
            // p_j a_j >= mu * sum_k p_k a_k
            let mut row = vec![0.0; d];
            for k in 0..jl {
                row[off + k] = mu * p[k];
            }
            row[off + j] -= p[j];
            rows.push(row);
            rhs.push(0.0);
            // p_j (1 - a_j) <= nu * sum_k p_k (1 - a_k)
            let mut row = vec![0.0; d];
            for k in 0..jl {
                row[off + k] = nu * p[k];
            }
            row[off + j] -= p[j];
            rows.push(row);
            rhs.push(nu - p[j]);
            // p_j (1 - a_j) >= mu * sum_k p_k (1 - a_k)
            let mut row = vec![0.0; d];
            for k in 0..jl {
                row[off + k] = -mu * p[k];
            }
            row[off + j] += p[j];
            rows.push(row);
            rhs.push(p[j] - mu);
        }
    }
    let m = rows.len();
    let a = DMatrix::from_fn(m, d, |i, j| rows[i][j]);
    Ok(Polytope::new(
        a,
        DVector::from_vec(rhs),
        DVector::zeros(d),
        DVector::from_element(d, 1.0),
    )?)
}

/// The data-consistency set `H_x` as an affine image of the unit box: the
/// law of total probability writes each `P(Y_x = 1 | Z_l = z_l^j)` as an
/// observed intercept plus observed weights on the unknown probabilities
/// `P(Y_x = 1 | X = 1 - x, Z = z^m)` in [0,1].
pub fn box_affine(joint: &DiscreteJoint, x: usize) -> Result<AffineImageSet, HetBinaryError> {
    if x > 1 {
        return Err(HetBinaryError::BadInput("x must be 0 or 1".into()));
    }
    let d = joint.block_dim();
    let q = joint.n_support();
    let mut offset = DVector::zeros(d);
    let mut map = DMatrix::zeros(d, q);
    for l in 0..joint.n_instruments() {
        let off = joint.block_offset(l);
        for j in 0..joint.support_size(l) {
            offset[off + j] = joint.p_yx_given_zl(1, x, l, j);
            let pzl = joint.p_zl(l, j);
            for m in 0..q {
                if joint.decode(m)[l] == j {
                    map[(off + j, m)] = joint.p_x_and_z(1 - x, m) / pzl;
                }
            }
        }
    }
    Ok(AffineImageSet::unit_box(offset, map)?)
}

/// Identified set for the stacked counterfactual probabilities at `c`.
pub fn identified_set_het(
    joint: &DiscreteJoint,
    c: &CDependence,
) -> Result<HetIdentifiedSet, HetBinaryError> {
    let diamond = diamond_constraints(joint, c)?;
    let data_set_y0 = box_affine(joint, 0)?;
    let data_set_y1 = box_affine(joint, 1)?;
    let empty = is_falsified_at(joint, c)?;
    Ok(HetIdentifiedSet {
        diamond,
        data_set_y0,
        data_set_y1,
        empty,
    })
}

/// Whether the model with dependence bounds `c` is falsified: `D(c)` and
/// `H_x` fail to intersect for some potential outcome. Points exactly on the
/// boundary count as non-falsified.
pub fn is_falsified_at(joint: &DiscreteJoint, c: &CDependence) -> Result<bool, HetBinaryError> {
    let diamond: ConvexSet = diamond_constraints(joint, c)?.into();
    for x in [1usize, 0] {
        let data: ConvexSet = box_affine(joint, x)?.into();
        if !geometry::intersection_feasible(&[&diamond, &data])? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Euclidean distances between `D(c)` and `H_x` for x = 0, 1. Diagnostic
/// companion of [`is_falsified_at`]; a distance above [`DIST_ZERO_TOL`] means
/// falsification.
pub fn falsification_distances(
    joint: &DiscreteJoint,
    c: &CDependence,
) -> Result<(f64, f64), HetBinaryError> {
    let diamond: ConvexSet = diamond_constraints(joint, c)?.into();
    let d0 = geometry::polytope_distance(&diamond, &box_affine(joint, 0)?.into())?;
    let d1 = geometry::polytope_distance(&diamond, &box_affine(joint, 1)?.into())?;
    Ok((d0, d1))
}

/// Scalar falsification point for a single instrument: the smallest `c` at
/// which the model stops being refuted, by bisection to 1e-8. Zero when the
/// baseline (c = 0) is already consistent with the data.
pub fn falsification_point_single(joint: &DiscreteJoint) -> Result<f64, HetBinaryError> {
    if joint.n_instruments() != 1 {
        return Err(HetBinaryError::SingleBinaryInstrumentRequired);
    }
    let falsified =
        |c: f64| -> Result<bool, HetBinaryError> { is_falsified_at(joint, &CDependence::uniform(1, c)?) };
    if !falsified(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    debug_assert!(!falsified(1.0).unwrap_or(false));
    while hi - lo > CSTAR_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if falsified(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

fn grid_axis(resolution: f64) -> Result<Vec<f64>, HetBinaryError> {
    if !(resolution > 0.0 && resolution <= 0.25) {
        return Err(HetBinaryError::BadInput(format!(
            "resolution {resolution} outside (0, 0.25]"
        )));
    }
    let steps = (1.0 / resolution).ceil() as usize;
    let mut axis: Vec<f64> = (0..=steps).map(|i| (i as f64 * resolution).min(1.0)).collect();
    axis.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    Ok(axis)
}

/// Generic Pareto-minimal sweep of a monotone "non-falsified" oracle on a
/// grid: returns the minimal non-falsified grid points under the
/// componentwise order. Upward closedness of the non-falsified set lets
/// dominated points be skipped without evaluation, so only the points at or
/// below the frontier hit the oracle.
pub(crate) fn pareto_frontier_scan<E>(
    axis: &[f64],
    dims: usize,
    mut non_falsified: impl FnMut(&[f64]) -> Result<bool, E>,
) -> Result<Vec<Vec<f64>>, E> {
    let n = axis.len();
    let mut frontier_idx: Vec<Vec<usize>> = Vec::new();
    let mut falsified_idx: Vec<Vec<usize>> = Vec::new();
    // Enumerate index tuples layer by layer (ascending index sum).
    let max_sum = (n - 1) * dims;
    let mut tuple = vec![0usize; dims];
    for layer in 0..=max_sum {
        enumerate_layer(&mut tuple, 0, layer, n, &mut |idx: &[usize]| -> Result<(), E> {
            if frontier_idx
                .iter()
                .any(|f| f.iter().zip(idx).all(|(a, b)| a <= b))
            {
                return Ok(()); // dominated: non-falsified but not minimal
            }
            if falsified_idx
                .iter()
                .any(|g| idx.iter().zip(g).all(|(a, b)| a <= b))
            {
                return Ok(()); // below a known falsified point
            }
            let c: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            if non_falsified(&c)? {
                frontier_idx.push(idx.to_vec());
            } else {
                falsified_idx.push(idx.to_vec());
            }
            Ok(())
        })?;
    }
    Ok(frontier_idx
        .into_iter()
        .map(|idx| idx.iter().map(|&i| axis[i]).collect())
        .collect())
}

fn enumerate_layer<E>(
    tuple: &mut Vec<usize>,
    pos: usize,
    remaining: usize,
    n: usize,
    visit: &mut impl FnMut(&[usize]) -> Result<(), E>,
) -> Result<(), E> {
    if pos == tuple.len() - 1 {
        if remaining < n {
            tuple[pos] = remaining;
            visit(tuple)?;
        }
        return Ok(());
    }
    for i in 0..n.min(remaining + 1) {
        tuple[pos] = i;
        enumerate_layer(tuple, pos + 1, remaining - i, n, visit)?;
    }
    Ok(())
}

/// Grid approximation of the falsification frontier: the minimal
/// non-falsified grid points of `[0,1]^L` under the componentwise order.
pub fn falsification_frontier_grid(
    joint: &DiscreteJoint,
    resolution: f64,
) -> Result<Vec<Vec<f64>>, HetBinaryError> {
    let axis = grid_axis(resolution)?;
    pareto_frontier_scan(&axis, joint.n_instruments(), |c: &[f64]| {
        Ok(!is_falsified_at(joint, &CDependence::new(c.to_vec())?)?)
    })
}

fn bound_objective(joint: &DiscreteJoint, block: usize) -> DVector<f64> {
    let d = joint.block_dim();
    let off = joint.block_offset(block);
    let mut obj = DVector::zeros(d);
    for j in 0..joint.support_size(block) {
        obj[off + j] = joint.p_zl(block, j);
    }
    obj
}

fn potential_outcome_bounds_block(
    joint: &DiscreteJoint,
    c: &CDependence,
    x: usize,
    block: usize,
) -> Result<(f64, f64), HetBinaryError> {
    let diamond: ConvexSet = diamond_constraints(joint, c)?.into();
    let data: ConvexSet = box_affine(joint, x)?.into();
    let obj = bound_objective(joint, block);
    let mm = geometry::lp_minmax_intersection(&obj, &[&diamond, &data])
        .map_err(|e| match e {
            GeometryError::Infeasible => HetBinaryError::ModelFalsifiedAtC,
            other => HetBinaryError::Geometry(other),
        })?;
    Ok((mm.min, mm.max))
}

/// Identified interval for P(Y_x = 1) at `c`, via the law of total
/// probability over instrument 0's block. Any block gives the same value.
pub fn potential_outcome_bounds(
    joint: &DiscreteJoint,
    c: &CDependence,
    x: usize,
) -> Result<(f64, f64), HetBinaryError> {
    if is_falsified_at(joint, c)? {
        return Err(HetBinaryError::ModelFalsifiedAtC);
    }
    potential_outcome_bounds_block(joint, c, x, 0)
}

/// Identified interval for the average treatment effect at `c`.
pub fn ate_bounds(joint: &DiscreteJoint, c: &CDependence) -> Result<(f64, f64), HetBinaryError> {
    if is_falsified_at(joint, c)? {
        return Err(HetBinaryError::ModelFalsifiedAtC);
    }
    let (p1_lo, p1_hi) = potential_outcome_bounds_block(joint, c, 1, 0)?;
    let (p0_lo, p0_hi) = potential_outcome_bounds_block(joint, c, 0, 0)?;
    Ok((p1_lo - p0_hi, p1_hi - p0_lo))
}

/// Falsification adaptive set for the average treatment effect: the union of
/// the ATE intervals over the (grid) falsification frontier. For a single
/// instrument this is exactly the interval at the bisection falsification
/// point.
pub fn fas_ate(joint: &DiscreteJoint, resolution: f64) -> Result<(f64, f64), HetBinaryError> {
    if joint.n_instruments() == 1 {
        let c_star = falsification_point_single(joint)?;
        return ate_bounds(joint, &CDependence::uniform(1, c_star)?);
    }
    let frontier = falsification_frontier_grid(joint, resolution)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in &frontier {
        let (a, b) = ate_bounds(joint, &CDependence::new(c.clone())?)?;
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((lo, hi))
}

/// Brute-force oracle for the single-binary-instrument falsification point,
/// via the latent-distribution characterization: grid the two unknown
/// probabilities P(Y_x = 1 | X = 1-x, Z = z) in [0,1]^2, compute the largest
/// deviation |P(Z=1 | Y_x = y) - P(Z=1)| by Bayes' rule, and take
/// `max_x inf_Q`. Intended as an independent test oracle for
/// [`falsification_point_single`].
pub fn oracle_cstar_latent(
    joint: &DiscreteJoint,
    grid_steps: usize,
) -> Result<f64, HetBinaryError> {
    if joint.n_instruments() != 1 || joint.support_size(0) != 2 {
        return Err(HetBinaryError::SingleBinaryInstrumentRequired);
    }
    if grid_steps < 2 {
        return Err(HetBinaryError::BadInput("need at least 2 grid steps".into()));
    }
    let pz1 = joint.p_zl(0, 1);
    let mut c_star = 0.0f64;
    for x in 0..2usize {
        // Known mass P(Y=1, X=x, Z=z) and free mass P(X=1-x, Z=z).
        let known: [f64; 2] = [joint.prob(1, x, 0), joint.prob(1, x, 1)];
        let free: [f64; 2] = [joint.p_x_and_z(1 - x, 0), joint.p_x_and_z(1 - x, 1)];
        let mut best = f64::INFINITY;
        for i0 in 0..grid_steps {
            let q0 = i0 as f64 / (grid_steps - 1) as f64;
            for i1 in 0..grid_steps {
                let q1 = i1 as f64 / (grid_steps - 1) as f64;
                // P(Y_x = 1, Z = z) under this latent assignment.
                let pz_and_y1 = known[1] + q1 * free[1];
                let py1 = known[0] + q0 * free[0] + pz_and_y1;
                let mut dev = 0.0f64;
                if py1 > 1e-12 {
                    dev = dev.max((pz_and_y1 / py1 - pz1).abs());
                }
                if py1 < 1.0 - 1e-12 {
                    dev = dev.max(((pz1 - pz_and_y1) / (1.0 - py1) - pz1).abs());
                }
                best = best.min(dev);
            }
        }
        c_star = c_star.max(best);
    }
    Ok(c_star)
}
