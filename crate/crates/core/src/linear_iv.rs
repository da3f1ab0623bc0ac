//! Identified sets, falsification frontiers, and falsification adaptive sets
//! for the linear instrumental-variable model under partial exclusion.
//!
//! The model allows each instrument a direct outcome coefficient bounded by
//! `delta_l >= 0`. The identified set for the treatment coefficients is
//!
//! ```text
//! B(delta) = { b : -delta <= psi - Pi b <= delta }   (componentwise)
//! ```
//!
//! which is an interval intersection for one treatment and a half-space
//! polytope in general. The falsification frontier collects the minimal
//! relaxations with nonempty `B(delta)`, and the falsification adaptive set
//! is the union of `B(delta)` over the frontier: the interval (or union of
//! simplices) spanned by the just-identified 2SLS estimands.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{self, ConvexSet, GeometryError, Polytope};
use crate::moments::{
    first_stage_f_stat, just_identified_2sls, moment_set_from_sample, partial_out_controls,
    robust_se_just_identified, MomentsError, ReducedMoments, SampleData, TwoSlsEstimate,
};

/// Instruments with |pi_l| at or below this threshold count as irrelevant.
pub const RELEVANCE_TOL: f64 = 1e-10;

/// Numerical threshold of the general-K relevance checks (full rank of every
/// K-subset, affine independence of every (K+1)-subset).
pub const A1_PRIME_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Error)]
pub enum LinearIvError {
    #[error("operation requires a single treatment (K = 1), got K = {0}")]
    KNotOne(usize),
    #[error("operation requires exactly {expected} instruments, got {got}")]
    WrongInstrumentCount { expected: usize, got: usize },
    #[error("all instruments have (near) zero first-stage coefficients")]
    AllInstrumentsIrrelevant,
    #[error("instrument {0} has a (near) zero first-stage coefficient")]
    IrrelevantInstrument(usize),
    #[error("relevance assumption fails for instrument subset {0:?}")]
    RelevanceAssumptionViolated(Vec<usize>),
    #[error("point is not in the frontier parameterization set")]
    PointNotOnFrontierParameterization,
    #[error("all instruments screened out (first-stage F below cutoff)")]
    AllInstrumentsScreenedOut,
    #[error("delta vector has length {got}, expected {expected}")]
    DeltaLength { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Relaxation bounds `delta_l >= 0`; `+inf` drops instrument l's restriction.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationVector {
    delta: Vec<f64>,
}

impl RelaxationVector {
    pub fn new(delta: Vec<f64>) -> Result<Self, LinearIvError> {
        for (l, d) in delta.iter().enumerate() {
            if d.is_nan() || *d < 0.0 {
                return Err(LinearIvError::BadInput(format!(
                    "delta[{l}] = {d} is not a nonnegative number"
                )));
            }
        }
        Ok(Self { delta })
    }

    pub fn zeros(l: usize) -> Self {
        Self {
            delta: vec![0.0; l],
        }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.delta
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            delta: self.delta.iter().map(|d| d * factor).collect(),
        }
    }
}

/// Identified set for the treatment coefficients at a given relaxation.
#[derive(Debug, Clone)]
pub enum LinearIdentifiedSet {
    Empty,
    /// K = 1.
    Interval { lo: f64, hi: f64 },
    /// K > 1: half-space polytope with up to 2L rows.
    Polytope(Polytope),
    /// K = 1 with no binding constraint at all.
    AllSpace,
}

impl LinearIdentifiedSet {
    /// Emptiness; polytopes are checked by LP feasibility.
    pub fn is_empty_set(&self) -> Result<bool, LinearIvError> {
        match self {
            LinearIdentifiedSet::Empty => Ok(true),
            LinearIdentifiedSet::Interval { .. } | LinearIdentifiedSet::AllSpace => Ok(false),
            LinearIdentifiedSet::Polytope(p) => {
                Ok(!geometry::intersection_feasible(&[&ConvexSet::Polytope(p.clone())])?)
            }
        }
    }
}

/// A sampled falsification frontier together with its closed-form
/// parameterization, so `delta(b)` can be queried exactly for any `b`.
#[derive(Debug, Clone)]
pub struct FrontierCurve {
    /// Sampled parameter points b (length-K vectors).
    pub params: Vec<DVector<f64>>,
    /// delta(b) for each sampled point.
    pub deltas: Vec<RelaxationVector>,
    psi: DVector<f64>,
    pi: DMatrix<f64>,
}

impl FrontierCurve {
    /// The exact frontier relaxation at parameter `b`:
    /// `delta_l = |psi_l - pi_l . b|`.
    pub fn delta_at(&self, b: &DVector<f64>) -> RelaxationVector {
        delta_at(&self.psi, &self.pi, b)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

fn delta_at(psi: &DVector<f64>, pi: &DMatrix<f64>, b: &DVector<f64>) -> RelaxationVector {
    let resid = psi - pi * b;
    RelaxationVector {
        delta: resid.iter().map(|v| v.abs()).collect(),
    }
}

/// Falsification adaptive set: an interval for one treatment (or a linear
/// functional), or the vertex collection of just-identified estimands for
/// several treatments.
#[derive(Debug, Clone)]
pub enum FasResult {
    Interval {
        lo: f64,
        hi: f64,
        /// Zero-based instrument achieving the lower endpoint.
        lo_instrument: usize,
        /// Zero-based instrument achieving the upper endpoint.
        hi_instrument: usize,
        lo_se: Option<f64>,
        hi_se: Option<f64>,
        screened_out: Vec<usize>,
    },
    VertexSet {
        /// All just-identified estimands, one per K-subset of instruments, in
        /// lexicographic subset order.
        vertices: Vec<TwoSlsEstimate>,
        /// For each (K+1)-subset of instruments, the indices into `vertices`
        /// whose convex hull forms one simplex of the adaptive set.
        simplices: Vec<FasSimplex>,
        screened_out: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct FasSimplex {
    /// The (K+1)-subset of instruments this simplex refers to.
    pub reference_set: Vec<usize>,
    /// Indices into the vertex list.
    pub vertex_ids: Vec<usize>,
}

impl FasResult {
    pub fn interval(&self) -> Option<(f64, f64)> {
        match self {
            FasResult::Interval { lo, hi, .. } => Some((*lo, *hi)),
            FasResult::VertexSet { .. } => None,
        }
    }
}

/// Curve of breakdown values for a two-instrument relaxation, together with
/// the settings it was computed under.
#[derive(Debug, Clone)]
pub struct BreakdownCurve {
    pub delta1: Vec<f64>,
    /// `None` where no delta2 in [0, cap] keeps the conclusion robust.
    pub bf: Vec<Option<f64>>,
    pub delta2_cap: f64,
    pub conclusion: (f64, f64),
}

fn require_k1(r: &ReducedMoments) -> Result<(), LinearIvError> {
    if r.n_treatments() != 1 {
        return Err(LinearIvError::KNotOne(r.n_treatments()));
    }
    Ok(())
}

fn pi_column(r: &ReducedMoments) -> DVector<f64> {
    DVector::from_iterator(r.pi.nrows(), r.pi.column(0).iter().copied())
}

/// Ratios psi_l / pi_l for relevant instruments, `None` where |pi_l| is below
/// the relevance threshold.
pub fn instrument_ratios(r: &ReducedMoments) -> Result<Vec<Option<f64>>, LinearIvError> {
    require_k1(r)?;
    let pi = pi_column(r);
    Ok((0..r.n_instruments())
        .map(|l| {
            if pi[l].abs() > RELEVANCE_TOL {
                Some(r.psi[l] / pi[l])
            } else {
                None
            }
        })
        .collect())
}

/// Classical overidentifying-restriction residuals (K = 1): entry `(m, l)` is
/// `Cov(Y,Z_m) Cov(X,Z_l) - Cov(Y,Z_l) Cov(X,Z_m)`. The baseline model is
/// refuted iff some entry is nonzero.
pub fn sargan_residuals(r: &ReducedMoments) -> Result<DMatrix<f64>, LinearIvError> {
    require_k1(r)?;
    let zy = r.cov_zy();
    let zx = r.cov_zx();
    let l = r.n_instruments();
    Ok(DMatrix::from_fn(l, l, |m, j| {
        zy[m] * zx[(j, 0)] - zy[j] * zx[(m, 0)]
    }))
}

/// Identified set `B(delta)` for the treatment coefficients.
///
/// For K = 1 the per-instrument intervals (including the zero-first-stage
/// branches) are intersected directly; for K > 1 the half-space polytope
/// `psi - delta <= Pi b <= psi + delta` is returned. Infinite `delta_l`
/// removes instrument l's rows.
pub fn identified_set_linear(
    r: &ReducedMoments,
    delta: &RelaxationVector,
) -> Result<LinearIdentifiedSet, LinearIvError> {
    let l = r.n_instruments();
    if delta.len() != l {
        return Err(LinearIvError::DeltaLength {
            expected: l,
            got: delta.len(),
        });
    }
    let k = r.n_treatments();
    if k == 1 {
        let pi = pi_column(r);
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..l {
            let d = delta.delta[i];
            if d.is_infinite() {
                continue;
            }
            if pi[i].abs() > RELEVANCE_TOL {
                let center = r.psi[i] / pi[i];
                let half = d / pi[i].abs();
                lo = lo.max(center - half);
                hi = hi.min(center + half);
            } else {
                // Zero first stage: either no constraint on b or outright
                // refutation of the relaxed model.
                if !(r.psi[i] - d <= 0.0 && 0.0 <= r.psi[i] + d) {
                    return Ok(LinearIdentifiedSet::Empty);
                }
            }
        }
        if lo.is_infinite() && hi.is_infinite() && lo < hi {
            return Ok(LinearIdentifiedSet::AllSpace);
        }
        // Intervals touching up to roundoff collapse to their midpoint.
        let eps = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        if lo > hi + eps {
            return Ok(LinearIdentifiedSet::Empty);
        }
        if lo > hi {
            let mid = 0.5 * (lo + hi);
            return Ok(LinearIdentifiedSet::Interval { lo: mid, hi: mid });
        }
        return Ok(LinearIdentifiedSet::Interval { lo, hi });
    }
    // K > 1: rows Pi b <= psi + delta and -Pi b <= delta - psi.
    let finite_rows: Vec<usize> = (0..l).filter(|&i| delta.delta[i].is_finite()).collect();
    let m = finite_rows.len();
    let mut a = DMatrix::zeros(2 * m, k);
    let mut b = DVector::zeros(2 * m);
    for (row, &i) in finite_rows.iter().enumerate() {
        for j in 0..k {
            a[(row, j)] = r.pi[(i, j)];
            a[(m + row, j)] = -r.pi[(i, j)];
        }
        b[row] = r.psi[i] + delta.delta[i];
        b[m + row] = delta.delta[i] - r.psi[i];
    }
    let p = Polytope::new(
        a,
        b,
        DVector::from_element(k, f64::NEG_INFINITY),
        DVector::from_element(k, f64::INFINITY),
    )?;
    Ok(LinearIdentifiedSet::Polytope(p))
}

/// Falsification frontier for K = 1: `delta_l(b) = |psi_l - b pi_l|` for `b`
/// between the smallest and largest just-identified estimand. Sampled on a
/// uniform grid of `n_points`; degenerates to a single point when the
/// baseline model is not refuted.
pub fn falsification_frontier_k1(
    r: &ReducedMoments,
    n_points: usize,
) -> Result<FrontierCurve, LinearIvError> {
    require_k1(r)?;
    if n_points == 0 {
        return Err(LinearIvError::BadInput("n_points must be positive".into()));
    }
    let ratios = instrument_ratios(r)?;
    let finite: Vec<f64> = ratios.iter().flatten().copied().collect();
    if finite.is_empty() {
        return Err(LinearIvError::AllInstrumentsIrrelevant);
    }
    let bmin = finite.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let bmax = finite.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let grid: Vec<f64> = if (bmax - bmin).abs() <= 1e-14 * bmax.abs().max(1.0) {
        vec![bmin]
    } else if n_points == 1 {
        vec![0.5 * (bmin + bmax)]
    } else {
        (0..n_points)
            .map(|i| bmin + (bmax - bmin) * i as f64 / (n_points - 1) as f64)
            .collect()
    };
    let pi = r.pi.clone();
    let psi = r.psi.clone();
    let params: Vec<DVector<f64>> = grid
        .iter()
        .map(|&b| DVector::from_column_slice(&[b]))
        .collect();
    let deltas = params.iter().map(|b| delta_at(&psi, &pi, b)).collect();
    Ok(FrontierCurve {
        params,
        deltas,
        psi,
        pi,
    })
}

/// Closed-form frontier line for K = 1, L = 2: horizontal intercept, vertical
/// intercept, and slope `-|pi_2 / pi_1|`.
pub fn ff_two_instruments(r: &ReducedMoments) -> Result<(f64, f64, f64), LinearIvError> {
    require_k1(r)?;
    if r.n_instruments() != 2 {
        return Err(LinearIvError::WrongInstrumentCount {
            expected: 2,
            got: r.n_instruments(),
        });
    }
    let pi = pi_column(r);
    for l in 0..2 {
        if pi[l].abs() <= RELEVANCE_TOL {
            return Err(LinearIvError::IrrelevantInstrument(l));
        }
    }
    let gap = (r.psi[0] / pi[0] - r.psi[1] / pi[1]).abs();
    Ok((gap * pi[0].abs(), gap * pi[1].abs(), -(pi[1] / pi[0]).abs()))
}

/// Falsification adaptive set for K = 1: the interval between the extreme
/// just-identified estimands over relevant instruments.
pub fn fas_k1(r: &ReducedMoments) -> Result<FasResult, LinearIvError> {
    let ratios = instrument_ratios(r)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut lo_instrument = usize::MAX;
    let mut hi_instrument = usize::MAX;
    for (l, ratio) in ratios.iter().enumerate() {
        if let Some(v) = ratio {
            if *v < lo {
                lo = *v;
                lo_instrument = l;
            }
            if *v > hi {
                hi = *v;
                hi_instrument = l;
            }
        }
    }
    if lo_instrument == usize::MAX {
        return Err(LinearIvError::AllInstrumentsIrrelevant);
    }
    Ok(FasResult::Interval {
        lo,
        hi,
        lo_instrument,
        hi_instrument,
        lo_se: None,
        hi_se: None,
        screened_out: Vec::new(),
    })
}

fn k_subsets(l: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(l: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..l {
            cur.push(i);
            rec(l, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(l, k, 0, &mut cur, &mut out);
    out
}

/// Checks the strengthened relevance condition: every K-subset of first-stage
/// rows has full rank, every (K+1)-subset is affinely independent.
pub fn check_relevance_general(r: &ReducedMoments) -> Result<(), LinearIvError> {
    let k = r.n_treatments();
    let l = r.n_instruments();
    if l < k {
        return Err(LinearIvError::RelevanceAssumptionViolated((0..l).collect()));
    }
    for subset in k_subsets(l, k) {
        let sub = DMatrix::from_fn(k, k, |i, j| r.pi[(subset[i], j)]);
        let scale: f64 = (0..k)
            .map(|i| sub.row(i).norm().max(1e-300))
            .product();
        if sub.determinant().abs() <= A1_PRIME_TOL * scale {
            return Err(LinearIvError::RelevanceAssumptionViolated(subset));
        }
    }
    for subset in k_subsets(l, k + 1) {
        // Affine independence of the rows pi_l, l in subset: the (K+1)x(K+1)
        // matrix with a leading all-ones column must be nonsingular.
        let m = DMatrix::from_fn(k + 1, k + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                r.pi[(subset[i], j - 1)]
            }
        });
        let scale: f64 = (0..k + 1)
            .map(|i| m.row(i).norm().max(1e-300))
            .product();
        if m.determinant().abs() <= A1_PRIME_TOL * scale {
            return Err(LinearIvError::RelevanceAssumptionViolated(subset));
        }
    }
    Ok(())
}

/// Falsification adaptive set for general K: all just-identified estimands,
/// grouped into one simplex per (K+1)-subset of instruments.
pub fn fas_general(r: &ReducedMoments) -> Result<FasResult, LinearIvError> {
    check_relevance_general(r)?;
    let k = r.n_treatments();
    let l = r.n_instruments();
    let subsets = k_subsets(l, k);
    let mut vertices = Vec::with_capacity(subsets.len());
    let mut index_of = std::collections::BTreeMap::new();
    for subset in &subsets {
        index_of.insert(subset.clone(), vertices.len());
        vertices.push(just_identified_2sls(r, subset)?);
    }
    let mut simplices = Vec::new();
    for reference in k_subsets(l, k + 1) {
        let mut vertex_ids = Vec::with_capacity(k + 1);
        for drop in &reference {
            let sub: Vec<usize> = reference.iter().copied().filter(|i| i != drop).collect();
            vertex_ids.push(index_of[&sub]);
        }
        simplices.push(FasSimplex {
            reference_set: reference,
            vertex_ids,
        });
    }
    Ok(FasResult::VertexSet {
        vertices,
        simplices,
        screened_out: Vec::new(),
    })
}

/// Falsification adaptive set for the linear functional `alpha . beta`:
/// min/max over all just-identified estimands.
pub fn fas_projection(
    r: &ReducedMoments,
    alpha: &DVector<f64>,
) -> Result<(f64, f64), LinearIvError> {
    if alpha.len() != r.n_treatments() {
        return Err(LinearIvError::BadInput(format!(
            "alpha has length {}, expected K = {}",
            alpha.len(),
            r.n_treatments()
        )));
    }
    let fas = fas_general(r)?;
    let FasResult::VertexSet { vertices, .. } = &fas else {
        unreachable!("fas_general returns a vertex set");
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vertices {
        let val = alpha.dot(&v.beta);
        lo = lo.min(val);
        hi = hi.max(val);
    }
    Ok((lo, hi))
}

/// Frontier relaxation at a chosen parameter point `b`, which must lie in the
/// adaptive set (membership is checked against each simplex by LP).
pub fn ff_general(r: &ReducedMoments, b: &DVector<f64>) -> Result<RelaxationVector, LinearIvError> {
    let fas = fas_general(r)?;
    let FasResult::VertexSet {
        vertices,
        simplices,
        ..
    } = &fas
    else {
        unreachable!();
    };
    let mut member = false;
    for s in simplices {
        let verts: Vec<DVector<f64>> = s
            .vertex_ids
            .iter()
            .map(|&i| vertices[i].beta.clone())
            .collect();
        if geometry::hull_membership(b, &verts) {
            member = true;
            break;
        }
    }
    if !member {
        return Err(LinearIvError::PointNotOnFrontierParameterization);
    }
    Ok(delta_at(&r.psi, &r.pi, b))
}

/// Samples the general-K frontier over every simplex with a barycentric
/// lattice of the given subdivision level, returning the parameterized curve.
pub fn ff_general_curve(
    r: &ReducedMoments,
    subdivisions: usize,
) -> Result<FrontierCurve, LinearIvError> {
    let fas = fas_general(r)?;
    let FasResult::VertexSet {
        vertices,
        simplices,
        ..
    } = &fas
    else {
        unreachable!();
    };
    let t = subdivisions.max(1);
    let mut params: Vec<DVector<f64>> = Vec::new();
    for s in simplices {
        let verts: Vec<&DVector<f64>> = s.vertex_ids.iter().map(|&i| &vertices[i].beta).collect();
        let k1 = verts.len();
        // All compositions of t into k1 nonnegative parts.
        let mut comp = vec![0usize; k1];
        fn rec(
            remaining: usize,
            pos: usize,
            comp: &mut Vec<usize>,
            verts: &[&DVector<f64>],
            t: usize,
            out: &mut Vec<DVector<f64>>,
        ) {
            if pos == comp.len() - 1 {
                comp[pos] = remaining;
                let mut p = DVector::zeros(verts[0].len());
                for (w, v) in comp.iter().zip(verts) {
                    p.axpy(*w as f64 / t as f64, *v, 1.0);
                }
                out.push(p);
                return;
            }
            for c in 0..=remaining {
                comp[pos] = c;
                rec(remaining - c, pos + 1, comp, verts, t, out);
            }
        }
        rec(t, 0, &mut comp, &verts, t, &mut params);
    }
    // Drop exact duplicates (shared simplex faces) deterministically.
    params.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    params.dedup_by(|a, b| (a.clone() - b.clone()).amax() <= 1e-13);
    let deltas = params.iter().map(|b| delta_at(&r.psi, &r.pi, b)).collect();
    Ok(FrontierCurve {
        params,
        deltas,
        psi: r.psi.clone(),
        pi: r.pi.clone(),
    })
}

/// Smallest magnitude `m*` along a fixed direction `d > 0` such that
/// `B(m* d)` is nonempty, with the achieving instrument pair and the
/// singleton identified point.
pub fn directional_falsification_point(
    r: &ReducedMoments,
    d: &[f64],
) -> Result<(f64, (usize, usize), f64), LinearIvError> {
    require_k1(r)?;
    let l = r.n_instruments();
    if d.len() != l {
        return Err(LinearIvError::DeltaLength {
            expected: l,
            got: d.len(),
        });
    }
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(LinearIvError::BadInput(
            "direction must be strictly positive".into(),
        ));
    }
    let pi = pi_column(r);
    for i in 0..l {
        if pi[i].abs() <= RELEVANCE_TOL {
            return Err(LinearIvError::IrrelevantInstrument(i));
        }
    }
    let ratio = |i: usize| r.psi[i] / pi[i];
    let mut best = f64::NEG_INFINITY;
    let mut pair = (0usize, 0usize);
    for i in 0..l {
        for j in 0..l {
            let val = (ratio(i) - ratio(j)) / (d[i] / pi[i].abs() + d[j] / pi[j].abs());
            if val > best + 1e-15 {
                best = val;
                pair = (i, j);
            }
        }
    }
    let m_star = best.max(0.0);
    let b_star = ratio(pair.0) - m_star * d[pair.0] / pi[pair.0].abs();
    Ok((m_star, pair, b_star))
}

/// Breakdown frontier for K = 1, L = 2: for each `delta_1` on the grid, the
/// largest `delta_2` in `[0, cap]` with `B(delta)` nonempty and contained in
/// the conclusion interval. The cap is required because the relaxation range
/// is unbounded in this model; it is echoed in the returned curve.
pub fn breakdown_frontier_k1(
    r: &ReducedMoments,
    conclusion: (f64, f64),
    delta1_grid: &[f64],
    delta2_cap: f64,
) -> Result<BreakdownCurve, LinearIvError> {
    require_k1(r)?;
    if r.n_instruments() != 2 {
        return Err(LinearIvError::WrongInstrumentCount {
            expected: 2,
            got: r.n_instruments(),
        });
    }
    if !delta2_cap.is_finite() || delta2_cap < 0.0 {
        return Err(LinearIvError::BadInput(
            "delta2 cap must be finite and nonnegative".into(),
        ));
    }
    let (c_lo, c_hi) = conclusion;
    let eval = |d1: f64, d2: f64| -> Result<Option<(f64, f64)>, LinearIvError> {
        let set = identified_set_linear(r, &RelaxationVector::new(vec![d1, d2])?)?;
        Ok(match set {
            LinearIdentifiedSet::Empty => None,
            LinearIdentifiedSet::Interval { lo, hi } => Some((lo, hi)),
            LinearIdentifiedSet::AllSpace => Some((f64::NEG_INFINITY, f64::INFINITY)),
            LinearIdentifiedSet::Polytope(_) => unreachable!("K = 1"),
        })
    };
    let robust = |iv: Option<(f64, f64)>| -> bool {
        match iv {
            None => false,
            Some((lo, hi)) => lo >= c_lo && hi <= c_hi,
        }
    };
    let bf: Result<Vec<Option<f64>>, LinearIvError> = delta1_grid
        .par_iter()
        .map(|&d1| {
            // Nonemptiness is monotone increasing and containment monotone
            // decreasing in delta2, so the robust set is an interval.
            if robust(eval(d1, delta2_cap)?) {
                return Ok(Some(delta2_cap));
            }
            // Smallest delta2 with a nonempty set, by bisection.
            let nonempty = |d2: f64| -> Result<bool, LinearIvError> {
                Ok(eval(d1, d2)?.is_some())
            };
            if !nonempty(delta2_cap)? {
                return Ok(None);
            }
            let mut lo = 0.0;
            let mut hi = delta2_cap;
            if nonempty(0.0)? {
                hi = 0.0;
            } else {
                while hi - lo > 1e-9 {
                    let mid = 0.5 * (lo + hi);
                    if nonempty(mid)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
            }
            let entry = hi;
            if !robust(eval(d1, entry)?) {
                return Ok(None);
            }
            // Largest robust delta2 in [entry, cap], by bisection on the
            // (monotone) containment boundary.
            let mut lo = entry;
            let mut hi = delta2_cap;
            while hi - lo > 1e-9 {
                let mid = 0.5 * (lo + hi);
                if robust(eval(d1, mid)?) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(Some(lo))
        })
        .collect();
    Ok(BreakdownCurve {
        delta1: delta1_grid.to_vec(),
        bf: bf?,
        delta2_cap,
        conclusion,
    })
}

/// Sample estimator of the falsification adaptive set with weak-instrument
/// screening: instruments with first-stage F below `cutoff` are dropped, the
/// interval of just-identified estimands is taken over the survivors, and
/// each endpoint gets its sandwich standard error.
pub fn estimate_fas(sample: &SampleData, cutoff: f64) -> Result<FasResult, LinearIvError> {
    let m = moment_set_from_sample(sample)?;
    let r = partial_out_controls(&m)?;
    require_k1(&r)?;
    let l = r.n_instruments();
    let mut f_stats = Vec::with_capacity(l);
    for ell in 0..l {
        f_stats.push(first_stage_f_stat(sample, ell)?);
    }
    let kept: Vec<usize> = (0..l).filter(|&ell| f_stats[ell] >= cutoff).collect();
    let screened_out: Vec<usize> = (0..l).filter(|&ell| f_stats[ell] < cutoff).collect();
    if kept.is_empty() {
        return Err(LinearIvError::AllInstrumentsScreenedOut);
    }
    let pi = pi_column(&r);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut lo_instrument = usize::MAX;
    let mut hi_instrument = usize::MAX;
    for &ell in &kept {
        if pi[ell].abs() <= RELEVANCE_TOL {
            continue;
        }
        let ratio = r.psi[ell] / pi[ell];
        if ratio < lo {
            lo = ratio;
            lo_instrument = ell;
        }
        if ratio > hi {
            hi = ratio;
            hi_instrument = ell;
        }
    }
    if lo_instrument == usize::MAX {
        return Err(LinearIvError::AllInstrumentsIrrelevant);
    }
    let lo_se = robust_se_just_identified(sample, &[lo_instrument])?[0];
    let hi_se = robust_se_just_identified(sample, &[hi_instrument])?[0];
    Ok(FasResult::Interval {
        lo,
        hi,
        lo_instrument,
        hi_instrument,
        lo_se: Some(lo_se),
        hi_se: Some(hi_se),
        screened_out,
    })
}

/// Weights of the all-instrument 2SLS estimand as a combination of the
/// just-identified estimands: `W_l = pi_l (Var(Z) pi)_l / (pi'Var(Z) pi)`.
/// They sum to one but need not be positive.
pub fn twosls_weights(r: &ReducedMoments) -> Result<DVector<f64>, LinearIvError> {
    require_k1(r)?;
    let pi = pi_column(r);
    for l in 0..pi.len() {
        if pi[l].abs() <= RELEVANCE_TOL {
            return Err(LinearIvError::IrrelevantInstrument(l));
        }
    }
    let vpi = &r.var_z * &pi;
    let den = pi.dot(&vpi);
    if den.abs() <= 1e-300 {
        return Err(LinearIvError::Moments(MomentsError::ZeroDenominator));
    }
    Ok(DVector::from_fn(pi.len(), |l, _| pi[l] * vpi[l] / den))
}

/// The identified line for the direct instrument coefficients when no bound
/// is placed on them: `gamma(b) = psi - b pi`. The baseline model is refuted
/// iff the line misses the origin.
#[derive(Debug, Clone)]
pub struct GammaLine {
    pub anchor: DVector<f64>,
    pub direction: DVector<f64>,
}

impl GammaLine {
    pub fn gamma_at(&self, b: f64) -> DVector<f64> {
        &self.anchor - &self.direction * b
    }

    /// Whether the origin lies on the line (within `tol` on each component).
    pub fn contains_origin(&self, tol: f64) -> bool {
        // Find b from the largest-direction component, then check residuals.
        let mut best = 0usize;
        for i in 0..self.direction.len() {
            if self.direction[i].abs() > self.direction[best].abs() {
                best = i;
            }
        }
        if self.direction[best].abs() <= RELEVANCE_TOL {
            return self.anchor.amax() <= tol;
        }
        let b = self.anchor[best] / self.direction[best];
        self.gamma_at(b).amax() <= tol
    }
}

pub fn gamma_identified_line(r: &ReducedMoments) -> Result<GammaLine, LinearIvError> {
    require_k1(r)?;
    Ok(GammaLine {
        anchor: r.psi.clone(),
        direction: pi_column(r),
    })
}

/// Minimal value of the two-instrument moment-inequality objective: zero when
/// `B(delta)` is nonempty, otherwise half the squared gap between the two
/// per-instrument intervals.
pub fn qmt_star(r: &ReducedMoments, delta: &RelaxationVector) -> Result<f64, LinearIvError> {
    require_k1(r)?;
    if r.n_instruments() != 2 {
        return Err(LinearIvError::WrongInstrumentCount {
            expected: 2,
            got: r.n_instruments(),
        });
    }
    if delta.len() != 2 {
        return Err(LinearIvError::DeltaLength {
            expected: 2,
            got: delta.len(),
        });
    }
    let pi = pi_column(r);
    for l in 0..2 {
        if pi[l].abs() <= RELEVANCE_TOL {
            return Err(LinearIvError::IrrelevantInstrument(l));
        }
    }
    let lo = |l: usize| r.psi[l] / pi[l] - delta.delta[l] / pi[l].abs();
    let hi = |l: usize| r.psi[l] / pi[l] + delta.delta[l] / pi[l].abs();
    let (l1, u1, l2, u2) = (lo(0), hi(0), lo(1), hi(1));
    if l1.max(l2) <= u1.min(u2) {
        Ok(0.0)
    } else if u1 < l2 {
        Ok(0.5 * (l2 - u1) * (l2 - u1))
    } else {
        Ok(0.5 * (l1 - u2) * (l1 - u2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments;

    pub(crate) fn fixture_l2() -> ReducedMoments {
        ReducedMoments {
            psi: DVector::from_column_slice(&[1.0, 5.0]),
            pi: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            var_z: DMatrix::identity(2, 2),
            controls_absorbed: false,
        }
    }

    pub(crate) fn fixture_k2l3() -> ReducedMoments {
        ReducedMoments {
            psi: DVector::from_column_slice(&[0.0, 0.0, 1.0]),
            pi: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            var_z: DMatrix::identity(3, 3),
            controls_absorbed: false,
        }
    }

    fn rm(psi: &[f64], pi: &[f64], var_z: DMatrix<f64>) -> ReducedMoments {
        ReducedMoments {
            psi: DVector::from_column_slice(psi),
            pi: DMatrix::from_column_slice(pi.len(), 1, pi),
            var_z,
            controls_absorbed: false,
        }
    }

    #[test]
    fn sargan_residuals_cases() {
        let equal = rm(&[2.0, 4.0], &[1.0, 2.0], DMatrix::identity(2, 2));
        let res = sargan_residuals(&equal).unwrap();
        assert!(res.amax() < 1e-12);

        let res = sargan_residuals(&fixture_l2()).unwrap();
        assert!((res[(0, 1)] - (-4.0)).abs() < 1e-12);
        assert!((res[(1, 0)] - 4.0).abs() < 1e-12);

        let single = rm(&[1.0], &[1.0], DMatrix::identity(1, 1));
        let res = sargan_residuals(&single).unwrap();
        assert_eq!(res.nrows(), 1);
        assert!(res[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn identified_set_interval_cases() {
        let r = fixture_l2();
        let set = identified_set_linear(&r, &RelaxationVector::new(vec![1.0, 1.0]).unwrap())
            .unwrap();
        assert!(matches!(set, LinearIdentifiedSet::Empty));

        let set = identified_set_linear(&r, &RelaxationVector::new(vec![2.0, 2.0]).unwrap())
            .unwrap();
        match set {
            LinearIdentifiedSet::Interval { lo, hi } => {
                assert!((lo - 3.0).abs() < 1e-12);
                assert!((hi - 3.0).abs() < 1e-12);
            }
            other => panic!("expected interval, got {other:?}"),
        }

        let set = identified_set_linear(&r, &RelaxationVector::new(vec![3.0, 4.0]).unwrap())
            .unwrap();
        match set {
            LinearIdentifiedSet::Interval { lo, hi } => {
                assert!((lo - 1.0).abs() < 1e-12);
                assert!((hi - 4.0).abs() < 1e-12);
            }
            other => panic!("expected interval, got {other:?}"),
        }
    }

    #[test]
    fn identified_set_zero_first_stage_branch() {
        let r = rm(&[1.0, 0.3], &[1.0, 0.0], DMatrix::identity(2, 2));
        let set = identified_set_linear(&r, &RelaxationVector::new(vec![0.0, 0.1]).unwrap())
            .unwrap();
        assert!(matches!(set, LinearIdentifiedSet::Empty));
        // With a large enough delta_2 the irrelevant instrument stops binding.
        let set = identified_set_linear(&r, &RelaxationVector::new(vec![0.0, 0.5]).unwrap())
            .unwrap();
        match set {
            LinearIdentifiedSet::Interval { lo, hi } => {
                assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn infinite_delta_drops_constraint() {
        let r = fixture_l2();
        let set = identified_set_linear(
            &r,
            &RelaxationVector::new(vec![0.0, f64::INFINITY]).unwrap(),
        )
        .unwrap();
        match set {
            LinearIdentifiedSet::Interval { lo, hi } => {
                assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frontier_k1_three_points() {
        let r = fixture_l2();
        let curve = falsification_frontier_k1(&r, 3).unwrap();
        let expect = [[0.0, 4.0], [2.0, 2.0], [4.0, 0.0]];
        assert_eq!(curve.len(), 3);
        for (d, e) in curve.deltas.iter().zip(expect.iter()) {
            assert!((d.as_slice()[0] - e[0]).abs() < 1e-12);
            assert!((d.as_slice()[1] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn frontier_degenerates_when_not_falsified() {
        let r = rm(&[2.0, 4.0], &[1.0, 2.0], DMatrix::identity(2, 2));
        let curve = falsification_frontier_k1(&r, 11).unwrap();
        assert_eq!(curve.len(), 1);
        assert!((curve.params[0][0] - 2.0).abs() < 1e-12);
        assert!(curve.deltas[0].as_slice().iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn frontier_singleton_and_emptiness() {
        let r = fixture_l2();
        let curve = falsification_frontier_k1(&r, 7).unwrap();
        for (b, d) in curve.params.iter().zip(&curve.deltas) {
            let set = identified_set_linear(&r, d).unwrap();
            match set {
                LinearIdentifiedSet::Interval { lo, hi } => {
                    assert!((lo - b[0]).abs() < 1e-9);
                    assert!((hi - b[0]).abs() < 1e-9);
                }
                other => panic!("expected singleton at frontier, got {other:?}"),
            }
            let shrunk = identified_set_linear(&r, &d.scaled(0.99)).unwrap();
            assert!(matches!(shrunk, LinearIdentifiedSet::Empty));
        }
    }

    #[test]
    fn ff_two_instruments_closed_form() {
        let r = fixture_l2();
        let (d1, d2, slope) = ff_two_instruments(&r).unwrap();
        assert!((d1 - 4.0).abs() < 1e-12);
        assert!((d2 - 4.0).abs() < 1e-12);
        assert!((slope + 1.0).abs() < 1e-12);

        let r = rm(&[2.0, 5.0], &[2.0, 1.0], DMatrix::identity(2, 2));
        let (d1, d2, slope) = ff_two_instruments(&r).unwrap();
        assert!((d1 - 8.0).abs() < 1e-12);
        assert!((d2 - 4.0).abs() < 1e-12);
        assert!((slope + 0.5).abs() < 1e-12);

        let r = rm(&[2.0, 4.0], &[1.0, 2.0], DMatrix::identity(2, 2));
        let (d1, d2, _) = ff_two_instruments(&r).unwrap();
        assert!(d1.abs() < 1e-12 && d2.abs() < 1e-12);
    }

    #[test]
    fn fas_k1_cases() {
        let r = fixture_l2();
        let (lo, hi) = fas_k1(&r).unwrap().interval().unwrap();
        assert_eq!((lo, hi), (1.0, 5.0));

        let r = rm(&[2.0, 4.0], &[1.0, 2.0], DMatrix::identity(2, 2));
        let (lo, hi) = fas_k1(&r).unwrap().interval().unwrap();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);

        let r = rm(&[1.0, 5.0, 0.3], &[1.0, 1.0, 0.0], DMatrix::identity(3, 3));
        let (lo, hi) = fas_k1(&r).unwrap().interval().unwrap();
        assert_eq!((lo, hi), (1.0, 5.0));

        let r = rm(&[1.0, 5.0], &[0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(
            fas_k1(&r),
            Err(LinearIvError::AllInstrumentsIrrelevant)
        ));
    }

    #[test]
    fn fas_general_k2l3_vertices() {
        let r = fixture_k2l3();
        let fas = fas_general(&r).unwrap();
        let FasResult::VertexSet {
            vertices,
            simplices,
            ..
        } = &fas
        else {
            panic!("expected vertex set");
        };
        assert_eq!(vertices.len(), 3);
        let expect = [
            (vec![0usize, 1], [0.0, 0.0]),
            (vec![0, 2], [0.0, 1.0]),
            (vec![1, 2], [1.0, 0.0]),
        ];
        for (v, (subset, beta)) in vertices.iter().zip(expect.iter()) {
            assert_eq!(&v.excluded, subset);
            assert!((v.beta[0] - beta[0]).abs() < 1e-12);
            assert!((v.beta[1] - beta[1]).abs() < 1e-12);
        }
        assert_eq!(simplices.len(), 1);
        assert_eq!(simplices[0].reference_set, vec![0, 1, 2]);
    }

    #[test]
    fn fas_projection_k2l3() {
        let r = fixture_k2l3();
        let (lo, hi) = fas_projection(&r, &DVector::from_column_slice(&[1.0, 0.0])).unwrap();
        assert!((lo - 0.0).abs() < 1e-12);
        assert!((hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fas_general_duplicate_rows_rejected() {
        let r = ReducedMoments {
            psi: DVector::from_column_slice(&[0.0, 0.0, 1.0]),
            pi: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]),
            var_z: DMatrix::identity(3, 3),
            controls_absorbed: false,
        };
        assert!(matches!(
            fas_general(&r),
            Err(LinearIvError::RelevanceAssumptionViolated(_))
        ));
    }

    #[test]
    fn ff_general_point_and_rejection() {
        let r = fixture_k2l3();
        let b = DVector::from_column_slice(&[0.5, 0.25]);
        let delta = ff_general(&r, &b).unwrap();
        let expect = [0.5, 0.25, 0.25];
        for (d, e) in delta.as_slice().iter().zip(expect.iter()) {
            assert!((d - e).abs() < 1e-12);
        }
        // Singleton at the frontier, empty just below.
        let set = identified_set_linear(&r, &delta).unwrap();
        let LinearIdentifiedSet::Polytope(p) = set else {
            panic!("expected polytope");
        };
        let cs: ConvexSet = p.into();
        for coord in 0..2 {
            let mut obj = DVector::zeros(2);
            obj[coord] = 1.0;
            let mm = geometry::lp_minmax(&obj, &cs).unwrap();
            assert!((mm.min - b[coord]).abs() < 1e-9);
            assert!((mm.max - b[coord]).abs() < 1e-9);
        }
        let shrunk = identified_set_linear(&r, &delta.scaled(0.99)).unwrap();
        assert!(shrunk.is_empty_set().unwrap());

        let outside = DVector::from_column_slice(&[0.8, 0.8]);
        assert!(matches!(
            ff_general(&r, &outside),
            Err(LinearIvError::PointNotOnFrontierParameterization)
        ));
    }

    #[test]
    fn directional_point_cases() {
        let r = fixture_l2();
        let (m, pair, b) = directional_falsification_point(&r, &[1.0, 1.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-12);
        assert_eq!(pair, (1, 0));
        assert!((b - 3.0).abs() < 1e-12);

        let r2 = rm(&[2.0, 4.0], &[1.0, 2.0], DMatrix::identity(2, 2));
        let (m, _, _) = directional_falsification_point(&r2, &[1.0, 1.0]).unwrap();
        assert!(m.abs() < 1e-12);

        let (m, pair, b) = directional_falsification_point(&r, &[2.0, 1.0]).unwrap();
        assert!((m - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(pair, (1, 0));
        assert!((b - 11.0 / 3.0).abs() < 1e-12);
        // Cross-check: B(m* d) nonempty, B(0.99 m* d) empty.
        let at = identified_set_linear(
            &r,
            &RelaxationVector::new(vec![m * 2.0, m * 1.0]).unwrap(),
        )
        .unwrap();
        assert!(!at.is_empty_set().unwrap());
        let below = identified_set_linear(
            &r,
            &RelaxationVector::new(vec![0.99 * m * 2.0, 0.99 * m]).unwrap(),
        )
        .unwrap();
        assert!(below.is_empty_set().unwrap());
    }

    #[test]
    fn breakdown_frontier_fixture_values() {
        let r = fixture_l2();
        let curve =
            breakdown_frontier_k1(&r, (0.0, f64::INFINITY), &[0.5, 2.0], 10.0).unwrap();
        assert!((curve.bf[0].unwrap() - 10.0).abs() < 1e-6);
        assert!((curve.bf[1].unwrap() - 5.0).abs() < 1e-6);

        // Vacuous conclusion: BF equals the cap wherever B is nonempty.
        let curve = breakdown_frontier_k1(
            &r,
            (f64::NEG_INFINITY, f64::INFINITY),
            &[0.0, 1.0, 3.0],
            10.0,
        )
        .unwrap();
        for v in &curve.bf {
            assert!((v.unwrap() - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn breakdown_weakly_above_frontier() {
        let r = fixture_l2();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.2).collect();
        let curve = breakdown_frontier_k1(&r, (0.0, f64::INFINITY), &grid, 10.0).unwrap();
        // Frontier: delta2 = 4 - delta1 (where positive).
        for (d1, bf) in curve.delta1.iter().zip(&curve.bf) {
            if let Some(v) = bf {
                let ff = (4.0 - d1).max(0.0);
                assert!(*v >= ff - 1e-6, "BF({d1}) = {v} below FF = {ff}");
            }
        }
    }

    #[test]
    fn twosls_weights_cases() {
        let r = fixture_l2();
        let w = twosls_weights(&r).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);

        let r = rm(&[2.0, 5.0], &[2.0, 1.0], DMatrix::identity(2, 2));
        let w = twosls_weights(&r).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-12 && (w[1] - 0.2).abs() < 1e-12);
        let ratios: Vec<f64> = instrument_ratios(&r)
            .unwrap()
            .into_iter()
            .flatten()
            .collect();
        let mix = w[0] * ratios[0] + w[1] * ratios[1];
        let full = moments::full_2sls(&r).unwrap();
        assert!((mix - full).abs() < 1e-12);
        assert!((mix - 1.8).abs() < 1e-12);

        // Negatively correlated instruments: weights may be negative but sum
        // to one, and the estimand can leave the adaptive set.
        let var_z = DMatrix::from_row_slice(2, 2, &[1.0, -0.95, -0.95, 1.0]);
        let r = rm(&[1.0, 4.5], &[1.0, 0.9], var_z);
        let w = twosls_weights(&r).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-10);
        assert!(w.iter().any(|v| *v < 0.0));
        let full = moments::full_2sls(&r).unwrap();
        let (lo, hi) = fas_k1(&r).unwrap().interval().unwrap();
        assert!(full < lo || full > hi, "full 2SLS {full} inside [{lo},{hi}]");
    }

    #[test]
    fn gamma_line_cases() {
        let r = fixture_l2();
        let line = gamma_identified_line(&r).unwrap();
        assert!(!line.contains_origin(1e-10));
        let g1 = line.gamma_at(1.0);
        assert!((g1[0] - 0.0).abs() < 1e-12 && (g1[1] - 4.0).abs() < 1e-12);
        let g5 = line.gamma_at(5.0);
        assert!((g5[0] + 4.0).abs() < 1e-12 && (g5[1] - 0.0).abs() < 1e-12);

        let r = rm(&[2.0, 4.0], &[1.0, 2.0], DMatrix::identity(2, 2));
        let line = gamma_identified_line(&r).unwrap();
        assert!(line.contains_origin(1e-10));
        // Consistent with the overidentification residuals.
        assert!(sargan_residuals(&r).unwrap().amax() < 1e-12);
    }

    #[test]
    fn qmt_star_cases() {
        let r = fixture_l2();
        let q = qmt_star(&r, &RelaxationVector::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert!((q - 2.0).abs() < 1e-12);

        // On the frontier the objective is flat at zero.
        let q = qmt_star(&r, &RelaxationVector::new(vec![2.0, 2.0]).unwrap()).unwrap();
        assert!(q.abs() < 1e-12);
        let q = qmt_star(&r, &RelaxationVector::new(vec![0.0, 4.0]).unwrap()).unwrap();
        assert!(q.abs() < 1e-12);
    }

    #[test]
    fn qmt_star_matches_grid_minimization() {
        // Oracle: minimize the moment-inequality objective, with each moment
        // scaled by 1/|pi_l| so violations are measured on the coefficient
        // axis, over a fine b grid.
        let cases = [
            ([1.0, 5.0], [1.0, 1.0], [1.0, 1.0]),
            ([2.0, -1.0], [0.5, 2.0], [0.3, 0.2]),
            ([1.0, 5.0], [2.0, -1.0], [0.5, 1.5]),
        ];
        for (psi, pi, delta) in cases {
            let r = rm(&psi, &pi, DMatrix::identity(2, 2));
            let d = RelaxationVector::new(delta.to_vec()).unwrap();
            let q = qmt_star(&r, &d).unwrap();
            let obj = |b: f64| -> f64 {
                let mut total = 0.0;
                for l in 0..2 {
                    let u = (psi[l] - pi[l] * b) / pi[l].abs();
                    let dl = delta[l] / pi[l].abs();
                    total += (-(u + dl)).max(0.0).powi(2) + (-(dl - u)).max(0.0).powi(2);
                }
                total
            };
            let ratios: Vec<f64> = (0..2).map(|l| psi[l] / pi[l]).collect();
            let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min) - 5.0;
            let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 5.0;
            let mut best = f64::INFINITY;
            let n = 100_000;
            for i in 0..=n {
                let b = lo + (hi - lo) * i as f64 / n as f64;
                best = best.min(obj(b));
            }
            assert!((q - best).abs() < 1e-6, "qmt {q} vs grid {best}");
        }
    }

    #[test]
    fn monotone_identified_sets() {
        let r = fixture_l2();
        let small = identified_set_linear(&r, &RelaxationVector::new(vec![2.5, 2.5]).unwrap())
            .unwrap();
        let large = identified_set_linear(&r, &RelaxationVector::new(vec![3.5, 4.0]).unwrap())
            .unwrap();
        let (slo, shi) = match small {
            LinearIdentifiedSet::Interval { lo, hi } => (lo, hi),
            _ => panic!(),
        };
        let (llo, lhi) = match large {
            LinearIdentifiedSet::Interval { lo, hi } => (lo, hi),
            _ => panic!(),
        };
        assert!(llo <= slo && lhi >= shi);
    }

    #[test]
    fn estimate_fas_zero_cutoff_equals_plain_fas() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 5000;
        let mut data = DMatrix::zeros(n, 4);
        for i in 0..n {
            let z1 = crate::test_support::normal(&mut rng);
            let z2 = crate::test_support::normal(&mut rng);
            let x = z1 + z2 + crate::test_support::normal(&mut rng);
            let y = z1 + 5.0 * z2 + crate::test_support::normal(&mut rng);
            data[(i, 0)] = y;
            data[(i, 1)] = x;
            data[(i, 2)] = z1;
            data[(i, 3)] = z2;
        }
        let sample = SampleData::new(
            data,
            vec![
                crate::moments::VariableRole::Outcome,
                crate::moments::VariableRole::Treatment,
                crate::moments::VariableRole::Instrument,
                crate::moments::VariableRole::Instrument,
            ],
        )
        .unwrap();
        let est = estimate_fas(&sample, 0.0).unwrap();
        let m = moment_set_from_sample(&sample).unwrap();
        let r = partial_out_controls(&m).unwrap();
        let plain = fas_k1(&r).unwrap();
        let (elo, ehi) = est.interval().unwrap();
        let (plo, phi) = plain.interval().unwrap();
        assert!((elo - plo).abs() < 1e-12);
        assert!((ehi - phi).abs() < 1e-12);
        if let FasResult::Interval { screened_out, .. } = est {
            assert!(screened_out.is_empty());
        }
    }
}
