//! Convex-geometry kernel shared by the identification modules.
//!
//! Feasible regions come in two shapes: an explicit half-space [`Polytope`]
//! with box bounds, and an [`AffineImageSet`] (the image of a box, optionally
//! sliced by fixed-sum groups, under an affine map). Affine-image sets are
//! always handled as LPs in their source variables; their half-space
//! representation is never materialized, since the source dimension can be
//! exponential in the number of instruments.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub mod lp;
mod minnorm;

pub use lp::{LpError, LpOp, LpProblem, FEAS_TOL};

/// Two sets closer than this (in Euclidean distance) are treated as
/// intersecting.
pub const DIST_ZERO_TOL: f64 = 1e-7;

/// Relative convergence tolerance of the distance computation.
pub const DIST_REL_TOL: f64 = 1e-10;

/// Iteration cap of the distance computation.
pub const DIST_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Error)]
pub enum GeometryError {
    #[error("feasible set is empty")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("operand {0} of the distance computation is empty")]
    EmptyOperand(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl From<LpError> for GeometryError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::Infeasible => GeometryError::Infeasible,
            LpError::Unbounded => GeometryError::Unbounded,
            other => GeometryError::Numerical(other.to_string()),
        }
    }
}

/// Half-space polytope `{x : A x <= b, lower <= x <= upper}`.
///
/// Bound entries may be infinite. Rows with an infinite right-hand side are
/// vacuous and dropped on construction.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Polytope {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, GeometryError> {
        if a.nrows() != b.len() {
            return Err(GeometryError::Dimension(format!(
                "{} rows vs {} rhs entries",
                a.nrows(),
                b.len()
            )));
        }
        if a.ncols() != lower.len() || a.ncols() != upper.len() {
            return Err(GeometryError::Dimension(
                "bound length does not match column count".into(),
            ));
        }
        for j in 0..lower.len() {
            if lower[j] > upper[j] {
                return Err(GeometryError::Dimension(format!(
                    "lower bound exceeds upper bound in coordinate {j}"
                )));
            }
        }
        let keep: Vec<usize> = (0..a.nrows()).filter(|&i| b[i].is_finite()).collect();
        if keep.len() != a.nrows() {
            let a = DMatrix::from_fn(keep.len(), a.ncols(), |i, j| a[(keep[i], j)]);
            let b = DVector::from_iterator(keep.len(), keep.iter().map(|&i| b[i]));
            return Ok(Self { a, b, lower, upper });
        }
        Ok(Self { a, b, lower, upper })
    }

    /// Axis-aligned box with no half-space rows.
    pub fn from_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, GeometryError> {
        let d = lower.len();
        Self::new(DMatrix::zeros(0, d), DVector::zeros(0), lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }
}

/// `{offset + map q : source_lower <= q <= source_upper, and for each group
/// (indices, total): sum of q over the indices equals total}`.
#[derive(Debug, Clone)]
pub struct AffineImageSet {
    pub offset: DVector<f64>,
    pub map: DMatrix<f64>,
    pub source_lower: DVector<f64>,
    pub source_upper: DVector<f64>,
    /// Fixed-sum constraints on the source box (used for density simplices).
    pub source_sums: Vec<(Vec<usize>, f64)>,
}

impl AffineImageSet {
    pub fn new(
        offset: DVector<f64>,
        map: DMatrix<f64>,
        source_lower: DVector<f64>,
        source_upper: DVector<f64>,
    ) -> Result<Self, GeometryError> {
        if map.nrows() != offset.len() {
            return Err(GeometryError::Dimension(
                "map row count does not match offset length".into(),
            ));
        }
        if map.ncols() != source_lower.len() || map.ncols() != source_upper.len() {
            return Err(GeometryError::Dimension(
                "source bound length does not match map column count".into(),
            ));
        }
        Ok(Self {
            offset,
            map,
            source_lower,
            source_upper,
            source_sums: Vec::new(),
        })
    }

    /// Image of the unit box `[0,1]^q`.
    pub fn unit_box(offset: DVector<f64>, map: DMatrix<f64>) -> Result<Self, GeometryError> {
        let q = map.ncols();
        Self::new(
            offset,
            map,
            DVector::zeros(q),
            DVector::from_element(q, 1.0),
        )
    }

    pub fn with_source_sums(mut self, sums: Vec<(Vec<usize>, f64)>) -> Self {
        self.source_sums = sums;
        self
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn source_dim(&self) -> usize {
        self.map.ncols()
    }
}

/// Either feasible-region shape, in a shared ambient space.
#[derive(Debug, Clone)]
pub enum ConvexSet {
    Polytope(Polytope),
    Affine(AffineImageSet),
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Polytope(p) => p.dim(),
            ConvexSet::Affine(a) => a.dim(),
        }
    }
}

impl From<Polytope> for ConvexSet {
    fn from(p: Polytope) -> Self {
        ConvexSet::Polytope(p)
    }
}

impl From<AffineImageSet> for ConvexSet {
    fn from(a: AffineImageSet) -> Self {
        ConvexSet::Affine(a)
    }
}

/// Result of a min/max linear program, with attaining points.
#[derive(Debug, Clone)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
    pub argmin: DVector<f64>,
    pub argmax: DVector<f64>,
}

/// Minimum and maximum of `objective . x` over a single feasible set.
pub fn lp_minmax(objective: &DVector<f64>, set: &ConvexSet) -> Result<MinMax, GeometryError> {
    match set {
        ConvexSet::Polytope(p) => {
            let (min, argmin) = polytope_opt(objective, p, false)?;
            let (max, argmax) = polytope_opt(objective, p, true)?;
            Ok(MinMax {
                min,
                max,
                argmin,
                argmax,
            })
        }
        ConvexSet::Affine(a) => {
            let (min, argmin) = affine_opt(objective, a, false)?;
            let (max, argmax) = affine_opt(objective, a, true)?;
            Ok(MinMax {
                min,
                max,
                argmin,
                argmax,
            })
        }
    }
}

/// Min/max of `objective . x` over an intersection of sets.
pub fn lp_minmax_intersection(
    objective: &DVector<f64>,
    sets: &[&ConvexSet],
) -> Result<MinMax, GeometryError> {
    let mut asm = assemble(sets)?;
    let (min, xmin) = asm.optimize(objective.as_slice(), false)?;
    let (max, xmax) = asm.optimize(objective.as_slice(), true)?;
    Ok(MinMax {
        min,
        max,
        argmin: xmin,
        argmax: xmax,
    })
}

/// Whether the intersection of the given sets is nonempty (within the LP
/// feasibility tolerance).
pub fn intersection_feasible(sets: &[&ConvexSet]) -> Result<bool, GeometryError> {
    let mut asm = assemble(sets)?;
    asm.feasible()
}

/// Euclidean distance between two convex sets.
///
/// Returns exactly 0 when the joint feasibility LP certifies a common point;
/// otherwise runs the minimum-norm-point method on the Minkowski difference.
pub fn polytope_distance(p: &ConvexSet, q: &ConvexSet) -> Result<f64, GeometryError> {
    if p.dim() != q.dim() {
        return Err(GeometryError::Dimension(
            "distance operands live in different spaces".into(),
        ));
    }
    if !intersection_feasible(&[p])? {
        return Err(GeometryError::EmptyOperand(0));
    }
    if !intersection_feasible(&[q])? {
        return Err(GeometryError::EmptyOperand(1));
    }
    if intersection_feasible(&[p, q])? {
        return Ok(0.0);
    }
    let dim = p.dim();
    // Persistent per-operand LPs so generated rows carry across oracle calls.
    let mut asm_p = assemble(&[p])?;
    let mut asm_q = assemble(&[q])?;
    let lmo = |g: &DVector<f64>| -> Result<DVector<f64>, GeometryError> {
        let (_, vp) = asm_p.optimize(g.as_slice(), false)?;
        let (_, vq) = asm_q.optimize(g.as_slice(), true)?;
        Ok(vp - vq)
    };
    minnorm::min_norm_point(dim, lmo, DIST_REL_TOL, DIST_MAX_ITER)
}

/// Whether `point` is a convex combination of `vertices`, decided by LP
/// feasibility.
pub fn hull_membership(point: &DVector<f64>, vertices: &[DVector<f64>]) -> bool {
    if vertices.is_empty() {
        return false;
    }
    let d = point.len();
    let k = vertices.len();
    let mut lp = LpProblem::new(k);
    for j in 0..k {
        lp.set_bounds(j, 0.0, 1.0);
    }
    for i in 0..d {
        let coeffs: Vec<f64> = vertices.iter().map(|v| v[i]).collect();
        lp.add_row(coeffs, LpOp::Eq, point[i]);
    }
    lp.add_row(vec![1.0; k], LpOp::Eq, 1.0);
    matches!(lp.is_feasible(), Ok(true))
}

/// Counter-clockwise convex hull of a 2-d point cloud (monotone chain).
/// Collinear interior points are dropped.
pub fn hull_2d(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("non-finite point in hull_2d"));
    pts.dedup_by(|a, b| a == b);
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let scale = pts
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let eps = 1e-12 * scale * scale;
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= eps
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= eps
        {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn polytope_opt(
    objective: &DVector<f64>,
    p: &Polytope,
    maximize: bool,
) -> Result<(f64, DVector<f64>), GeometryError> {
    let set = [ConvexSet::Polytope(p.clone())];
    let refs: Vec<&ConvexSet> = set.iter().collect();
    let mut asm = assemble(&refs)?;
    asm.optimize(objective.as_slice(), maximize)
        .map(|(v, x)| (v, x))
}

fn affine_opt(
    objective: &DVector<f64>,
    a: &AffineImageSet,
    maximize: bool,
) -> Result<(f64, DVector<f64>), GeometryError> {
    let q = a.source_dim();
    let mut lp = LpProblem::new(q);
    for j in 0..q {
        lp.set_bounds(j, a.source_lower[j], a.source_upper[j]);
    }
    for (idx, total) in &a.source_sums {
        let entries: Vec<(usize, f64)> = idx.iter().map(|&j| (j, 1.0)).collect();
        lp.add_sparse_row(&entries, LpOp::Eq, *total);
    }
    // objective on the image: c'(offset + M q) = c'offset + (M'c)'q
    let sign = if maximize { -1.0 } else { 1.0 };
    let mtc = a.map.transpose() * objective;
    let c: Vec<f64> = mtc.iter().map(|v| sign * v).collect();
    lp.set_objective(&c);
    let s = lp.solve()?;
    let qv = DVector::from_column_slice(&s.x);
    let point = &a.offset + &a.map * &qv;
    Ok((objective.dot(&point), point))
}

/// Polytope operands with more rows than this get lazy row generation.
const LAZY_ROW_THRESHOLD: usize = 96;
/// At most this many violated lazy rows are added per round.
const LAZY_BATCH: usize = 24;

/// The joint LP over an intersection of sets, with large half-space families
/// handled by row generation: solve a relaxation, add the most violated
/// missing rows, repeat. Ambient variables come first; each affine operand
/// appends its source variables and links them with equality rows.
struct AssembledLp {
    lp: LpProblem,
    ambient: usize,
    /// Ambient-width half-space rows not yet in the LP.
    lazy: Vec<(Vec<f64>, f64)>,
    lazy_added: Vec<bool>,
}

impl AssembledLp {
    fn feasible(&mut self) -> Result<bool, GeometryError> {
        loop {
            let x = match self.lp.feasible_point() {
                Err(LpError::Infeasible) => return Ok(false),
                other => other?,
            };
            if !self.add_violated(&x) {
                return Ok(true);
            }
        }
    }

    fn optimize(
        &mut self,
        c_ambient: &[f64],
        maximize: bool,
    ) -> Result<(f64, DVector<f64>), GeometryError> {
        let sign = if maximize { -1.0 } else { 1.0 };
        let mut c = vec![0.0; self.lp.num_vars()];
        for (slot, v) in c.iter_mut().zip(c_ambient) {
            *slot = sign * v;
        }
        self.lp.set_objective(&c);
        loop {
            let sol = self.lp.solve()?;
            if !self.add_violated(&sol.x) {
                return Ok((
                    sign * sol.objective,
                    DVector::from_column_slice(&sol.x[..self.ambient]),
                ));
            }
        }
    }

    /// Adds the most violated lazy rows at `x`; returns whether any were
    /// added.
    fn add_violated(&mut self, x: &[f64]) -> bool {
        let mut violations: Vec<(usize, f64)> = Vec::new();
        for (i, (coeffs, rhs)) in self.lazy.iter().enumerate() {
            if self.lazy_added[i] {
                continue;
            }
            let lhs: f64 = coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
            let v = lhs - rhs;
            if v > FEAS_TOL {
                violations.push((i, v));
            }
        }
        if violations.is_empty() {
            return false;
        }
        violations.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(i, _) in violations.iter().take(LAZY_BATCH) {
            self.lazy_added[i] = true;
            let mut coeffs = vec![0.0; self.lp.num_vars()];
            coeffs[..self.ambient].copy_from_slice(&self.lazy[i].0);
            self.lp.add_row(coeffs, LpOp::Le, self.lazy[i].1);
        }
        true
    }
}

fn assemble(sets: &[&ConvexSet]) -> Result<AssembledLp, GeometryError> {
    if sets.is_empty() {
        return Err(GeometryError::Dimension("no sets given".into()));
    }
    let d = sets[0].dim();
    for s in sets {
        if s.dim() != d {
            return Err(GeometryError::Dimension(
                "intersection operands live in different spaces".into(),
            ));
        }
    }
    let total: usize = d
        + sets
            .iter()
            .map(|s| match s {
                ConvexSet::Polytope(_) => 0,
                ConvexSet::Affine(a) => a.source_dim(),
            })
            .sum::<usize>();
    let mut lp = LpProblem::new(total);
    let mut lazy: Vec<(Vec<f64>, f64)> = Vec::new();
    // Ambient bounds: intersection of the polytope operands' boxes.
    let mut amb_lo = vec![f64::NEG_INFINITY; d];
    let mut amb_hi = vec![f64::INFINITY; d];
    for s in sets {
        if let ConvexSet::Polytope(p) = s {
            for j in 0..d {
                amb_lo[j] = amb_lo[j].max(p.lower[j]);
                amb_hi[j] = amb_hi[j].min(p.upper[j]);
            }
        }
    }
    for j in 0..d {
        lp.set_bounds(j, amb_lo[j], amb_hi[j]);
    }
    let mut next = d;
    for s in sets {
        match s {
            ConvexSet::Polytope(p) => {
                let n_rows = p.a.nrows();
                let stride = if n_rows > LAZY_ROW_THRESHOLD {
                    (n_rows / 24).max(2)
                } else {
                    1
                };
                for i in 0..n_rows {
                    let row: Vec<f64> = p.a.row(i).iter().copied().collect();
                    if i % stride == 0 {
                        let mut coeffs = vec![0.0; total];
                        coeffs[..d].copy_from_slice(&row);
                        lp.add_row(coeffs, LpOp::Le, p.b[i]);
                    } else {
                        lazy.push((row, p.b[i]));
                    }
                }
            }
            ConvexSet::Affine(a) => {
                let q = a.source_dim();
                for j in 0..q {
                    lp.set_bounds(next + j, a.source_lower[j], a.source_upper[j]);
                }
                for (idx, t) in &a.source_sums {
                    let entries: Vec<(usize, f64)> =
                        idx.iter().map(|&j| (next + j, 1.0)).collect();
                    lp.add_sparse_row(&entries, LpOp::Eq, *t);
                }
                // v - M q = offset
                for i in 0..d {
                    let mut coeffs = vec![0.0; total];
                    coeffs[i] = 1.0;
                    for j in 0..q {
                        coeffs[next + j] = -a.map[(i, j)];
                    }
                    lp.add_row(coeffs, LpOp::Eq, a.offset[i]);
                }
                next += q;
            }
        }
    }
    let lazy_added = vec![false; lazy.len()];
    Ok(AssembledLp {
        lp,
        ambient: d,
        lazy,
        lazy_added,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polytope {
        Polytope::from_box(DVector::zeros(2), DVector::from_element(2, 1.0)).unwrap()
    }

    fn triangle() -> Polytope {
        // conv{(0,0),(1,0),(0,1)}
        Polytope::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_column_slice(&[1.0]),
            DVector::zeros(2),
            DVector::from_element(2, f64::INFINITY),
        )
        .unwrap()
    }

    #[test]
    fn minmax_unit_square() {
        let mm = lp_minmax(
            &DVector::from_column_slice(&[1.0, 1.0]),
            &unit_square().into(),
        )
        .unwrap();
        assert!((mm.min - 0.0).abs() < 1e-12);
        assert!((mm.max - 2.0).abs() < 1e-12);
    }

    #[test]
    fn minmax_triangle() {
        let mm = lp_minmax(&DVector::from_column_slice(&[1.0, 0.0]), &triangle().into()).unwrap();
        assert!((mm.min - 0.0).abs() < 1e-9);
        assert!((mm.max - 1.0).abs() < 1e-9);
    }

    #[test]
    fn distance_identical_squares_is_zero() {
        let a: ConvexSet = unit_square().into();
        let b: ConvexSet = unit_square().into();
        assert_eq!(polytope_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn distance_axis_gap() {
        let a: ConvexSet = unit_square().into();
        let b: ConvexSet = Polytope::from_box(
            DVector::from_column_slice(&[2.0, 0.0]),
            DVector::from_column_slice(&[3.0, 1.0]),
        )
        .unwrap()
        .into();
        let d = polytope_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-8, "got {d}");
        let d2 = polytope_distance(&b, &a).unwrap();
        assert!((d - d2).abs() < 1e-9, "not symmetric: {d} vs {d2}");
    }

    #[test]
    fn distance_diagonal_gap() {
        let a: ConvexSet = unit_square().into();
        let b: ConvexSet = Polytope::from_box(
            DVector::from_column_slice(&[2.0, 2.0]),
            DVector::from_column_slice(&[3.0, 3.0]),
        )
        .unwrap()
        .into();
        let d = polytope_distance(&a, &b).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-8, "got {d}");
    }

    #[test]
    fn distance_empty_operand() {
        let empty = Polytope::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_column_slice(&[-1.0]),
            DVector::zeros(1),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let a: ConvexSet = empty.into();
        let b: ConvexSet =
            Polytope::from_box(DVector::zeros(1), DVector::from_element(1, 1.0))
                .unwrap()
                .into();
        assert!(matches!(
            polytope_distance(&a, &b),
            Err(GeometryError::EmptyOperand(0))
        ));
    }

    #[test]
    fn distance_shrinks_when_operand_grows() {
        let a: ConvexSet = unit_square().into();
        let far = |lo: f64| -> ConvexSet {
            Polytope::from_box(
                DVector::from_column_slice(&[lo, 0.0]),
                DVector::from_column_slice(&[lo + 1.0, 1.0]),
            )
            .unwrap()
            .into()
        };
        let grown: ConvexSet = Polytope::from_box(
            DVector::from_column_slice(&[-1.0, -1.0]),
            DVector::from_column_slice(&[1.5, 1.5]),
        )
        .unwrap()
        .into();
        let d_small = polytope_distance(&a, &far(3.0)).unwrap();
        let d_grown = polytope_distance(&grown, &far(3.0)).unwrap();
        assert!(d_grown <= d_small + 1e-10);
    }

    #[test]
    fn affine_image_box_ranges() {
        // offset (0.1, 0.7), diagonal map (0.5, 0.2) of unit box.
        let set = AffineImageSet::unit_box(
            DVector::from_column_slice(&[0.1, 0.7]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]),
        )
        .unwrap();
        let mm = lp_minmax(&DVector::from_column_slice(&[1.0, 0.0]), &set.clone().into()).unwrap();
        assert!((mm.min - 0.1).abs() < 1e-9);
        assert!((mm.max - 0.6).abs() < 1e-9);
        let mm = lp_minmax(&DVector::from_column_slice(&[0.0, 1.0]), &set.into()).unwrap();
        assert!((mm.min - 0.7).abs() < 1e-9);
        assert!((mm.max - 0.9).abs() < 1e-9);
    }

    #[test]
    fn affine_source_sums_restrict_image() {
        // Image of the probability simplex in R^3 under identity-ish map:
        // coordinates must sum to 1.
        let set = AffineImageSet::unit_box(
            DVector::zeros(3),
            DMatrix::identity(3, 3),
        )
        .unwrap()
        .with_source_sums(vec![(vec![0, 1, 2], 1.0)]);
        let mm = lp_minmax(&DVector::from_column_slice(&[1.0, 1.0, 1.0]), &set.into()).unwrap();
        assert!((mm.min - 1.0).abs() < 1e-9);
        assert!((mm.max - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hull_membership_basics() {
        let verts = vec![
            DVector::from_column_slice(&[0.0, 0.0]),
            DVector::from_column_slice(&[1.0, 0.0]),
            DVector::from_column_slice(&[0.0, 1.0]),
        ];
        assert!(hull_membership(&DVector::from_column_slice(&[0.0, 0.0]), &verts));
        assert!(hull_membership(
            &DVector::from_column_slice(&[0.5, 0.25]),
            &verts
        ));
        assert!(!hull_membership(
            &DVector::from_column_slice(&[0.8, 0.8]),
            &verts
        ));
    }

    #[test]
    fn hull_2d_triangle_and_square() {
        let tri = hull_2d(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(tri.len(), 3);
        let sq = hull_2d(&[
            [0.0, 0.0],
            [1.0, 0.0],
            [1.0, 1.0],
            [0.0, 1.0],
            [0.5, 0.5],
        ]);
        assert_eq!(sq.len(), 4);
        assert!(!sq.iter().any(|p| *p == [0.5, 0.5]));
    }

    #[test]
    fn hull_2d_contains_all_points() {
        // Deterministic pseudo-random points in a disk; every input point must
        // lie inside (or on) the hull under the pairwise orientation oracle.
        let mut pts = Vec::new();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let r = next().sqrt();
            let t = next() * std::f64::consts::TAU;
            pts.push([r * t.cos(), r * t.sin()]);
        }
        let hull = hull_2d(&pts);
        assert!(hull.len() >= 3);
        let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
            (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
        };
        for p in &pts {
            for i in 0..hull.len() {
                let a = &hull[i];
                let b = &hull[(i + 1) % hull.len()];
                assert!(
                    cross(a, b, p) >= -1e-9,
                    "point {p:?} outside hull edge {a:?}->{b:?}"
                );
            }
        }
    }

    #[test]
    fn lp_agrees_with_vertex_enumeration_5d() {
        // Random-ish bounded 5-dim polytopes: unit box plus extra half-spaces.
        // Oracle: enumerate candidate vertices as intersections of 5 active
        // constraints (rows or box facets) and filter by feasibility.
        let mut state = 42u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for trial in 0..5 {
            let d = 5;
            let m_extra = 6;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let mut rhs = Vec::new();
            for _ in 0..m_extra {
                let coef: Vec<f64> = (0..d).map(|_| next()).collect();
                // Keep the box center feasible: rhs >= a . (0.5,...,0.5)
                let center: f64 = coef.iter().sum::<f64>() * 0.5;
                rows.push(coef);
                rhs.push(center + 0.3);
            }
            let a = DMatrix::from_fn(m_extra, d, |i, j| rows[i][j]);
            let p = Polytope::new(
                a,
                DVector::from_vec(rhs.clone()),
                DVector::zeros(d),
                DVector::from_element(d, 1.0),
            )
            .unwrap();
            let obj = DVector::from_fn(d, |i, _| if (trial + i) % 2 == 0 { 1.0 } else { -0.7 });

            // All constraints as generic rows for the oracle.
            let mut all_rows: Vec<(Vec<f64>, f64)> = Vec::new();
            for (r, &b) in rows.iter().zip(&rhs) {
                all_rows.push((r.clone(), b));
            }
            for j in 0..d {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                all_rows.push((e.clone(), 1.0));
                let mut ne = vec![0.0; d];
                ne[j] = -1.0;
                all_rows.push((ne, 0.0));
            }
            let n_rows = all_rows.len();
            let mut best_min = f64::INFINITY;
            let mut best_max = f64::NEG_INFINITY;
            let mut combo = vec![0usize; d];
            // Iterate over all d-subsets of rows.
            fn subsets(
                n: usize,
                k: usize,
                start: usize,
                combo: &mut Vec<usize>,
                depth: usize,
                visit: &mut impl FnMut(&[usize]),
            ) {
                if depth == k {
                    visit(combo);
                    return;
                }
                for i in start..n {
                    combo[depth] = i;
                    subsets(n, k, i + 1, combo, depth + 1, visit);
                }
            }
            subsets(n_rows, d, 0, &mut combo, 0, &mut |idx: &[usize]| {
                let m = DMatrix::from_fn(d, d, |r, c| all_rows[idx[r]].0[c]);
                let b = DVector::from_fn(d, |r, _| all_rows[idx[r]].1);
                if let Some(v) = m.full_piv_lu().solve(&b) {
                    let feasible = all_rows.iter().all(|(row, bb)| {
                        row.iter().zip(v.iter()).map(|(a, x)| a * x).sum::<f64>() <= bb + 1e-8
                    });
                    if feasible && v.iter().all(|x| x.is_finite()) {
                        let val = obj.dot(&v);
                        best_min = best_min.min(val);
                        best_max = best_max.max(val);
                    }
                }
            });

            let mm = lp_minmax(&obj, &p.into()).unwrap();
            assert!(
                (mm.min - best_min).abs() < 1e-7,
                "trial {trial}: lp min {} vs oracle {}",
                mm.min,
                best_min
            );
            assert!(
                (mm.max - best_max).abs() < 1e-7,
                "trial {trial}: lp max {} vs oracle {}",
                mm.max,
                best_max
            );
        }
    }

    #[test]
    fn distance_zero_iff_joint_lp_feasible() {
        // Sliding box: distance crosses zero exactly when the joint LP
        // becomes feasible.
        let a: ConvexSet = unit_square().into();
        for k in 0..8 {
            let shift = 0.4 * k as f64;
            let b: ConvexSet = Polytope::from_box(
                DVector::from_column_slice(&[shift, 0.0]),
                DVector::from_column_slice(&[shift + 1.0, 1.0]),
            )
            .unwrap()
            .into();
            let feas = intersection_feasible(&[&a, &b]).unwrap();
            let d = polytope_distance(&a, &b).unwrap();
            assert_eq!(feas, d <= DIST_ZERO_TOL, "shift {shift}: d={d} feas={feas}");
        }
    }
}
