//! Dense bounded-variable primal simplex for small linear programs.
//!
//! Solves
//!
//! ```text
//! minimize    c'x
//! subject to  a_i'x  (<= | = | >=)  b_i,   i = 1..m
//!             l <= x <= u                  (entries may be infinite)
//! ```
//!
//! with a two-phase method: phase 1 drives artificial variables out of an
//! initial slack basis, phase 2 optimizes the caller's objective. Pivoting is
//! deterministic (Dantzig rule with index tie-breaks, Bland fallback after a
//! stall), so repeated solves of the same problem yield identical results.

use thiserror::Error;

/// Primal feasibility tolerance used throughout the geometry kernel.
pub const FEAS_TOL: f64 = 1e-9;

const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;
const STALL_LIMIT: usize = 256;
const REFACTOR_EVERY: usize = 64;

/// Relational operator of a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpOp {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("numerically singular basis")]
    SingularBasis,
    #[error("malformed linear program: {0}")]
    BadProblem(String),
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

/// A small dense LP in the form described in the module docs.
#[derive(Debug, Clone)]
pub struct LpProblem {
    n: usize,
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<(Vec<f64>, LpOp, f64)>,
}

impl LpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            objective: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_objective(&mut self, c: &[f64]) {
        assert_eq!(c.len(), self.n, "objective length mismatch");
        self.objective.copy_from_slice(c);
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, op: LpOp, rhs: f64) {
        assert_eq!(coeffs.len(), self.n, "row length mismatch");
        self.rows.push((coeffs, op, rhs));
    }

    /// Adds a sparse row given as `(index, coefficient)` pairs.
    pub fn add_sparse_row(&mut self, entries: &[(usize, f64)], op: LpOp, rhs: f64) {
        let mut coeffs = vec![0.0; self.n];
        for &(j, v) in entries {
            coeffs[j] += v;
        }
        self.rows.push((coeffs, op, rhs));
    }

    /// Minimizes the stored objective.
    pub fn solve(&self) -> Result<LpSolution, LpError> {
        match self.solve_inner(false, true) {
            Err(LpError::SingularBasis) => self.solve_inner(true, true),
            other => other,
        }
    }

    /// Runs phase 1 only and returns any feasible point.
    pub fn feasible_point(&self) -> Result<Vec<f64>, LpError> {
        let sol = match self.solve_inner(false, false) {
            Err(LpError::SingularBasis) => self.solve_inner(true, false),
            other => other,
        }?;
        Ok(sol.x)
    }

    fn solve_inner(&self, force_bland: bool, optimize: bool) -> Result<LpSolution, LpError> {
        let mut t = Tableau::build(self)?;
        t.phase1(force_bland)?;
        if optimize {
            t.phase2(&self.objective, force_bland)?;
        }
        Ok(t.extract(&self.objective))
    }

    /// Returns `Ok(true)` when the constraint system admits a feasible point.
    pub fn is_feasible(&self) -> Result<bool, LpError> {
        match self.feasible_point() {
            Ok(_) => Ok(true),
            Err(LpError::Infeasible) => Ok(false),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColStatus {
    Basic,
    AtLower,
    AtUpper,
    Free,
}

/// Column ids: `0..n` structural, `n..n+m` slack (coefficient +1 in its row),
/// `n+m..n+2m` artificial (coefficient `art_sign[i]` in row `i`).
struct Tableau {
    m: usize,
    n: usize,
    /// Column-major structural coefficients, m x n.
    a: Vec<f64>,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    status: Vec<ColStatus>,
    basis: Vec<usize>,
    /// Row-major inverse basis, m x m.
    binv: Vec<f64>,
    xb: Vec<f64>,
    art_sign: Vec<f64>,
    art_used: Vec<bool>,
    pivots_since_refactor: usize,
}

enum StepOutcome {
    Optimal,
    Pivoted { step: f64 },
}

impl Tableau {
    fn build(p: &LpProblem) -> Result<Self, LpError> {
        let n = p.n;
        for j in 0..n {
            if p.lower[j] > p.upper[j] + TIE_TOL {
                return Err(LpError::Infeasible);
            }
            if p.lower[j].is_nan() || p.upper[j].is_nan() {
                return Err(LpError::BadProblem(format!("NaN bound on variable {j}")));
            }
        }

        // Row normalization by the largest coefficient magnitude. Zero rows are
        // resolved immediately.
        let mut rows: Vec<(Vec<f64>, f64, LpOp)> = Vec::with_capacity(p.rows.len());
        for (coeffs, op, rhs) in &p.rows {
            if coeffs.iter().any(|v| !v.is_finite()) || !rhs.is_finite() {
                return Err(LpError::BadProblem("non-finite row".into()));
            }
            let scale = coeffs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if scale <= 0.0 {
                let ok = match op {
                    LpOp::Le => *rhs >= -FEAS_TOL,
                    LpOp::Ge => *rhs <= FEAS_TOL,
                    LpOp::Eq => rhs.abs() <= FEAS_TOL,
                };
                if ok {
                    continue;
                }
                return Err(LpError::Infeasible);
            }
            let inv = 1.0 / scale;
            rows.push((coeffs.iter().map(|v| v * inv).collect(), rhs * inv, *op));
        }

        let m = rows.len();
        let total = n + 2 * m;
        let mut a = vec![0.0; m * n];
        for (i, (coeffs, _, _)) in rows.iter().enumerate() {
            for (j, v) in coeffs.iter().enumerate() {
                a[j * m + i] = *v;
            }
        }
        let rhs: Vec<f64> = rows.iter().map(|r| r.1).collect();

        let mut lower = vec![f64::NEG_INFINITY; total];
        let mut upper = vec![f64::INFINITY; total];
        lower[..n].copy_from_slice(&p.lower);
        upper[..n].copy_from_slice(&p.upper);
        for (i, (_, _, op)) in rows.iter().enumerate() {
            let (lo, hi) = match op {
                LpOp::Le => (0.0, f64::INFINITY),
                LpOp::Ge => (f64::NEG_INFINITY, 0.0),
                LpOp::Eq => (0.0, 0.0),
            };
            lower[n + i] = lo;
            upper[n + i] = hi;
        }

        let mut status = vec![ColStatus::AtLower; total];
        for j in 0..n {
            status[j] = if p.lower[j].is_finite() {
                ColStatus::AtLower
            } else if p.upper[j].is_finite() {
                ColStatus::AtUpper
            } else {
                ColStatus::Free
            };
        }

        let mut t = Self {
            m,
            n,
            a,
            rhs,
            lower,
            upper,
            status,
            basis: vec![0; m],
            binv: vec![0.0; m * m],
            xb: vec![0.0; m],
            art_sign: vec![1.0; m],
            art_used: vec![false; m],
            pivots_since_refactor: 0,
        };

        // Initial basis: slack where the slack value is in range, otherwise an
        // artificial carrying the residual.
        for i in 0..t.m {
            let mut s = t.rhs[i];
            for j in 0..t.n {
                let v = t.nb_value(j);
                if v != 0.0 {
                    s -= t.a[j * t.m + i] * v;
                }
            }
            let slack = t.n + i;
            let art = t.n + t.m + i;
            if s >= t.lower[slack] - FEAS_TOL && s <= t.upper[slack] + FEAS_TOL {
                t.basis[i] = slack;
                t.status[slack] = ColStatus::Basic;
                t.xb[i] = s.clamp(t.lower[slack].max(f64::NEG_INFINITY), t.upper[slack]);
                t.binv[i * t.m + i] = 1.0;
                // Lock the unused artificial.
                t.lower[art] = 0.0;
                t.upper[art] = 0.0;
            } else {
                let pinned = if s < t.lower[slack] {
                    t.lower[slack]
                } else {
                    t.upper[slack]
                };
                t.status[slack] = if pinned == t.lower[slack] {
                    ColStatus::AtLower
                } else {
                    ColStatus::AtUpper
                };
                let resid = s - pinned;
                t.art_sign[i] = if resid >= 0.0 { 1.0 } else { -1.0 };
                t.art_used[i] = true;
                t.lower[art] = 0.0;
                t.upper[art] = f64::INFINITY;
                t.basis[i] = art;
                t.status[art] = ColStatus::Basic;
                t.xb[i] = resid.abs();
                t.binv[i * t.m + i] = t.art_sign[i];
            }
        }
        Ok(t)
    }

    fn nb_value(&self, j: usize) -> f64 {
        match self.status[j] {
            ColStatus::AtLower => self.lower[j],
            ColStatus::AtUpper => self.upper[j],
            ColStatus::Free => 0.0,
            ColStatus::Basic => unreachable!("basic column has no nonbasic value"),
        }
    }

    fn col_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            let col = &self.a[j * self.m..(j + 1) * self.m];
            col.iter().zip(y).map(|(a, b)| a * b).sum()
        } else if j < self.n + self.m {
            y[j - self.n]
        } else {
            self.art_sign[j - self.n - self.m] * y[j - self.n - self.m]
        }
    }

    fn binv_col(&self, w: &mut [f64], j: usize) {
        let m = self.m;
        if j < self.n {
            let col = &self.a[j * m..(j + 1) * m];
            for i in 0..m {
                let row = &self.binv[i * m..(i + 1) * m];
                w[i] = row.iter().zip(col).map(|(a, b)| a * b).sum();
            }
        } else if j < self.n + m {
            let r = j - self.n;
            for i in 0..m {
                w[i] = self.binv[i * m + r];
            }
        } else {
            let r = j - self.n - m;
            let s = self.art_sign[r];
            for i in 0..m {
                w[i] = s * self.binv[i * m + r];
            }
        }
    }

    fn objective_row(&self, c: &[f64], j: usize) -> f64 {
        if j < c.len() {
            c[j]
        } else {
            0.0
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut b = nalgebra::DMatrix::<f64>::zeros(m, m);
        for (pos, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                for i in 0..m {
                    b[(i, pos)] = self.a[j * m + i];
                }
            } else if j < self.n + m {
                b[(j - self.n, pos)] = 1.0;
            } else {
                b[(j - self.n - m, pos)] = self.art_sign[j - self.n - m];
            }
        }
        let inv = match b.clone().full_piv_lu().try_inverse() {
            Some(inv) => inv,
            None => {
                if std::env::var("LP_DEBUG").is_ok() {
                    let mut sorted = self.basis.clone();
                    sorted.sort_unstable();
                    let dups = sorted.windows(2).filter(|w| w[0] == w[1]).count();
                    let sv = b.clone().svd(false, false);
                    let smax = sv.singular_values.iter().cloned().fold(0.0f64, f64::max);
                    let smin = sv.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
                    eprintln!(
                        "singular basis: m={} dup_cols={} smax={smax:.3e} smin={smin:.3e}",
                        m, dups
                    );
                }
                return Err(LpError::SingularBasis);
            }
        };
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = inv[(i, k)];
            }
        }
        // Recompute basic values from scratch.
        let mut r = self.rhs.clone();
        for j in 0..self.n + m {
            if self.status[j] == ColStatus::Basic {
                continue;
            }
            let v = self.nb_value(j);
            if v == 0.0 {
                continue;
            }
            if j < self.n {
                for i in 0..m {
                    r[i] -= self.a[j * m + i] * v;
                }
            } else {
                r[j - self.n] -= v;
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&r).map(|(a, b)| a * b).sum();
        }
        self.pivots_since_refactor = 0;
        Ok(())
    }

    /// One simplex iteration under objective `c` (indexed by column id, zero
    /// beyond `c.len()`).
    fn step(&mut self, c: &[f64], bland: bool) -> Result<StepOutcome, LpError> {
        let m = self.m;
        // y' = c_B' B^-1
        let mut y = vec![0.0; m];
        for (pos, &j) in self.basis.iter().enumerate() {
            let cb = self.objective_row(c, j);
            if cb != 0.0 {
                let row = &self.binv[pos * m..(pos + 1) * m];
                for k in 0..m {
                    y[k] += cb * row[k];
                }
            }
        }

        let total = self.n + 2 * m;
        let mut entering: Option<(usize, f64, i8)> = None;
        for j in 0..total {
            match self.status[j] {
                ColStatus::Basic => continue,
                _ => {}
            }
            if self.lower[j] == self.upper[j] {
                continue; // fixed column can never move
            }
            let d = self.objective_row(c, j) - self.col_dot(j, &y);
            let dir: i8 = match self.status[j] {
                ColStatus::AtLower => {
                    if d < -COST_TOL {
                        1
                    } else {
                        continue;
                    }
                }
                ColStatus::AtUpper => {
                    if d > COST_TOL {
                        -1
                    } else {
                        continue;
                    }
                }
                ColStatus::Free => {
                    if d < -COST_TOL {
                        1
                    } else if d > COST_TOL {
                        -1
                    } else {
                        continue;
                    }
                }
                ColStatus::Basic => unreachable!(),
            };
            if bland {
                entering = Some((j, d, dir));
                break;
            }
            match entering {
                Some((_, best, _)) if d.abs() <= best.abs() => {}
                _ => entering = Some((j, d, dir)),
            }
        }

        let (j_in, _, dir) = match entering {
            None => return Ok(StepOutcome::Optimal),
            Some(e) => e,
        };
        let dir = dir as f64;

        let mut w = vec![0.0; m];
        self.binv_col(&mut w, j_in);

        // Two-pass (Harris style) ratio test: the entering variable moves by
        // t >= 0 in direction dir; basic variable at position i changes by
        // -dir * t * w[i]. Pass 1 finds the step limit with a feasibility
        // slack; pass 2 picks the largest pivot among rows within the limit,
        // which keeps the basis well conditioned on degenerate problems.
        let own_span = self.upper[j_in] - self.lower[j_in];
        let ratio = |i: usize, slack: f64| -> Option<(f64, ColStatus)> {
            let delta = -dir * w[i];
            let bcol = self.basis[i];
            if delta < -PIVOT_TOL {
                let lo = self.lower[bcol];
                if !lo.is_finite() {
                    return None;
                }
                Some((((self.xb[i] - lo + slack) / -delta).max(0.0), ColStatus::AtLower))
            } else if delta > PIVOT_TOL {
                let hi = self.upper[bcol];
                if !hi.is_finite() {
                    return None;
                }
                Some((((hi - self.xb[i] + slack) / delta).max(0.0), ColStatus::AtUpper))
            } else {
                None
            }
        };
        let mut t_relaxed = f64::INFINITY;
        for i in 0..m {
            if let Some((t_i, _)) = ratio(i, FEAS_TOL) {
                t_relaxed = t_relaxed.min(t_i);
            }
        }

        if t_relaxed.is_infinite() && !own_span.is_finite() {
            return Err(LpError::Unbounded);
        }

        if t_relaxed.is_infinite() || own_span < t_relaxed {
            // Bound flip of the entering variable.
            let t = own_span;
            for i in 0..m {
                self.xb[i] -= dir * t * w[i];
            }
            self.status[j_in] = match self.status[j_in] {
                ColStatus::AtLower => ColStatus::AtUpper,
                ColStatus::AtUpper => ColStatus::AtLower,
                s => s,
            };
            return Ok(StepOutcome::Pivoted { step: t });
        }

        // Pass 2: largest |w_i| among rows whose strict ratio is within the
        // relaxed limit; ties broken by the smaller basis column id.
        let mut leave: Option<(usize, ColStatus)> = None;
        let mut leave_w: f64 = 0.0;
        let mut t_best = f64::INFINITY;
        for i in 0..m {
            if let Some((t_i, hit)) = ratio(i, 0.0) {
                if t_i <= t_relaxed {
                    let better = match leave {
                        None => true,
                        Some((cur, _)) => {
                            w[i].abs() > leave_w.abs() + TIE_TOL
                                || (w[i].abs() >= leave_w.abs() - TIE_TOL
                                    && self.basis[i] < self.basis[cur])
                        }
                    };
                    if better {
                        leave = Some((i, hit));
                        leave_w = w[i];
                        t_best = t_i;
                    }
                }
            }
        }
        let (r, hit) = leave.expect("the limiting row qualifies in pass 2");
        let t_best = t_best.min(own_span);

        // Fresh factorizations may accept small pivots (they are then exact);
        // drifted ones must not, or the inverse degrades silently.
        let min_pivot = if self.pivots_since_refactor == 0 {
            1e-11
        } else {
            1e-8
        };
        if w[r].abs() < min_pivot {
            return Err(LpError::SingularBasis);
        }

        let enter_val = match self.status[j_in] {
            ColStatus::Free => dir * t_best,
            _ => self.nb_value(j_in) + dir * t_best,
        };
        for i in 0..m {
            self.xb[i] -= dir * t_best * w[i];
        }
        let old = self.basis[r];
        self.status[old] = hit;
        if old >= self.n + m {
            // Artificials never re-enter once they have left the basis.
            self.lower[old] = 0.0;
            self.upper[old] = 0.0;
            self.status[old] = ColStatus::AtLower;
        }
        self.basis[r] = j_in;
        self.status[j_in] = ColStatus::Basic;
        self.xb[r] = enter_val;
        self.update_binv(r, &w)?;
        Ok(StepOutcome::Pivoted { step: t_best })
    }

    fn update_binv(&mut self, r: usize, w: &[f64]) -> Result<(), LpError> {
        let m = self.m;
        let piv = w[r];
        if piv.abs() < 1e-12 {
            return Err(LpError::SingularBasis);
        }
        let pivot_row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = w[i] / piv;
            if f != 0.0 {
                let row = &mut self.binv[i * m..(i + 1) * m];
                for k in 0..m {
                    row[k] -= f * pivot_row[k];
                }
            }
        }
        let row = &mut self.binv[r * m..(r + 1) * m];
        for k in 0..m {
            row[k] = pivot_row[k] / piv;
        }
        self.pivots_since_refactor += 1;
        Ok(())
    }

    fn run(&mut self, c: &[f64], force_bland: bool) -> Result<(), LpError> {
        let cap = 2000 + 60 * (self.m + self.n);
        let mut stall = 0usize;
        let mut singular = 0usize;
        let mut bland = force_bland;
        for _ in 0..cap {
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            match self.step(c, bland) {
                Ok(StepOutcome::Optimal) => return Ok(()),
                Ok(StepOutcome::Pivoted { step }) => {
                    if step <= TIE_TOL {
                        stall += 1;
                        if stall > STALL_LIMIT {
                            bland = true;
                        }
                    } else {
                        stall = 0;
                        bland = force_bland;
                    }
                }
                Err(LpError::SingularBasis) => {
                    // Rebuild the inverse from scratch and retry; escalate to
                    // Bland's rule when the same spot keeps failing.
                    singular += 1;
                    if singular > 8 {
                        return Err(LpError::SingularBasis);
                    }
                    if singular > 2 {
                        bland = true;
                    }
                    self.refactor()?;
                }
                Err(e) => return Err(e),
            }
        }
        Err(LpError::IterationLimit)
    }

    fn phase1(&mut self, force_bland: bool) -> Result<(), LpError> {
        if !self.art_used.iter().any(|&u| u) {
            return Ok(());
        }
        let mut c = vec![0.0; self.n + 2 * self.m];
        for i in 0..self.m {
            if self.art_used[i] {
                c[self.n + self.m + i] = 1.0;
            }
        }
        self.run(&c, force_bland)?;
        let infeas: f64 = self
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &j)| j >= self.n + self.m)
            .map(|(pos, _)| self.xb[pos].max(0.0))
            .sum();
        let tol = FEAS_TOL * (self.m as f64).sqrt().max(1.0);
        if infeas > tol {
            return Err(LpError::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for pos in 0..self.m {
            if self.basis[pos] < self.n + self.m {
                continue;
            }
            let mut w = vec![0.0; self.m];
            let mut pivoted = false;
            for j in 0..self.n + self.m {
                if self.status[j] == ColStatus::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                self.binv_col(&mut w, j);
                if w[pos].abs() > 1e-7 {
                    let old = self.basis[pos];
                    self.status[old] = ColStatus::AtLower;
                    self.basis[pos] = j;
                    let val = self.nb_value(j);
                    self.status[j] = ColStatus::Basic;
                    self.xb[pos] = val;
                    self.update_binv(pos, &w)?;
                    self.refactor()?;
                    pivoted = true;
                    break;
                }
            }
            if !pivoted {
                // Redundant row; pin the artificial at zero.
                let j = self.basis[pos];
                self.lower[j] = 0.0;
                self.upper[j] = 0.0;
                self.xb[pos] = 0.0;
            }
        }
        // Lock every artificial at zero for phase 2.
        for i in 0..self.m {
            let j = self.n + self.m + i;
            self.lower[j] = 0.0;
            if self.status[j] != ColStatus::Basic {
                self.upper[j] = 0.0;
                self.status[j] = ColStatus::AtLower;
            } else {
                self.upper[j] = 0.0;
            }
        }
        Ok(())
    }

    fn phase2(&mut self, c: &[f64], force_bland: bool) -> Result<(), LpError> {
        self.run(c, force_bland)
    }

    fn extract(&self, c: &[f64]) -> LpSolution {
        let mut x = vec![0.0; self.n];
        for j in 0..self.n {
            x[j] = match self.status[j] {
                ColStatus::Basic => 0.0,
                _ => self.nb_value(j),
            };
        }
        for (pos, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                x[j] = self.xb[pos];
            }
        }
        let objective = x.iter().zip(c).map(|(a, b)| a * b).sum();
        LpSolution { x, objective }
    }
}
