//! Wolfe's minimum-norm-point method over a convex set given by a linear
//! minimization oracle.
//!
//! Used for the Euclidean distance between two convex polytopes P and Q: the
//! distance equals the norm of the minimum-norm point of the Minkowski
//! difference P - Q, and a linear minimization oracle for P - Q is just one
//! LP over each operand. The corral bookkeeping follows Wolfe (1976); the
//! duality gap `x'x - x's` certifies optimality of the current iterate.

use nalgebra::{DMatrix, DVector};

use super::GeometryError;

const DROP_TOL: f64 = 1e-12;
const SAME_POINT_TOL: f64 = 1e-13;

pub(crate) fn min_norm_point<F>(
    dim: usize,
    mut lmo: F,
    rel_tol: f64,
    max_iter: usize,
) -> Result<f64, GeometryError>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, GeometryError>,
{
    let start = lmo(&DVector::from_element(dim, 1.0))?;
    let mut corral: Vec<DVector<f64>> = vec![start.clone()];
    let mut weights: Vec<f64> = vec![1.0];
    let mut x = start;

    for _ in 0..max_iter {
        let xx = x.dot(&x);
        if xx <= 1e-30 {
            return Ok(0.0);
        }
        let s = lmo(&x)?;
        let gap = xx - x.dot(&s);
        if gap <= rel_tol * xx.max(1e-30) {
            return Ok(xx.sqrt());
        }
        if corral
            .iter()
            .any(|p| (p - &s).amax() <= SAME_POINT_TOL * (1.0 + s.amax()))
        {
            // The oracle returned a point already in the corral: no further
            // progress is possible at this precision.
            return Ok(xx.sqrt());
        }
        corral.push(s);
        weights.push(0.0);

        // Minor cycle: move toward the affine minimizer over the corral,
        // dropping points whose weight would turn negative.
        let max_minor = 3 * corral.len() + 10;
        for _ in 0..max_minor {
            let alpha = affine_min_norm(&corral)?;
            if alpha.iter().all(|&a| a >= -DROP_TOL) {
                weights = alpha;
                prune(&mut corral, &mut weights);
                break;
            }
            // Largest step toward alpha keeping weights nonnegative.
            let mut theta = 1.0f64;
            for (w, a) in weights.iter().zip(&alpha) {
                if *a < *w {
                    theta = theta.min(w / (w - a));
                }
            }
            for (w, a) in weights.iter_mut().zip(&alpha) {
                *w = (1.0 - theta) * *w + theta * a;
            }
            prune(&mut corral, &mut weights);
        }
        x = combine(&corral, &weights);
    }
    // Iteration cap reached; report the certified value we have.
    Ok(x.norm())
}

fn prune(corral: &mut Vec<DVector<f64>>, weights: &mut Vec<f64>) {
    let mut i = 0;
    while i < weights.len() {
        if weights[i] <= DROP_TOL && weights.len() > 1 {
            weights.remove(i);
            corral.remove(i);
        } else {
            i += 1;
        }
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for w in weights.iter_mut() {
            *w /= total;
        }
    }
}

fn combine(corral: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(corral[0].len());
    for (p, w) in corral.iter().zip(weights) {
        x.axpy(*w, p, 1.0);
    }
    x
}

/// Solves min ||sum_i a_i p_i||^2 subject to sum_i a_i = 1 with free signs,
/// via the bordered Gram system. Rank-deficient corrals are handled with an
/// SVD least-squares solve.
fn affine_min_norm(corral: &[DVector<f64>]) -> Result<Vec<f64>, GeometryError> {
    let k = corral.len();
    let mut bordered = DMatrix::<f64>::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in i..k {
            let g = corral[i].dot(&corral[j]);
            bordered[(i, j)] = g;
            bordered[(j, i)] = g;
        }
        bordered[(i, k)] = 1.0;
        bordered[(k, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let svd = bordered.svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-13)
        .map_err(|e| GeometryError::Numerical(e.to_string()))?;
    let mut alpha: Vec<f64> = sol.iter().take(k).copied().collect();
    let total: f64 = alpha.iter().sum();
    let correction = (1.0 - total) / k as f64;
    for a in alpha.iter_mut() {
        *a += correction;
    }
    Ok(alpha)
}
