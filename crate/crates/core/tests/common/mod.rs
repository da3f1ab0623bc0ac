//! Shared fixtures and helpers for the integration suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use falsify_iv_core::het_continuous::{
    sieve_table_from_joint, ConditionalDensityTable, PiecewiseDensity, SieveSpec,
    TreatmentInstrumentJoint,
};
use falsify_iv_core::{DiscreteJoint, ReducedMoments};

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Var(Z) = I_2, psi = (1, 5), Pi = (1, 1): two equally strong instruments
/// with just-identified estimands 1 and 5.
pub fn fixture_l2() -> ReducedMoments {
    ReducedMoments {
        psi: DVector::from_column_slice(&[1.0, 5.0]),
        pi: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        var_z: DMatrix::identity(2, 2),
        controls_absorbed: false,
    }
}

/// Two treatments, three instruments: Pi rows (1,0), (0,1), (1,1) and
/// psi = (0, 0, 1).
pub fn fixture_k2l3() -> ReducedMoments {
    ReducedMoments {
        psi: DVector::from_column_slice(&[0.0, 0.0, 1.0]),
        pi: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
        var_z: DMatrix::identity(3, 3),
        controls_absorbed: false,
    }
}

/// Single binary instrument with p_Z = 0.5; P(Y,X | Z=0) = (.1,.4,.2,.3) and
/// P(Y,X | Z=1) = (.7,.1,.1,.1) over (1,1),(0,1),(1,0),(0,0).
pub fn fixture_b1() -> DiscreteJoint {
    let mut probs = vec![0.0; 8];
    let mut set = |y: usize, x: usize, z: usize, v: f64| {
        probs[(y * 2 + x) * 2 + z] = v * 0.5;
    };
    set(1, 1, 0, 0.1);
    set(0, 1, 0, 0.4);
    set(1, 0, 0, 0.2);
    set(0, 0, 0, 0.3);
    set(1, 1, 1, 0.7);
    set(0, 1, 1, 0.1);
    set(1, 0, 1, 0.1);
    set(0, 0, 1, 0.1);
    DiscreteJoint::new(vec![vec![0.0, 1.0]], probs).unwrap()
}

/// Conditional cell probabilities of a single-binary-instrument joint:
/// (P(Y=1 | X=x, Z=z), P(X=x | Z=z)).
pub fn cell_probs(joint: &DiscreteJoint, x: usize, z: usize) -> (f64, f64) {
    let px = joint.p_x_given_zl(x, 0, z);
    let py1 = joint.p_yx_given_zl(1, x, 0, z) / px;
    (py1, px)
}

/// Two-piece embedding of a binary single-instrument joint: the Y = 1 mass
/// becomes a uniform density on [0.5, 1], the Y = 0 mass on [0, 0.5).
pub fn step_embedding(joint: &DiscreteJoint, spec: SieveSpec) -> ConditionalDensityTable {
    let p: Vec<f64> = (0..4)
        .map(|i| {
            let (x, z) = (i % 2, i / 2);
            cell_probs(joint, x, z).0
        })
        .collect();
    let ti = TreatmentInstrumentJoint::new(
        1,
        vec![joint.p_x_and_z(0, 0), joint.p_x_and_z(0, 1)],
        vec![joint.p_x_and_z(1, 0), joint.p_x_and_z(1, 1)],
    )
    .unwrap();
    sieve_table_from_joint(
        move |y, x, m| {
            let p1 = p[(m & 1) * 2 + x];
            PiecewiseDensity::new(vec![0.0, 0.5, 1.0], vec![2.0 * (1.0 - p1), 2.0 * p1])
                .unwrap()
                .eval(y)
        },
        &ti,
        spec,
    )
    .unwrap()
}

/// A random discrete joint with guaranteed overlap: random cells mixed with
/// a uniform table.
pub fn random_joint(rng: &mut ChaCha8Rng, l: usize) -> DiscreteJoint {
    let s = 1usize << l;
    let mut probs: Vec<f64> = (0..4 * s).map(|_| rng.random::<f64>()).collect();
    let total: f64 = probs.iter().sum();
    let unif = 1.0 / (4 * s) as f64;
    for p in probs.iter_mut() {
        *p = 0.85 * (*p / total) + 0.15 * unif;
    }
    let supports = vec![vec![0.0, 1.0]; l];
    DiscreteJoint::new(supports, probs).unwrap()
}
