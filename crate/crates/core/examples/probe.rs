//! Scratch probe: sieve frontier convergence and runtimes (debugging).

use std::time::Instant;

use falsify_iv_core::het_continuous::{
    approx_ff_fas_cont, is_falsified_cont, sieve_table_from_joint, PiecewiseDensity, SieveSpec,
    TreatmentInstrumentJoint,
};

fn embedded_fixture(spec: SieveSpec) -> falsify_iv_core::ConditionalDensityTable {
    let p_y1_given_xz = |x: usize, z: usize| -> f64 {
        match (x, z) {
            (1, 0) => 0.1 / 0.5,
            (0, 0) => 0.2 / 0.5,
            (1, 1) => 0.7 / 0.8,
            (0, 1) => 0.1 / 0.2,
            _ => unreachable!(),
        }
    };
    let joint = TreatmentInstrumentJoint::new(
        1,
        vec![0.5 * 0.5, 0.5 * 0.2],
        vec![0.5 * 0.5, 0.5 * 0.8],
    )
    .unwrap();
    sieve_table_from_joint(
        move |y, x, m| {
            let p1 = p_y1_given_xz(x, m & 1);
            PiecewiseDensity::new(vec![0.0, 0.5, 1.0], vec![2.0 * (1.0 - p1), 2.0 * p1])
                .unwrap()
                .eval(y)
        },
        &joint,
        spec,
    )
    .unwrap()
}

fn main() {
    let truth = 1.0 / 14.0;
    for m in [20usize, 30, 40] {
        let spec = SieveSpec::new(m, 201).unwrap();
        let table = embedded_fixture(spec);
        let t0 = Instant::now();
        // Fine bisection of the flip point for diagnostics.
        let mut lo = 0.0f64;
        let mut hi = 0.5f64;
        assert!(is_falsified_cont(&table, &[lo]).unwrap());
        assert!(!is_falsified_cont(&table, &[hi]).unwrap());
        while hi - lo > 1e-4 {
            let mid = 0.5 * (lo + hi);
            if is_falsified_cont(&table, &[mid]).unwrap() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        println!(
            "M = {m}: flip point ~ {:.5} (truth {truth:.5}, err {:+.5}), bisection took {:?}",
            hi,
            hi - truth,
            t0.elapsed()
        );
        let t1 = Instant::now();
        let (frontier, fas) = approx_ff_fas_cont(&table, 0.01, |y| y, |y| -y).unwrap();
        println!(
            "  frontier = {frontier:?} fas = [{:.4}, {:.4}] scan took {:?}",
            fas.0,
            fas.1,
            t1.elapsed()
        );
    }
}
