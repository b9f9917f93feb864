use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use paired_adjust::experiment::{CovariateBlocks, Pair};
use paired_adjust::ols::{intercept_variance_classical, least_squares};
use paired_adjust::{
    build_design, estimate_classical, estimate_r1, estimate_r2, generate_indexed, randomize,
    reveal, DesignMatrices, Domain, PairedExperiment, Setting, Substream, TransformSpec,
};
use proptest::prelude::*;

fn observed(n: usize, seed: u64) -> PairedExperiment {
    let sample = generate_indexed(n, Setting::Nonparallel, seed, 0);
    let v = randomize(n, &mut Substream::new(seed, Domain::Assignment, 0));
    reveal(&sample, &v).unwrap().0
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn m_columns_sum_to_zero(n in 30usize..80, seed in any::<u64>(), degree in 1u32..3) {
        let exp = observed(n, seed);
        let dm = build_design(&exp, &TransformSpec::identity(), &TransformSpec::power(degree)).unwrap();
        for col in dm.m().column_iter() {
            prop_assert!(col.sum().abs() <= 1e-10 * n as f64 * col.amax().max(1.0));
        }
    }

    #[test]
    fn listing_order_does_not_matter(n in 12usize..60, seed in any::<u64>(), flips in prop::collection::vec(any::<bool>(), 60)) {
        let exp = observed(n, seed);
        let swapped: Vec<Pair> = exp
            .pairs()
            .iter()
            .zip(&flips)
            .map(|(p, &flip)| {
                let mut p = p.clone();
                if flip {
                    p.units.swap(0, 1);
                }
                p
            })
            .collect();
        let other = PairedExperiment::new(swapped).unwrap();
        let id = TransformSpec::identity();
        let a = build_design(&exp, &id, &id).unwrap();
        let b = build_design(&other, &id, &id).unwrap();
        prop_assert_eq!(a.vd(), b.vd());
        prop_assert_eq!(a.y(), b.y());
        prop_assert_eq!(a.m(), b.m());
        let (ra, rb) = (estimate_r2(&a).unwrap(), estimate_r2(&b).unwrap());
        prop_assert_eq!(ra.tau_hat, rb.tau_hat);
        prop_assert_eq!(ra.s2, rb.s2);
    }

    #[test]
    fn intercept_is_affine_equivariant(n in 10usize..50, seed in any::<u64>(), a in 0.1f64..10.0, b in -50.0f64..50.0) {
        let exp = observed(n, seed);
        let id = TransformSpec::identity();
        let dm = build_design(&exp, &id, &id).unwrap();
        let x = dm.adjusted_regressors();
        let fit = least_squares(&x, dm.y(), true).unwrap();
        let y2: DVector<f64> = dm.y().map(|y| a * y + b);
        let fit2 = least_squares(&x, &y2, true).unwrap();
        prop_assert!(close(fit2.coefficients[0], a * fit.coefficients[0] + b, 1e-8));
        let v1 = intercept_variance_classical(&fit, &x).unwrap();
        let v2 = intercept_variance_classical(&fit2, &x).unwrap();
        prop_assert!((v2 - a * a * v1).abs() <= 1e-8 * v2.max(1e-300));
    }

    #[test]
    fn empty_m_block_reduces_r2_to_r1(n in 8usize..60, seed in any::<u64>()) {
        let exp = observed(n, seed);
        let none = TransformSpec::Identity { columns: Some(vec![]) };
        let dm = build_design(&exp, &TransformSpec::identity(), &none).unwrap();
        let (r1, r2) = (estimate_r1(&dm).unwrap(), estimate_r2(&dm).unwrap());
        prop_assert_eq!(r1.tau_hat, r2.tau_hat);
        prop_assert_eq!(r1.s2, r2.s2);
        prop_assert_eq!(r1.dof, r2.dof);
    }

    #[test]
    fn classical_estimate_is_translation_equivariant(ys in prop::collection::vec(-1e3f64..1e3, 2..40), c in -1e3f64..1e3) {
        let a = estimate_classical(&ys).unwrap();
        let shifted: Vec<f64> = ys.iter().map(|y| y + c).collect();
        let b = estimate_classical(&shifted).unwrap();
        prop_assert!(close(b.tau_hat, a.tau_hat + c, 1e-10));
        prop_assert!((b.s2 - a.s2).abs() <= 1e-8 * a.s2.max(1e-6));
    }

    #[test]
    fn residuals_are_orthogonal_and_leverages_sum_to_rank(n in 12usize..60, seed in any::<u64>()) {
        let exp = observed(n, seed);
        let id = TransformSpec::identity();
        let dm = build_design(&exp, &id, &id).unwrap();
        let x = dm.adjusted_regressors();
        let fit = least_squares(&x, dm.y(), true).unwrap();
        let scale = dm.y().norm();
        prop_assert!(fit.residuals.sum().abs() <= 1e-8 * scale * (n as f64).sqrt());
        for col in x.column_iter() {
            prop_assert!(col.dot(&fit.residuals).abs() <= 1e-8 * scale * col.norm());
        }
        prop_assert!((fit.leverages().sum() - 9.0).abs() <= 1e-8);
    }
}

#[test]
fn build_design_is_bitwise_reproducible() {
    let exp = observed(40, 3);
    let f = TransformSpec::power(2);
    let g = TransformSpec::identity();
    let a = build_design(&exp, &f, &g).unwrap();
    let b = build_design(&exp, &f, &g).unwrap();
    assert_eq!(a.vd(), b.vd());
    assert_eq!(a.m(), b.m());
    assert_eq!(a.y(), b.y());
}

#[test]
fn centered_regressor_gives_the_mean() {
    // d = (1, -1), V = (1, 1): VD sums to zero, so the intercept is mean(Y).
    let blocks = CovariateBlocks {
        d: DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]),
        m: DMatrix::zeros(4, 0),
        d_labels: vec!["x1".into()],
        m_labels: vec![],
    };
    let y = vec![1.0, 4.0, 2.0, 9.0];
    let dm = DesignMatrices::assemble(Arc::new(blocks), vec![1.0; 4], y.clone()).unwrap();
    let r1 = estimate_r1(&dm).unwrap();
    assert!(close(r1.tau_hat, y.iter().sum::<f64>() / 4.0, 1e-12));
}
