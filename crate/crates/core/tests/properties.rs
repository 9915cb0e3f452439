use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tradeoff_core::linalg::{frob_sq, sym_eigenvalues};
use tradeoff_core::model::sample_ensemble;
use tradeoff_core::regimes::{eval_sgd_limit, sample_init, FittedParams};
use tradeoff_core::theory::tradeoff_residual;
use tradeoff_core::*;

fn random_truth(d: usize, eig: &[f64], seed: u64) -> GroundTruth {
    let spec: Vec<f64> = (0..d).map(|i| eig[i % eig.len()]).collect();
    GroundTruth::from_profile(d, &EigenProfile::Explicit(spec), 1.0, Some(seed)).unwrap()
}

fn ensemble(d: usize, m: usize, seed: u64) -> NeuronEnsemble {
    let cov = Arc::new(CovarianceDescriptor::isotropic(d).unwrap());
    sample_ensemble(&cov, m, seed).unwrap()
}

fn quadratic_problem(d: usize, m: usize, seed: u64) -> (GroundTruth, RfProblem) {
    let q = GaussianIntegrator::default();
    let prof = ActivationProfile::builtin(Builtin::Quadratic, &q).unwrap();
    let truth = random_truth(d, &[1.0, 0.5, 0.0, 2.0], seed);
    let ens = ensemble(d, m, seed);
    let p = RfProblem::new(&ens, &prof, &truth, &q).unwrap();
    (truth, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sgd_limit_sums_to_one(
        eig in prop::collection::vec(0.0f64..3.0, 1..6),
        d in 10usize..40,
        m in 1usize..60,
        seed in 0u64..1000,
    ) {
        prop_assume!(eig.iter().any(|&e| e > 0.0));
        let truth = random_truth(d, &eig, seed);
        let e = eval_sgd_limit(&truth, m).unwrap();
        let r = tradeoff_residual(Regime::SgdLimit, None, None, e.egen, e.erob).unwrap();
        prop_assert!(r.abs() < 1e-12);
        prop_assert!(e.egen >= 0.0 && e.erob >= 0.0);
        // The reported fit agrees with its own error.
        if let FittedParams::Quadratic { matrix } = &e.params {
            let resid = frob_sq(&(truth.matrix() - matrix)) / truth.frob_sq();
            prop_assert!((resid - e.egen).abs() < 1e-10);
        }
    }

    #[test]
    fn shrinkage_spectrum_in_unit_interval_and_monotone(
        d in 10usize..24,
        m in 4usize..40,
        seed in 0u64..500,
        l1 in 1e-3f64..10.0,
        factor in 1.01f64..10.0,
    ) {
        let (_, p) = quadratic_problem(d, m, seed);
        let u = &p.population().u;
        let e1 = sym_eigenvalues(&RidgeResolvent::new(u, l1).unwrap().shrinkage());
        let e2 = sym_eigenvalues(&RidgeResolvent::new(u, l1 * factor).unwrap().shrinkage());
        for (a, b) in e1.iter().zip(&e2) {
            prop_assert!(*a >= -1e-12 && *a <= 1.0 + 1e-12);
            prop_assert!(*b >= *a - 1e-10, "eigenvalues not monotone: {a} -> {b}");
        }
    }

    #[test]
    fn rf_fit_is_a_minimizer(
        d in 10usize..20,
        m in 3usize..30,
        seed in 0u64..500,
        lambda in prop::sample::select(vec![0.0, 0.1, 1.0]),
        dir_seed in 0u64..100,
    ) {
        let (truth, p) = quadratic_problem(d, m, seed);
        let fit = p.fit_rf(lambda).unwrap();
        let FittedParams::OutputWeights { z } = &fit.params else { panic!("expected output weights") };
        let dir = sample_init(m, dir_seed);
        // Ridge objective: E(f - f*)^2 + lambda |z|^2 = 2||B||^2 egen + lambda |z|^2.
        let obj = |z: &DVector<f64>| 2.0 * truth.frob_sq() * p.metrics(z).0 + lambda * z.norm_squared();
        let base = obj(z);
        for eps in [1e-3, -1e-3, 0.1, -0.1] {
            let moved = z + &dir * eps;
            prop_assert!(obj(&moved) >= base - 1e-9 * base.abs().max(1.0));
        }
    }

    #[test]
    fn nt_complement_identity_matches_explicit_projector(
        d in 8usize..24,
        frac in 0.1f64..0.95,
        seed in 0u64..500,
    ) {
        let m = ((d as f64 * frac) as usize).max(1);
        let truth = random_truth(d, &[1.0, 0.5, 0.3, 2.0], seed);
        let ens = ensemble(d, m, seed + 1);
        let basis = NtBasis::new(&ens, &truth).unwrap();
        let p1 = basis.p1();
        let q = DMatrix::identity(d, d) - p1 * p1.transpose();
        let qbq = &q * truth.matrix() * &q;
        let nt = basis.fit_nt(NtFit::GeneralizationOptimal);
        prop_assert!((nt.egen - frob_sq(&qbq) / truth.frob_sq()).abs() < 1e-10);
        // Both fits report the error of the matrix they return.
        for fit in [NtFit::GeneralizationOptimal, NtFit::HalfProjection] {
            let e = basis.fit_nt(fit);
            let FittedParams::Quadratic { matrix } = &e.params else { panic!() };
            let g = frob_sq(&(truth.matrix() - matrix)) / truth.frob_sq();
            let r = frob_sq(matrix) / truth.frob_sq();
            prop_assert!((e.egen - g).abs() < 1e-10, "{fit:?} egen {} vs {}", e.egen, g);
            prop_assert!((e.erob - r).abs() < 1e-10, "{fit:?} erob {} vs {}", e.erob, r);
        }
    }

    #[test]
    fn nt_optimal_fit_beats_tangent_perturbations(
        d in 8usize..20,
        frac in 0.1f64..0.9,
        seed in 0u64..500,
        eps in -0.5f64..0.5,
    ) {
        let m = ((d as f64 * frac) as usize).max(1);
        let truth = random_truth(d, &[1.0, 0.2, 3.0], seed);
        let ens = ensemble(d, m, seed + 7);
        let basis = NtBasis::new(&ens, &truth).unwrap();
        let e = basis.fit_nt(NtFit::GeneralizationOptimal);
        let FittedParams::Quadratic { matrix } = &e.params else { panic!() };
        let w = ens.weights();
        let a = DMatrix::from_fn(m, d, |i, j| ((i * 31 + j * 17 + seed as usize) % 7) as f64 - 3.0);
        let dir = w.transpose() * &a + a.transpose() * w;
        let moved = matrix + dir * eps;
        let g = frob_sq(&(truth.matrix() - moved)) / truth.frob_sq();
        prop_assert!(g >= e.egen - 1e-10);
        let half = basis.fit_nt(NtFit::HalfProjection);
        prop_assert!(half.egen >= e.egen - 1e-12);
    }

    #[test]
    fn ntl_fast_path_matches_materialized_fit(
        d in 8usize..24,
        frac in 0.1f64..1.5,
        seed in 0u64..500,
        init_seed in 0u64..500,
    ) {
        let m = ((d as f64 * frac) as usize).max(1);
        let truth = random_truth(d, &[1.0, 0.0, 0.4], seed);
        let ens = ensemble(d, m, seed + 3);
        let basis = NtBasis::new(&ens, &truth).unwrap();
        let a0 = sample_init(m, init_seed);
        for fit in [NtFit::GeneralizationOptimal, NtFit::HalfProjection] {
            let (g, r) = basis.ntl_metrics(&a0, fit);
            let full = basis.fit_ntl_weights(&a0, fit);
            prop_assert!((g - full.egen).abs() < 1e-9 * full.egen.max(1.0));
            prop_assert!((r - full.erob).abs() < 1e-9 * full.erob.max(1.0));
            let FittedParams::Lazy { correction, init } = &full.params else { panic!() };
            let total = correction + init;
            let direct = frob_sq(&(truth.matrix() - total)) / truth.frob_sq();
            prop_assert!((direct - full.egen).abs() < 1e-9 * direct.max(1.0));
        }
        // The initialization term cannot change the optimal residual.
        let nt = basis.fit_nt(NtFit::GeneralizationOptimal);
        let (g, _) = basis.ntl_metrics(&a0, NtFit::GeneralizationOptimal);
        prop_assert!((g - nt.egen).abs() <= 1e-10 * nt.egen.max(1e-300) || (g - nt.egen).abs() < 1e-12);
    }

    #[test]
    fn ensemble_sampling_is_deterministic(d in 10usize..30, m in 1usize..30, seed in any::<u64>()) {
        let a = ensemble(d, m, seed);
        let b = ensemble(d, m, seed);
        prop_assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn population_gram_is_psd(d in 10usize..20, m in 2usize..30, seed in 0u64..200) {
        let (_, p) = quadratic_problem(d, m, seed);
        let ev = sym_eigenvalues(&p.population().u);
        let top = ev[0];
        prop_assert!(ev.iter().all(|&e| e >= -1e-10 * top));
        let cv = sym_eigenvalues(&p.population().c);
        prop_assert!(cv.iter().all(|&e| e >= -1e-10 * cv[0].max(1.0)));
    }
}

#[test]
fn covariance_rejects_wrong_trace_and_indefinite_input() {
    let mut g = DMatrix::identity(10, 10) / 5.0;
    assert!(matches!(CovarianceDescriptor::from_matrix(g.clone()), Err(Error::TraceNotOne(_))));
    g[(0, 0)] = -0.5;
    g[(1, 1)] = 0.1 + 0.5 + 0.2;
    g /= g.trace();
    assert!(matches!(CovarianceDescriptor::from_matrix(g), Err(Error::NotPsd(_))));
}
