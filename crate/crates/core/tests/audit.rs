use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use tradeoff_core::audit::*;
use tradeoff_core::rng;
use tradeoff_core::*;

/// Hides the quadratic structure so the increment falls back to ascent.
struct Opaque<'a>(&'a QuadraticPredictor);

impl Predictor for Opaque<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.0.value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.0.gradient(x)
    }
}

fn random_symmetric(d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, 99);
    let a = rng::normal_matrix(d, d, &mut r);
    (&a + a.transpose()) / (2.0 * (d as f64).sqrt())
}

#[test]
fn exact_increment_matches_brute_force_in_the_plane() {
    for seed in 0..6 {
        let m = random_symmetric(2, seed);
        let f = QuadraticPredictor::new(m, 0.3).unwrap();
        let mut r = rng::stream(seed, 7);
        let x = rng::normal_vector(2, &mut r);
        for delta in [0.05, 0.5, 2.0] {
            let exact = adversarial_increment(&f, &x, delta, &IncrementOptions::default()).unwrap();
            assert!(exact.exact);
            let f0 = f.value(&x);
            let mut best = 0.0_f64;
            let (nr, nt) = (400, 720);
            for i in 0..=nr {
                let rad = delta * i as f64 / nr as f64;
                for j in 0..nt {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / nt as f64;
                    let v = DVector::from_vec(vec![rad * th.cos(), rad * th.sin()]);
                    best = best.max((f.value(&(&x + v)) - f0).abs());
                }
            }
            // The grid is a lower bound within O(h^2) of the optimum.
            assert!(exact.value >= best - 1e-12, "seed {seed} delta {delta}: {} < {best}", exact.value);
            assert!(exact.value - best < 1e-4 * (1.0 + best), "seed {seed} delta {delta}: {} vs {best}", exact.value);
        }
    }
}

#[test]
fn exact_increment_matches_projected_ascent() {
    let opts = IncrementOptions { restarts: 16, steps: 2000, seed: 1 };
    for (d, seed) in [(5, 0), (10, 1), (20, 2), (20, 3)] {
        let f = QuadraticPredictor::new(random_symmetric(d, seed), 0.0).unwrap();
        let mut r = rng::stream(seed, 8);
        for delta in [0.1, 1.0] {
            let x = rng::normal_vector(d, &mut r);
            let exact = adversarial_increment(&f, &x, delta, &opts).unwrap();
            let pga = adversarial_increment(&Opaque(&f), &x, delta, &opts).unwrap();
            assert!(!pga.exact);
            assert!(pga.value <= exact.value + 1e-9, "ascent exceeded the exact optimum");
            assert!((exact.value - pga.value).abs() < 1e-6, "d {d} delta {delta}: {} vs {}", exact.value, pga.value);
        }
    }
}

#[test]
fn dirichlet_energy_of_target_is_four_frobenius() {
    let d = 60;
    for (i, prof) in [EigenProfile::Flat, EigenProfile::RankFlat { rank: 10 }, EigenProfile::PowerLaw { exponent: 1.5 }]
        .iter()
        .enumerate()
    {
        let truth = GroundTruth::from_profile(d, prof, 1.0, Some(i as u64)).unwrap();
        let f = QuadraticPredictor::from_truth(&truth);
        let e = dirichlet_energy(&f, 40_000, i as u64, 2).unwrap();
        let target = 4.0 * truth.frob_sq();
        assert!((e.mean - target).abs() < 5.0 * e.se, "{prof:?}: {} +- {} vs {target}", e.mean, e.se);
    }
}

#[test]
fn generalization_error_of_zero_predictor_is_target_norm() {
    let d = 30;
    let truth = GroundTruth::from_profile(d, &EigenProfile::Flat, 1.0, Some(1)).unwrap();
    let zero = ConstantPredictor { dim: d, c: 0.0 };
    let e = generalization_mc(&zero, &truth, 40_000, 3).unwrap();
    assert!((e.mean - truth.l2_norm_sq()).abs() < 5.0 * e.se);
}

#[test]
fn network_gradient_passes_finite_difference_check() {
    let d = 12;
    let cov = Arc::new(CovarianceDescriptor::isotropic(d).unwrap());
    let ens = NeuronEnsemble::sample(cov, 7, 2).unwrap();
    let q = GaussianIntegrator::default();
    for b in [Builtin::Tanh, Builtin::Quadratic] {
        let prof = ActivationProfile::builtin(b, &q).unwrap();
        let net = NetworkPredictor {
            w: ens.weights().clone(),
            z: regimes::sample_init(7, 4),
            activation: Arc::clone(prof.activation()),
            c: 0.1,
        };
        assert!(gradient_check(&net, 16, 0) < 1e-6);
    }
}

#[test]
fn universal_perturbation_finds_top_eigenvector() {
    let d = 30;
    let mut ev = vec![1.0; d];
    ev[0] = 3.0;
    ev[1] = 1.5;
    let truth = GroundTruth::from_profile(d, &EigenProfile::Explicit(ev), 1.0, Some(5)).unwrap();
    let f = QuadraticPredictor::from_truth(&truth);
    let up = universal_perturbation(&f, 20_000, 500, 2).unwrap();
    let top = truth.eigenvectors().column(0);
    let cos = DVector::from_vec(up.direction.clone()).dot(&top).abs();
    assert!(up.converged && cos > 0.99, "cos {cos}");
    // J(f) = 4 B^2 for a quadratic form: top eigenvalue 36.
    assert!((up.eigenvalue / 36.0 - 1.0).abs() < 0.05);
}

#[test]
fn increments_approach_gradient_norm() {
    let d = 20;
    let truth = GroundTruth::from_profile(d, &EigenProfile::PowerLaw { exponent: 1.0 }, 1.0, Some(2)).unwrap();
    let f = QuadraticPredictor::from_truth(&truth);
    let rows = increment_derivative_check(&f, 500, &[1.0, 1e-1, 1e-3], 0, &IncrementOptions::default()).unwrap();
    let last = rows.last().unwrap();
    assert!(last.exact);
    assert!((last.mean_ratio / last.grad_mean - 1.0).abs() < 1e-2);
    // Increments shrink towards the first-order term as delta decreases.
    assert!(rows[0].mean_ratio >= rows[2].mean_ratio);
}

#[test]
fn lipschitz_bound_overstates_average_gradient() {
    let rows = lipschitz_comparison(&[16, 64, 256], 4000, 1).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].ratio > w[0].ratio);
    }
    for r in &rows {
        assert!((r.dirichlet_mc / r.dirichlet - 1.0).abs() < 0.1);
    }
}
