// Independent checks of the deterministic pipeline: Monte Carlo for the
// population moments, closed forms for Hermite data, and explicit small-case
// arithmetic for the theory formulas.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use tradeoff_core::activation::{hermite_coefficient, scale_constants};
use tradeoff_core::model::{alignment, sample_ensemble};
use tradeoff_core::population::{mc_oracle_moments, population_matrices};
use tradeoff_core::regimes::eval_sgd_limit;
use tradeoff_core::theory::{predict, predict_rf_asymptote, psi_estimate, psi_silverstein, PsiMethod};
use tradeoff_core::*;

fn q() -> GaussianIntegrator {
    GaussianIntegrator::default()
}

fn max_z(a: &DMatrix<f64>, b: &DMatrix<f64>, se: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).zip(se.iter()).map(|((x, y), s)| (x - y).abs() / s.max(1e-12)).fold(0.0, f64::max)
}

fn check_population_against_mc(act: Builtin, d: usize, m: usize) {
    let q = q();
    let profile = ActivationProfile::builtin(act, &q).unwrap();
    let truth = GroundTruth::from_profile(d, &EigenProfile::PowerLaw { exponent: 1.0 }, 1.0, Some(3)).unwrap();
    let cov = Arc::new(CovarianceDescriptor::isotropic(d).unwrap());
    let ens = sample_ensemble(&cov, m, 11).unwrap();
    let exact = population_matrices(&ens, &profile, &truth, &q).unwrap();
    let mc = mc_oracle_moments(&ens, &profile, &truth, 200_000, 5).unwrap();
    // Over m^2 entries a handful of 4.5-sigma excursions would be surprising.
    let zu = max_z(&exact.u, &mc.u, mc.u_se.as_ref().unwrap());
    let zc = max_z(&exact.c, &mc.c, mc.c_se.as_ref().unwrap());
    let v_se = mc.v_se.as_ref().unwrap();
    let zv = exact.v.iter().zip(mc.v.iter()).zip(v_se.iter()).map(|((a, b), s)| (a - b).abs() / s).fold(0.0, f64::max);
    assert!(zu < 5.0 && zc < 5.0 && zv < 5.0, "{act:?}: z-scores U {zu:.2} C {zc:.2} v {zv:.2}");
}

#[test]
fn quadratic_population_matches_monte_carlo() {
    check_population_against_mc(Builtin::Quadratic, 12, 8);
}

#[test]
fn relu_population_matches_monte_carlo() {
    check_population_against_mc(Builtin::Relu, 12, 8);
}

#[test]
fn tanh_population_matches_monte_carlo() {
    check_population_against_mc(Builtin::Tanh, 12, 8);
}

#[test]
fn shifted_quadratic_population_matches_monte_carlo() {
    check_population_against_mc(Builtin::ShiftedQuadratic(-1.0), 10, 6);
}

#[test]
fn relu_hermite_coefficients_closed_form() {
    let p = ActivationProfile::builtin(Builtin::Relu, &q()).unwrap();
    let c = 1.0 / (2.0 * PI).sqrt();
    assert!((p.lambda(0) - c).abs() < 1e-12);
    assert!((p.lambda(1) - 0.5).abs() < 1e-12);
    assert!((p.lambda(2) - c).abs() < 1e-12);
    // E[relu(G) He_3(G)] = E[G^4 - 3G^2; G > 0] = 0.
    assert!(p.lambda(3).abs() < 1e-12);
    assert!((p.norm_sq - 0.5).abs() < 1e-12);
    assert!((p.deriv_norm_sq - 0.5).abs() < 1e-12);
}

#[test]
fn tanh_hermite_coefficients_match_monte_carlo() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let q = q();
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let n = 400_000;
    let he = [|_: f64| 1.0, |g: f64| g, |g: f64| g * g - 1.0, |g: f64| g * g * g - 3.0 * g];
    let mut sums = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..n {
        let g: f64 = StandardNormal.sample(&mut r);
        for k in 0..4 {
            let s = g.tanh() * he[k](g);
            sums[k] += s;
            sq[k] += s * s;
        }
    }
    for k in 0..4 {
        let mean = sums[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
        let lam = hermite_coefficient(f64::tanh, k, &[], &q).unwrap();
        assert!((lam - mean).abs() < 5.0 * se + 1e-12, "k={k}: {lam} vs {mean} +- {se}");
    }
}

#[test]
fn stein_identity_links_derivative_and_first_coefficient() {
    let q = q();
    for b in [Builtin::Relu, Builtin::Tanh, Builtin::Quadratic, Builtin::Identity] {
        let p = ActivationProfile::builtin(b, &q).unwrap();
        assert!(p.stein_gap() < 1e-9, "{b:?}: {}", p.stein_gap());
    }
}

#[test]
fn rf_theory_reduces_to_explicit_fractions_for_quadratic_activation() {
    // sigma(t) = t^2 has lambda_1 = 0, so psi1 = rho/2, psi2 = rho. With
    // Gamma = I/d and B = I/sqrt(d): tau = 2, kappa = 2, ||B|| = 1, so
    // egen = 1/(1+rho) and erob = rho/(1+rho) exactly.
    let q = q();
    let prof = ActivationProfile::builtin(Builtin::Quadratic, &q).unwrap();
    let d = 200;
    let truth = GroundTruth::centered(DMatrix::identity(d, d) / (d as f64).sqrt()).unwrap();
    let cov = Arc::new(CovarianceDescriptor::isotropic(d).unwrap());
    let k = scale_constants(&prof, &truth, &cov).unwrap();
    for rho in [0.25, 0.5, 1.0, 2.0] {
        let m = (rho * d as f64) as usize;
        let psi = psi_estimate(&cov, &prof, m, 1, 0, 0.0).unwrap();
        assert_eq!(psi.method, PsiMethod::ClosedForm);
        assert!((psi.psi1 - rho / 2.0).abs() < 1e-12);
        let t = predict(Regime::Rf, &TheoryInputs::Rf { constants: k, psi: Some(psi), frob_sq: truth.frob_sq(), ridge: 0.0 })
            .unwrap();
        let g = t.egen.unwrap();
        let r = t.erob.unwrap();
        assert!((g - 1.0 / (1.0 + rho)).abs() < 1e-12, "rho {rho}: egen {g}");
        assert!((r - rho / (1.0 + rho)).abs() < 1e-12, "rho {rho}: erob {r}");
        assert!((g + r - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rf_asymptote_uses_alignment() {
    // rank-d/2 flat B against isotropic Gamma: alpha^2 = (tr B)^2 / (||B||^2 d) = 1/2.
    let d = 64;
    let truth = GroundTruth::from_profile(d, &EigenProfile::RankFlat { rank: d / 2 }, 1.0, Some(2)).unwrap();
    let cov = CovarianceDescriptor::isotropic(d).unwrap();
    let a = alignment(truth.matrix(), cov.matrix()).unwrap();
    let by_hand = {
        let tr: f64 = truth.eigenvalues().iter().sum();
        tr / (truth.frob_sq().sqrt() * (d as f64).sqrt())
    };
    assert!((a - by_hand).abs() < 1e-12);
    let (g, r) = predict_rf_asymptote(a);
    assert!((r - 0.5).abs() < 1e-12 && (g - 0.5).abs() < 1e-12);
    let prop = CovarianceDescriptor::proportional_to(&truth).unwrap();
    assert!((alignment(truth.matrix(), prop.matrix()).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn silverstein_limit_agrees_with_finite_d_traces_for_relu() {
    let q = q();
    let prof = ActivationProfile::builtin(Builtin::Relu, &q).unwrap();
    let d = 400;
    let spectrum: Vec<f64> = (0..d).map(|i| if i < d / 2 { 1.5 } else { 0.5 }).collect();
    let cov = Arc::new(CovarianceDescriptor::from_spectrum(&spectrum, Some(4)).unwrap());
    for rho in [0.5, 1.0, 2.0] {
        let m = (rho * d as f64) as usize;
        let lim = psi_silverstein(cov.spectrum(), &prof, rho, 1e-13, 0.0).unwrap();
        let fin = psi_estimate(&cov, &prof, m, 4, 1, 0.0).unwrap();
        let rel1 = (lim.psi1 - fin.psi1).abs() / lim.psi1;
        let rel2 = (lim.psi2 - fin.psi2).abs() / lim.psi2;
        assert!(rel1 < 0.03 && rel2 < 0.05, "rho {rho}: psi1 {} vs {}, psi2 {} vs {}", lim.psi1, fin.psi1, lim.psi2, fin.psi2);
    }
}

#[test]
fn stieltjes_transform_of_identity_spectrum_matches_marchenko_pastur() {
    // With d Gamma = I the fixed point is the Marchenko-Pastur transform,
    // the positive root of a quadratic.
    let spectrum = vec![1.0; 50];
    for (rho, z) in [(0.5, -0.3), (2.0, -1.0), (1.0, -0.05)] {
        let s = theory::stieltjes(&spectrum, rho, z, 1e-15).unwrap();
        // s (-z + 1/(1 + rho s)) = 1  <=>  -z rho s^2 + (1 - z - rho) s - 1 = 0.
        let (a, b, c) = (-z * rho, 1.0 - z - rho, -1.0);
        let root = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        assert!((s - root).abs() < 1e-10, "rho {rho} z {z}: {s} vs {root}");
    }
}

#[test]
fn sgd_limit_small_case_by_hand() {
    let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0, 0.0]));
    let truth = GroundTruth::centered(b).unwrap();
    let e = eval_sgd_limit(&truth, 2).unwrap();
    assert!((e.erob - 13.0 / 14.0).abs() < 1e-15);
    assert!((e.egen - 1.0 / 14.0).abs() < 1e-15);
}

#[test]
fn single_neuron_ridge_fit_reduces_to_scalar_formula() {
    // w an eigenvector of B with |w| = 1: U = 2, v = 2 w^T B w, z = v / (U + lambda).
    let q = q();
    let prof = ActivationProfile::builtin(Builtin::Quadratic, &q).unwrap();
    let d = 12;
    let truth = GroundTruth::from_profile(d, &EigenProfile::PowerLaw { exponent: 1.0 }, 1.0, Some(8)).unwrap();
    let w = truth.eigenvectors().column(2).transpose();
    let cov = Arc::new(CovarianceDescriptor::isotropic(d).unwrap());
    let ens = NeuronEnsemble::from_weights(DMatrix::from_rows(&[w.clone()]), cov).unwrap();
    let wbw = truth.eigenvalues()[2];
    for lambda in [0.0, 0.3, 5.0] {
        let e = regimes::fit_rf(&ens, &prof, &truth, lambda, &q).unwrap();
        let regimes::FittedParams::OutputWeights { z } = &e.params else { panic!() };
        assert!((z[0] - 2.0 * wbw / (2.0 + lambda)).abs() < 1e-12);
    }
}

#[test]
fn aligned_random_features_nearly_sum_to_one() {
    let q = q();
    let prof = ActivationProfile::builtin(Builtin::Quadratic, &q).unwrap();
    let d = 300;
    let truth = GroundTruth::from_profile(d, &EigenProfile::RankFlat { rank: d / 2 }, 1.0, Some(1)).unwrap();
    let cov = Arc::new(CovarianceDescriptor::proportional_to(&truth).unwrap());
    let ens = sample_ensemble(&cov, 900, 0).unwrap();
    let e = regimes::fit_rf(&ens, &prof, &truth, 0.0, &q).unwrap();
    assert!((e.egen + e.erob - 1.0).abs() < 0.05, "{} + {}", e.egen, e.erob);
}

#[test]
fn untrained_quadratic_network_robustness() {
    let q = q();
    let prof = ActivationProfile::builtin(Builtin::Quadratic, &q).unwrap();
    let d = 300;
    let truth = GroundTruth::centered(DMatrix::identity(d, d) / (d as f64).sqrt()).unwrap();
    let cov = Arc::new(CovarianceDescriptor::isotropic(d).unwrap());
    let ens = sample_ensemble(&cov, 900, 0).unwrap();
    let e = regimes::eval_init(&ens, &prof, &truth, 0, &q).unwrap();
    assert!((e.erob - (1.0 + 1.0 / d as f64)).abs() < 0.2, "erob {}", e.erob);
}
