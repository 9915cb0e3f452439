//! Asymptotic predictions for each regime.
//!
//! Random-features predictions depend on the activation through the scale
//! constants and on the ensemble spectrum through
//! `psi1 = lim tr(A0^{-1})/d` and `psi2 = lim tr(A0^{-2} D0)/d`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::activation::{ActivationProfile, ScaleConstants};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{CovarianceDescriptor, NeuronEnsemble};
use crate::regimes::{NtFit, Regime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PsiMethod {
    FiniteDTrace,
    /// `lambda_1 = 0`: `A0 = lambda_bar I` and the traces are explicit.
    ClosedForm,
    Silverstein,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PsiPair {
    pub psi1: f64,
    pub psi2: f64,
    pub method: PsiMethod,
    pub n_rep: usize,
    pub psi1_se: f64,
    pub psi2_se: f64,
}

/// Activation data the traces need, with an optional ridge folded into `lambda_bar`.
#[derive(Clone, Copy, Debug)]
struct TraceParams {
    lambda_bar: f64,
    lambda1_sq: f64,
    lambda_bar_prime: f64,
    /// `kappa'/d + lambda_1^2`.
    gamma: f64,
    kappa_prime_over_d: f64,
}

impl TraceParams {
    fn new(profile: &ActivationProfile, gamma_frob_sq: f64, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return invalid(format!("ridge must be finite and >= 0, got {ridge}"));
        }
        let lb = profile.lambda_bar();
        if lb <= 1e-12 {
            return Err(Error::DegenerateActivation(format!(
                "{} is affine (lambda_bar = {lb:e})",
                profile.name()
            )));
        }
        let l1sq = profile.lambda(1).powi(2);
        let kpd = profile.lambda(3).powi(2) * gamma_frob_sq / 2.0;
        Ok(Self {
            lambda_bar: lb + ridge,
            lambda1_sq: l1sq,
            lambda_bar_prime: profile.lambda_bar_prime(),
            gamma: kpd + l1sq,
            kappa_prime_over_d: kpd,
        })
    }

    fn linear_part_vanishes(&self) -> bool {
        self.lambda1_sq < 1e-24
    }

    /// Explicit traces when `lambda_1 = 0`, using `E tr(W W^T) = m tr(Gamma) = m`.
    fn closed_form(&self, rho: f64) -> PsiPair {
        let lb = self.lambda_bar;
        PsiPair {
            psi1: rho / lb,
            psi2: rho * (self.lambda_bar_prime + self.kappa_prime_over_d) / (lb * lb),
            method: PsiMethod::ClosedForm,
            n_rep: 0,
            psi1_se: 0.0,
            psi2_se: 0.0,
        }
    }
}

/// Eigenvalues of `W W^T` (length `m`, zeros included).
fn gram_eigenvalues(ens: &NeuronEnsemble) -> Vec<f64> {
    let w = ens.weights();
    let (m, d) = (w.nrows(), w.ncols());
    let mut vals = if m <= d {
        linalg::sym_eigenvalues(&(w * w.transpose()))
    } else {
        let mut v = linalg::sym_eigenvalues(&(w.transpose() * w));
        v.resize(m, 0.0);
        v
    };
    for v in vals.iter_mut() {
        *v = v.max(0.0);
    }
    vals
}

/// `(tr(A0^{-1})/d, tr(A0^{-2} D0)/d)` for one ensemble.
fn finite_traces(ens: &NeuronEnsemble, p: &TraceParams) -> (f64, f64) {
    let d = ens.dim() as f64;
    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for s in gram_eigenvalues(ens) {
        let a = p.lambda_bar + p.lambda1_sq * s;
        t1 += 1.0 / a;
        t2 += (p.lambda_bar_prime + p.gamma * s) / (a * a);
    }
    (t1 / d, t2 / d)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Seed of replication `r` for a base seed.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Finite-`d` estimate of `(psi1, psi2)` averaged over `n_rep` independent ensembles
/// of width `m`. `ridge` shifts `lambda_bar`.
pub fn psi_estimate(
    cov: &Arc<CovarianceDescriptor>,
    profile: &ActivationProfile,
    m: usize,
    n_rep: usize,
    seed: u64,
    ridge: f64,
) -> Result<PsiPair> {
    if m == 0 || n_rep == 0 {
        return invalid("psi_estimate needs m >= 1 and n_rep >= 1");
    }
    let p = TraceParams::new(profile, cov.frob_sq(), ridge)?;
    let rho = m as f64 / cov.dim() as f64;
    if p.linear_part_vanishes() {
        return Ok(p.closed_form(rho));
    }
    let reps: Vec<(f64, f64)> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let ens = NeuronEnsemble::sample(Arc::clone(cov), m, replication_seed(seed, r))?;
            Ok(finite_traces(&ens, &p))
        })
        .collect::<Result<_>>()?;
    let (psi1, psi1_se) = mean_se(&reps.iter().map(|r| r.0).collect::<Vec<_>>());
    let (psi2, psi2_se) = mean_se(&reps.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(PsiPair { psi1, psi2, method: PsiMethod::FiniteDTrace, n_rep, psi1_se, psi2_se })
}

/// `(psi1, psi2)` of a single ensemble (no averaging).
pub fn psi_of_ensemble(ens: &NeuronEnsemble, profile: &ActivationProfile, ridge: f64) -> Result<PsiPair> {
    let p = TraceParams::new(profile, ens.covariance().frob_sq(), ridge)?;
    let (psi1, psi2) = finite_traces(ens, &p);
    Ok(PsiPair { psi1, psi2, method: PsiMethod::FiniteDTrace, n_rep: 1, psi1_se: 0.0, psi2_se: 0.0 })
}

pub const SILVERSTEIN_MAX_ITER: usize = 10_000;

/// Stieltjes transform at `z < 0` of the limiting spectrum of `W W^T`:
/// `s = 1 / (-z + mean_t t / (1 + rho t s))` over the eigenvalues `t` of `d Gamma`.
pub fn stieltjes(spectrum: &[f64], rho: f64, z: f64, tol: f64) -> Result<f64> {
    if !(z < 0.0) {
        return invalid("Stieltjes transform evaluated only on the negative axis");
    }
    let n = spectrum.len() as f64;
    let map = |s: f64| 1.0 / (-z + spectrum.iter().map(|&t| t / (1.0 + rho * t * s)).sum::<f64>() / n);
    let mut s = 1.0 / -z;
    let mut change = f64::INFINITY;
    for _ in 0..SILVERSTEIN_MAX_ITER {
        let next = map(s);
        change = (next - s).abs();
        s = next;
        if change < tol {
            return Ok(s);
        }
    }
    Err(Error::IterationLimit { iterations: SILVERSTEIN_MAX_ITER, residual: change })
}

/// Limiting `(psi1, psi2)` from the spectrum of `d Gamma` via the Silverstein
/// fixed point at `z0 = -lambda_bar / lambda_1^2`. The derivative of the
/// Stieltjes transform (for `tr(A0^{-2})`) is a central difference with step
/// `1e-5 |z0|`.
pub fn psi_silverstein(spectrum: &[f64], profile: &ActivationProfile, rho: f64, tol: f64, ridge: f64) -> Result<PsiPair> {
    if spectrum.is_empty() || !(rho > 0.0) || !(tol > 0.0) {
        return invalid("psi_silverstein needs a spectrum, rho > 0 and tol > 0");
    }
    let d = spectrum.len() as f64;
    let gamma_frob_sq = spectrum.iter().map(|t| t * t).sum::<f64>() / (d * d);
    let p = TraceParams::new(profile, gamma_frob_sq, ridge)?;
    if p.linear_part_vanishes() {
        return Ok(p.closed_form(rho));
    }
    let l1sq = p.lambda1_sq;
    let z0 = -p.lambda_bar / l1sq;
    let s0 = stieltjes(spectrum, rho, z0, tol)?;
    let h = 1e-5 * z0.abs();
    let fine = 1e-15;
    let ds = (stieltjes(spectrum, rho, z0 + h, fine)? - stieltjes(spectrum, rho, z0 - h, fine)?) / (2.0 * h);
    let psi1 = rho / l1sq * s0;
    // D0 = c1 I + c2 A0 with c2 = gamma / lambda_1^2, c1 = lambda_bar' - c2 lambda_bar.
    let c2 = p.gamma / l1sq;
    let c1 = p.lambda_bar_prime - c2 * p.lambda_bar;
    let tr_a0_inv_sq = rho / (l1sq * l1sq) * ds;
    let psi2 = c1 * tr_a0_inv_sq + c2 * psi1;
    Ok(PsiPair { psi1, psi2, method: PsiMethod::Silverstein, n_rep: 0, psi1_se: 0.0, psi2_se: 0.0 })
}

#[derive(Clone, Debug, Serialize)]
pub enum TheoryInputs {
    SgdLimit {
        frob_sq: f64,
        frob_trunc_sq: f64,
    },
    /// Random features; `ridge > 0` predicts robustness only.
    Rf {
        constants: ScaleConstants,
        psi: Option<PsiPair>,
        frob_sq: f64,
        ridge: f64,
    },
    /// Lazy random features: the same-ridge RF values plus the trace corrections
    /// `tr(P^2 U)/m` and `tr(P^2 C)/m`.
    Rfl {
        rf_egen: Option<f64>,
        rf_erob: Option<f64>,
        trace_u: f64,
        trace_c: f64,
        frob_sq: f64,
    },
    Init(InitInputs),
    Nt {
        rho: f64,
        beta: f64,
        fit: NtFit,
    },
    Ntl {
        rho: f64,
        beta: f64,
        fit: NtFit,
        init: InitInputs,
    },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct InitInputs {
    pub norm_sq: f64,
    pub deriv_norm_sq: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub gamma_frob_sq: f64,
    pub frob_sq: f64,
}

impl InitInputs {
    pub fn new(profile: &ActivationProfile, cov: &CovarianceDescriptor, frob_sq: f64) -> Self {
        Self {
            norm_sq: profile.norm_sq,
            deriv_norm_sq: profile.deriv_norm_sq,
            lambda2: profile.lambda(2),
            lambda3: profile.lambda(3),
            gamma_frob_sq: cov.frob_sq(),
            frob_sq,
        }
    }

    fn predict(&self) -> (f64, f64) {
        let g = self.gamma_frob_sq;
        let l2sq = self.lambda2 * self.lambda2;
        let erob = (self.deriv_norm_sq + self.lambda3 * self.lambda3 * g / 2.0 + l2sq * g) / (4.0 * self.frob_sq);
        let egen = 1.0 + (self.norm_sq + l2sq * g / 2.0) / (2.0 * self.frob_sq);
        (egen, erob)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TheoryPrediction {
    pub regime: Regime,
    pub egen: Option<f64>,
    pub erob: Option<f64>,
}

/// `(egen, erob)` of random features in closed form.
fn rf_values(k: &ScaleConstants, psi: &PsiPair, frob_sq: f64) -> (f64, f64) {
    let (p1, p2) = (psi.psi1, psi.psi2);
    let den = 2.0 * k.kappa * p1 + 2.0;
    let egen = 1.0 - p1 * k.tau * k.tau / (frob_sq * den);
    let erob = k.tau * k.tau * (2.0 * k.kappa * p1 * p1 + p2) / (frob_sq * den * den);
    (egen, erob)
}

fn nt_values(rho: f64, beta: f64, fit: NtFit) -> (f64, f64) {
    let r = rho.min(1.0);
    let gap = (1.0 - rho).max(0.0);
    let egen = gap * gap * (1.0 - beta) + gap * beta;
    // E ||P1^T B||^2 / ||B||^2 -> r, E ||P1^T B P1||^2 / ||B||^2 -> r^2 (1 - beta) + r beta.
    let mixed = r * r * (1.0 - beta) + r * beta;
    match fit {
        NtFit::HalfProjection => (egen + (r - mixed) / 2.0, (r + r * r) / 2.0 + (r - r * r) * beta / 2.0),
        NtFit::GeneralizationOptimal => (egen, 2.0 * r - mixed),
    }
}

pub fn predict(regime: Regime, inputs: &TheoryInputs) -> Result<TheoryPrediction> {
    let (egen, erob) = match (regime, inputs) {
        (Regime::SgdLimit, TheoryInputs::SgdLimit { frob_sq, frob_trunc_sq }) => {
            let erob = frob_trunc_sq / frob_sq;
            (Some(1.0 - erob), Some(erob))
        }
        (Regime::Rf | Regime::RfRidge, TheoryInputs::Rf { constants, psi, frob_sq, ridge }) => {
            let psi = psi.as_ref().ok_or_else(|| Error::InvalidInput("random-features theory needs (psi1, psi2)".into()))?;
            let (g, r) = rf_values(constants, psi, *frob_sq);
            (if *ridge == 0.0 { Some(g) } else { None }, Some(r))
        }
        (Regime::Rfl, TheoryInputs::Rfl { rf_egen, rf_erob, trace_u, trace_c, frob_sq }) => (
            rf_egen.map(|g| g + trace_u / (2.0 * frob_sq)),
            rf_erob.map(|r| r + trace_c / (4.0 * frob_sq)),
        ),
        (Regime::Init, TheoryInputs::Init(init)) => {
            let (g, r) = init.predict();
            (Some(g), Some(r))
        }
        (Regime::Nt, TheoryInputs::Nt { rho, beta, fit }) => {
            let (g, r) = nt_values(*rho, *beta, *fit);
            (Some(g), Some(r))
        }
        (Regime::Ntl, TheoryInputs::Ntl { rho, beta, fit, init }) => {
            let (g, r) = nt_values(*rho, *beta, *fit);
            (Some(g), Some(r + init.predict().1))
        }
        (r, _) => return invalid(format!("theory inputs do not match regime {r}")),
    };
    Ok(TheoryPrediction { regime, egen, erob })
}

/// `(1 - alpha^2, alpha^2)`: the wide-network limit of random features.
pub fn predict_rf_asymptote(alpha: f64) -> (f64, f64) {
    (1.0 - alpha * alpha, alpha * alpha)
}

/// `egen + erob - 1` for the regimes with a sum-to-one law: SGD limit,
/// unregularized random features, and NT with `beta = 1`.
pub fn tradeoff_residual(regime: Regime, lambda: Option<f64>, beta: Option<f64>, egen: f64, erob: f64) -> Result<f64> {
    let applicable = match regime {
        Regime::SgdLimit => true,
        Regime::Rf => lambda.unwrap_or(0.0) == 0.0,
        Regime::Nt => beta.map(|b| (b - 1.0).abs() < 1e-9).unwrap_or(false),
        _ => false,
    };
    if applicable {
        Ok(egen + erob - 1.0)
    } else {
        Err(Error::NotApplicable(format!("{regime} has no generalization/robustness sum rule here")))
    }
}
