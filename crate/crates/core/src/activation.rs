//! Activation functions, their Hermite coefficients and derived scale constants.
//!
//! Hermite coefficients use the probabilists' polynomials without
//! normalization: `He_0 = 1`, `He_1 = t`, `He_2 = t^2 - 1`, `He_3 = t^3 - 3t`,
//! and `lambda_k = E[sigma(G) He_k(G)]`.

use std::fmt::Debug;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{CovarianceDescriptor, GroundTruth};
use crate::quadrature::GaussianIntegrator;

pub trait ScalarActivation: Send + Sync + Debug {
    fn eval(&self, t: f64) -> f64;
    fn deriv(&self, t: f64) -> f64;
    fn name(&self) -> String;
    /// Points where `sigma` or `sigma'` is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    /// `Some(s)` when `sigma(t) = t^2 + s`, enabling closed forms.
    fn quadratic_shift(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Builtin {
    /// `t^2 - 1`
    Quadratic,
    /// `t^2 + s`
    ShiftedQuadratic(f64),
    Relu,
    Tanh,
    Identity,
}

impl Builtin {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("shifted_quadratic:") {
            let shift = rest.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad shift in {s}")))?;
            return Ok(Builtin::ShiftedQuadratic(shift));
        }
        match s {
            "quadratic" => Ok(Builtin::Quadratic),
            "relu" => Ok(Builtin::Relu),
            "tanh" => Ok(Builtin::Tanh),
            "identity" => Ok(Builtin::Identity),
            _ => invalid(format!("unknown activation {s:?}")),
        }
    }
}

impl ScalarActivation for Builtin {
    fn eval(&self, t: f64) -> f64 {
        match self {
            Builtin::Quadratic => t * t - 1.0,
            Builtin::ShiftedQuadratic(s) => t * t + s,
            Builtin::Relu => t.max(0.0),
            Builtin::Tanh => t.tanh(),
            Builtin::Identity => t,
        }
    }
    fn deriv(&self, t: f64) -> f64 {
        match self {
            Builtin::Quadratic | Builtin::ShiftedQuadratic(_) => 2.0 * t,
            Builtin::Relu => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Builtin::Tanh => 1.0 - t.tanh().powi(2),
            Builtin::Identity => 1.0,
        }
    }
    fn name(&self) -> String {
        match self {
            Builtin::Quadratic => "quadratic".into(),
            Builtin::ShiftedQuadratic(s) => format!("shifted_quadratic:{s}"),
            Builtin::Relu => "relu".into(),
            Builtin::Tanh => "tanh".into(),
            Builtin::Identity => "identity".into(),
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Builtin::Relu => vec![0.0],
            _ => Vec::new(),
        }
    }
    fn quadratic_shift(&self) -> Option<f64> {
        match self {
            Builtin::Quadratic => Some(-1.0),
            Builtin::ShiftedQuadratic(s) => Some(*s),
            _ => None,
        }
    }
}

fn hermite_poly(k: usize, t: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => t,
        2 => t * t - 1.0,
        _ => t * t * t - 3.0 * t,
    }
}

/// `E[f(G) He_k(G)]` for `k <= 3`.
pub fn hermite_coefficient(f: impl Fn(f64) -> f64, k: usize, breakpoints: &[f64], q: &GaussianIntegrator) -> Result<f64> {
    if k > 3 {
        return invalid(format!("Hermite order {k} not supported (max 3)"));
    }
    q.expect(|t| f(t) * hermite_poly(k, t), breakpoints)
}

#[derive(Clone, Debug)]
pub struct ActivationProfile {
    activation: Arc<dyn ScalarActivation>,
    /// `lambda_0 .. lambda_3`.
    pub hermite: [f64; 4],
    /// `lambda_0 .. lambda_2` of `sigma'`.
    pub deriv_hermite: [f64; 3],
    /// `E sigma(G)^2`.
    pub norm_sq: f64,
    /// `E sigma'(G)^2`.
    pub deriv_norm_sq: f64,
}

impl ActivationProfile {
    pub fn new(activation: Arc<dyn ScalarActivation>, q: &GaussianIntegrator) -> Result<Self> {
        let bp = activation.breakpoints();
        let mut hermite = [0.0; 4];
        for (k, h) in hermite.iter_mut().enumerate() {
            *h = hermite_coefficient(|t| activation.eval(t), k, &bp, q)?;
        }
        let mut deriv_hermite = [0.0; 3];
        for (k, h) in deriv_hermite.iter_mut().enumerate() {
            *h = hermite_coefficient(|t| activation.deriv(t), k, &bp, q)?;
        }
        let (norm_sq, deriv_norm_sq) = l2_norms(activation.as_ref(), q)?;
        Ok(Self { activation, hermite, deriv_hermite, norm_sq, deriv_norm_sq })
    }

    pub fn builtin(b: Builtin, q: &GaussianIntegrator) -> Result<Self> {
        Self::new(Arc::new(b), q)
    }

    pub fn activation(&self) -> &Arc<dyn ScalarActivation> {
        &self.activation
    }
    pub fn name(&self) -> String {
        self.activation.name()
    }
    pub fn eval(&self, t: f64) -> f64 {
        self.activation.eval(t)
    }
    pub fn deriv(&self, t: f64) -> f64 {
        self.activation.deriv(t)
    }
    pub fn lambda(&self, k: usize) -> f64 {
        self.hermite[k]
    }
    pub fn is_centered(&self) -> bool {
        self.hermite[0].abs() < 1e-12
    }
    /// `||sigma||^2 - lambda_1^2`.
    pub fn lambda_bar(&self) -> f64 {
        self.norm_sq - self.hermite[1].powi(2)
    }
    /// `||sigma'||^2 - lambda_1^2`.
    pub fn lambda_bar_prime(&self) -> f64 {
        self.deriv_norm_sq - self.hermite[1].powi(2)
    }
    /// `|lambda_1(sigma')^2 - lambda_2(sigma)^2|`; zero by Gaussian integration by parts.
    pub fn stein_gap(&self) -> f64 {
        (self.deriv_hermite[1].powi(2) - self.hermite[2].powi(2)).abs()
    }
    pub fn lambda2_nonzero(&self) -> bool {
        self.hermite[2].abs() > 1e-12
    }
    /// Sub-Gaussian-square growth. Built-ins grow at most polynomially; custom
    /// activations are checked at a few far-out points.
    pub fn growth_ok(&self) -> bool {
        [10.0_f64, 20.0, 30.0].iter().all(|&t| {
            let bound = (t * t / 4.0).exp();
            self.eval(t).abs() <= bound && self.eval(-t).abs() <= bound
        })
    }
}

/// `(||sigma||^2, ||sigma'||^2)`.
pub fn l2_norms(act: &dyn ScalarActivation, q: &GaussianIntegrator) -> Result<(f64, f64)> {
    let bp = act.breakpoints();
    Ok((q.expect(|t| act.eval(t).powi(2), &bp)?, q.expect(|t| act.deriv(t).powi(2), &bp)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScaleConstants {
    pub lambda_bar: f64,
    pub kappa: f64,
    pub tau: f64,
    pub lambda_bar_prime: f64,
    pub kappa_prime: f64,
}

/// `lambda_bar`, `kappa = lambda_2^2 ||Gamma||_F^2 d / 2`,
/// `tau = lambda_2 tr(B Gamma) sqrt(d)`, and the derivative analogues.
pub fn scale_constants(profile: &ActivationProfile, truth: &GroundTruth, cov: &CovarianceDescriptor) -> Result<ScaleConstants> {
    if truth.dim() != cov.dim() {
        return invalid("truth and covariance dimensions differ");
    }
    let d = cov.dim() as f64;
    let l2 = profile.lambda(2);
    let l3 = profile.lambda(3);
    let tr_bg = crate::linalg::trace_prod_sym(truth.matrix(), cov.matrix());
    Ok(ScaleConstants {
        lambda_bar: profile.lambda_bar(),
        kappa: l2 * l2 * cov.frob_sq() * d / 2.0,
        tau: l2 * tr_bg * d.sqrt(),
        lambda_bar_prime: profile.lambda_bar_prime(),
        kappa_prime: l3 * l3 * cov.frob_sq() * d / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn q() -> GaussianIntegrator {
        GaussianIntegrator::default()
    }

    #[test]
    fn quadratic_coefficients() {
        let p = ActivationProfile::builtin(Builtin::Quadratic, &q()).unwrap();
        let expect = [0.0, 0.0, 2.0, 0.0];
        for k in 0..4 {
            assert!((p.hermite[k] - expect[k]).abs() < 1e-12, "k={k}");
        }
        assert!((p.norm_sq - 2.0).abs() < 1e-12);
        assert!((p.deriv_norm_sq - 4.0).abs() < 1e-12);
        assert!((p.lambda_bar() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn relu_coefficients_closed_form() {
        let p = ActivationProfile::builtin(Builtin::Relu, &q()).unwrap();
        let s = 1.0 / (2.0 * PI).sqrt();
        let expect = [s, 0.5, s, 0.0];
        for k in 0..4 {
            assert!((p.hermite[k] - expect[k]).abs() < 1e-12, "k={k}: {}", p.hermite[k]);
        }
        assert!((p.norm_sq - 0.5).abs() < 1e-12);
        assert!((p.deriv_norm_sq - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tanh_even_coefficients_vanish_exactly() {
        let p = ActivationProfile::builtin(Builtin::Tanh, &q()).unwrap();
        assert_eq!(p.hermite[0], 0.0);
        assert_eq!(p.hermite[2], 0.0);
        assert!(p.hermite[1] > 0.5);
    }

    #[test]
    fn stein_identity_for_builtins() {
        for b in [Builtin::Quadratic, Builtin::Relu, Builtin::Tanh, Builtin::Identity, Builtin::ShiftedQuadratic(0.3)] {
            let p = ActivationProfile::builtin(b, &q()).unwrap();
            for k in 0..3 {
                assert!((p.deriv_hermite[k] - p.hermite[k + 1]).abs() < 1e-10, "{b:?} k={k}");
            }
            assert!(p.stein_gap() < 1e-6);
        }
    }

    #[test]
    fn hermite_order_limit() {
        assert!(hermite_coefficient(|t| t, 4, &[], &q()).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for b in [Builtin::Quadratic, Builtin::Relu, Builtin::Tanh, Builtin::Identity, Builtin::ShiftedQuadratic(-0.5)] {
            assert_eq!(Builtin::parse(&b.name()).unwrap(), b);
        }
    }
}
