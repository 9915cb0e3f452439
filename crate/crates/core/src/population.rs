//! Population second moments of random features.
//!
//! With `phi_j(x) = sigma(w_j^T x)` and `x ~ N(0, I)`:
//! `U = E[phi phi^T]`, `v = E[f*(x) phi]`, and
//! `C_jk = (w_j^T w_k) E[sigma'(w_j^T x) sigma'(w_k^T x)]`, so that a
//! random-features predictor `z^T phi` has Dirichlet energy `z^T C z`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::Serialize;

use crate::activation::{ActivationProfile, ScaleConstants};
use crate::error::{invalid, Result};
use crate::linalg;
use crate::model::{GroundTruth, NeuronEnsemble};
use crate::quadrature::GaussianIntegrator;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum PopulationMethod {
    ClosedForm,
    Quadrature,
    MonteCarlo { samples: usize },
}

#[derive(Clone, Debug)]
pub struct PopulationMatrices {
    pub u: DMatrix<f64>,
    pub v: DVector<f64>,
    pub c: DMatrix<f64>,
    pub method: PopulationMethod,
    /// Per-entry standard errors (Monte Carlo only).
    pub u_se: Option<DMatrix<f64>>,
    pub v_se: Option<DVector<f64>>,
    pub c_se: Option<DMatrix<f64>>,
}

/// Fills the upper triangle of a symmetric matrix from `entry(j, k)` and mirrors it.
fn symmetric_from(n: usize, entry: impl Fn(usize, usize) -> Result<f64> + Sync) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| (j..n).map(|k| entry(j, k)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n, n);
    for (j, row) in rows.iter().enumerate() {
        for (off, &val) in row.iter().enumerate() {
            m[(j, j + off)] = val;
            m[(j + off, j)] = val;
        }
    }
    Ok(m)
}

pub fn population_u(ens: &NeuronEnsemble, profile: &ActivationProfile, q: &GaussianIntegrator) -> Result<DMatrix<f64>> {
    let g = ens.gram();
    if let Some(s) = profile.activation().quadratic_shift() {
        // E[(X^2+s)(Y^2+s)] = 2c^2 + (a+s)(b+s)
        let eta = DVector::from_fn(g.nrows(), |j, _| g[(j, j)] + s);
        return Ok(linalg::hadamard_sq(&g) * 2.0 + &eta * eta.transpose());
    }
    let act = profile.activation();
    let bp = act.breakpoints();
    symmetric_from(g.nrows(), |j, k| {
        q.expect_pair(|x| act.eval(x), &bp, |y| act.eval(y), &bp, g[(j, j)], g[(k, k)], g[(j, k)])
    })
}

pub fn population_c(ens: &NeuronEnsemble, profile: &ActivationProfile, q: &GaussianIntegrator) -> Result<DMatrix<f64>> {
    let g = ens.gram();
    if profile.activation().quadratic_shift().is_some() {
        // sigma' = 2t, E[4XY] = 4c
        return Ok(linalg::hadamard_sq(&g) * 4.0);
    }
    let act = profile.activation();
    let bp = act.breakpoints();
    symmetric_from(g.nrows(), |j, k| {
        let c = g[(j, k)];
        if c == 0.0 {
            return Ok(0.0);
        }
        Ok(c * q.expect_pair(|x| act.deriv(x), &bp, |y| act.deriv(y), &bp, g[(j, j)], g[(k, k)], c)?)
    })
}

pub fn population_v(
    ens: &NeuronEnsemble,
    profile: &ActivationProfile,
    truth: &GroundTruth,
    q: &GaussianIntegrator,
) -> Result<DVector<f64>> {
    if ens.dim() != truth.dim() {
        return invalid("ensemble and truth dimensions differ");
    }
    let w = ens.weights();
    let quad = linalg::quad_diag(w, truth.matrix());
    let norms = ens.row_norms_sq();
    let mean = truth.mean();
    if let Some(s) = profile.activation().quadratic_shift() {
        // Cov(x^T B x, (w^T x)^2) = 2 w^T B w, plus the mean terms.
        return Ok(DVector::from_fn(w.nrows(), |j, _| 2.0 * quad[j] + mean * (norms[j] + s)));
    }
    let act = profile.activation();
    let bp = act.breakpoints();
    let tr = truth.matrix().trace();
    let off = truth.offset();
    let vals: Vec<f64> = (0..w.nrows())
        .into_par_iter()
        .map(|j| {
            let n2 = norms[j];
            if n2 == 0.0 {
                return Ok(act.eval(0.0) * mean);
            }
            let n = n2.sqrt();
            // Conditional on G = u^T x (u = w/|w|): E[x^T B x | G] = a G^2 + tr B - a.
            let a = quad[j] / n2;
            let c = tr - a + off;
            let scaled: Vec<f64> = bp.iter().map(|b| b / n).collect();
            q.expect(|t| (a * t * t + c) * act.eval(n * t), &scaled)
        })
        .collect::<Result<_>>()?;
    Ok(DVector::from_vec(vals))
}

pub fn population_matrices(
    ens: &NeuronEnsemble,
    profile: &ActivationProfile,
    truth: &GroundTruth,
    q: &GaussianIntegrator,
) -> Result<PopulationMatrices> {
    let method = if profile.activation().quadratic_shift().is_some() {
        PopulationMethod::ClosedForm
    } else {
        PopulationMethod::Quadrature
    };
    Ok(PopulationMatrices {
        u: population_u(ens, profile, q)?,
        v: population_v(ens, profile, truth, q)?,
        c: population_c(ens, profile, q)?,
        method,
        u_se: None,
        v_se: None,
        c_se: None,
    })
}

/// Monte Carlo estimates of `U`, `v`, `C` with per-entry standard errors.
pub fn mc_oracle_moments(
    ens: &NeuronEnsemble,
    profile: &ActivationProfile,
    truth: &GroundTruth,
    samples: usize,
    seed: u64,
) -> Result<PopulationMatrices> {
    if samples == 0 {
        return invalid("Monte Carlo needs at least one sample");
    }
    let w = ens.weights();
    let (m, d) = (w.nrows(), w.ncols());
    let act = profile.activation();
    struct Acc {
        u: DMatrix<f64>,
        u2: DMatrix<f64>,
        v: DVector<f64>,
        v2: DVector<f64>,
        s: DMatrix<f64>,
        s2: DMatrix<f64>,
    }
    let partials: Vec<Acc> = rng::chunks(samples)
        .into_par_iter()
        .map(|(k, _, len)| {
            let mut r = rng::stream(seed, rng::STREAM_MC_BASE + k);
            let x = rng::normal_matrix(len, d, &mut r);
            let h = &x * w.transpose();
            let phi = h.map(|t| act.eval(t));
            let dphi = h.map(|t| act.deriv(t));
            let f = truth.eval_rows(&x);
            let phi2 = phi.map(|t| t * t);
            let dphi2 = dphi.map(|t| t * t);
            let f2 = f.map(|t| t * t);
            Acc {
                u: phi.transpose() * &phi,
                u2: phi2.transpose() * &phi2,
                v: phi.transpose() * &f,
                v2: phi2.transpose() * &f2,
                s: dphi.transpose() * &dphi,
                s2: dphi2.transpose() * &dphi2,
            }
        })
        .collect();
    let mut tot = Acc {
        u: DMatrix::zeros(m, m),
        u2: DMatrix::zeros(m, m),
        v: DVector::zeros(m),
        v2: DVector::zeros(m),
        s: DMatrix::zeros(m, m),
        s2: DMatrix::zeros(m, m),
    };
    for p in &partials {
        tot.u += &p.u;
        tot.u2 += &p.u2;
        tot.v += &p.v;
        tot.v2 += &p.v2;
        tot.s += &p.s;
        tot.s2 += &p.s2;
    }
    let n = samples as f64;
    let se = |mean: f64, sq: f64| {
        if samples < 2 {
            f64::INFINITY
        } else {
            ((sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt()
        }
    };
    let u = &tot.u / n;
    let v = &tot.v / n;
    let s = &tot.s / n;
    let g = ens.gram();
    let c = g.component_mul(&s);
    let u_se = DMatrix::from_fn(m, m, |i, j| se(u[(i, j)], tot.u2[(i, j)]));
    let v_se = DVector::from_fn(m, |i, _| se(v[i], tot.v2[i]));
    let c_se = DMatrix::from_fn(m, m, |i, j| g[(i, j)].abs() * se(s[(i, j)], tot.s2[(i, j)]));
    Ok(PopulationMatrices {
        u,
        v,
        c,
        method: PopulationMethod::MonteCarlo { samples },
        u_se: Some(u_se),
        v_se: Some(v_se),
        c_se: Some(c_se),
    })
}

/// Linear-plus-spike approximations of the population matrices.
#[derive(Clone, Debug)]
pub struct LinearizedMatrices {
    /// `lambda_bar I + lambda_1^2 W W^T + (kappa/d) 1 1^T + mu mu^T`.
    pub u0: DMatrix<f64>,
    /// `lambda_bar' I + (kappa'/d + lambda_1^2) W W^T + (2 kappa / d) 1 1^T`.
    pub c0: DMatrix<f64>,
    /// `lambda_bar I + lambda_1^2 W W^T`.
    pub a0: DMatrix<f64>,
    /// `A_0 + (kappa/d) 1 1^T`.
    pub a1: DMatrix<f64>,
    /// `lambda_bar' I + (kappa'/d + lambda_1^2) W W^T`.
    pub d0: DMatrix<f64>,
    /// `mu_i = lambda_2 (||w_i||^2 - 1) / 2`.
    pub mu: DVector<f64>,
}

pub fn linearized(ens: &NeuronEnsemble, profile: &ActivationProfile, k: &ScaleConstants) -> LinearizedMatrices {
    let m = ens.width();
    let d = ens.dim() as f64;
    let g = ens.gram();
    let l1sq = profile.lambda(1).powi(2);
    let l2 = profile.lambda(2);
    let eye = DMatrix::<f64>::identity(m, m);
    let ones = DMatrix::from_element(m, m, 1.0);
    let mu = DVector::from_fn(m, |j, _| l2 * (g[(j, j)] - 1.0) / 2.0);
    let a0 = &eye * k.lambda_bar + &g * l1sq;
    let a1 = &a0 + &ones * (k.kappa / d);
    let u0 = &a1 + &mu * mu.transpose();
    let d0 = &eye * k.lambda_bar_prime + &g * (k.kappa_prime / d + l1sq);
    let c0 = &d0 + &ones * (2.0 * k.kappa / d);
    LinearizedMatrices { u0, c0, a0, a1, d0, mu }
}

/// Relative threshold below which eigenvalues of `U` are treated as zero
/// in the unregularized pseudo-inverse.
pub const PINV_REL_TOL: f64 = 1e-10;

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    /// Eigenvectors and inverted (regularized) eigenvalues; zero entries mark the kernel.
    Spectral { vecs: DMatrix<f64>, inv: Vec<f64> },
}

/// `(U + lambda I)^{-1}`, falling back to the Moore-Penrose pseudo-inverse
/// when `lambda = 0` and `U` is numerically singular.
pub struct RidgeResolvent {
    lambda: f64,
    n: usize,
    factor: Factor,
}

impl RidgeResolvent {
    pub fn new(u: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("ridge parameter must be finite and >= 0, got {lambda}"));
        }
        linalg::check_finite(u, "U")?;
        let n = u.nrows();
        let shifted = u + DMatrix::<f64>::identity(n, n) * lambda;
        if let Some(ch) = Cholesky::new(shifted.clone()) {
            let l = ch.l_dirty();
            let pivots: Vec<f64> = (0..n).map(|i| l[(i, i)].powi(2)).collect();
            let max = pivots.iter().fold(0.0_f64, |a, &b| a.max(b));
            let min = pivots.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if lambda > 0.0 || min > PINV_REL_TOL * max {
                return Ok(Self { lambda, n, factor: Factor::Cholesky(ch) });
            }
        }
        let (vals, vecs) = linalg::sym_eigen_desc(u);
        let top = vals.first().map(|x| x.abs()).unwrap_or(0.0);
        let inv = vals
            .iter()
            .map(|&e| {
                let s = e.max(0.0) + lambda;
                if lambda == 0.0 && e <= PINV_REL_TOL * top {
                    0.0
                } else {
                    1.0 / s
                }
            })
            .collect();
        Ok(Self { lambda, n, factor: Factor::Spectral { vecs, inv } })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_pseudo_inverse(&self) -> bool {
        self.lambda == 0.0 && matches!(self.factor, Factor::Spectral { .. })
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Cholesky(ch) => ch.solve(v),
            Factor::Spectral { vecs, inv } => {
                let mut y = vecs.transpose() * v;
                for (yi, s) in y.iter_mut().zip(inv) {
                    *yi *= s;
                }
                vecs * y
            }
        }
    }

    /// `P = I - (U + lambda I)^{-1} U`.
    pub fn shrinkage(&self) -> DMatrix<f64> {
        let n = self.n;
        match &self.factor {
            Factor::Cholesky(ch) => {
                if self.lambda == 0.0 {
                    DMatrix::zeros(n, n)
                } else {
                    ch.inverse() * self.lambda
                }
            }
            Factor::Spectral { vecs, inv } => {
                // lambda/(e+lambda) on regular directions, 1 on the kernel of a pseudo-inverse.
                let diag = DVector::from_iterator(
                    n,
                    inv.iter().map(|&s| if s == 0.0 { 1.0 } else { self.lambda * s }),
                );
                vecs * DMatrix::from_diagonal(&diag) * vecs.transpose()
            }
        }
    }
}

pub fn ridge_resolvent(u: &DMatrix<f64>, lambda: f64) -> Result<RidgeResolvent> {
    RidgeResolvent::new(u, lambda)
}

impl std::fmt::Debug for RidgeResolvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RidgeResolvent")
            .field("lambda", &self.lambda)
            .field("n", &self.n)
            .field("pseudo_inverse", &self.is_pseudo_inverse())
            .finish()
    }
}
