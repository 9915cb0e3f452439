//! Target function, feature covariance and neuron ensembles.
//!
//! The target is `f*(x) = x^T B x + b0` with `x ~ N(0, I_d)` and `B` PSD;
//! centering means `b0 = -tr(B)`. First-layer weights are rows `w_j ~ N(0, Gamma)`
//! with `tr(Gamma) = 1`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, PSD_TOL};
use crate::rng;

/// Spectrum shape used to build `B` or `d * Gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EigenProfile {
    /// All `d` eigenvalues equal.
    Flat,
    /// `rank` equal eigenvalues, the rest zero.
    RankFlat { rank: usize },
    /// Eigenvalue `k` (1-based) proportional to `k^-exponent`.
    PowerLaw { exponent: f64 },
    /// Explicit eigenvalues (length `d`).
    Explicit(Vec<f64>),
}

impl EigenProfile {
    /// Unscaled eigenvalues, non-negative.
    pub fn eigenvalues(&self, d: usize) -> Result<Vec<f64>> {
        let vals = match self {
            EigenProfile::Flat => vec![1.0; d],
            EigenProfile::RankFlat { rank } => {
                if *rank == 0 || *rank > d {
                    return invalid(format!("rank {rank} outside 1..={d}"));
                }
                (0..d).map(|k| if k < *rank { 1.0 } else { 0.0 }).collect()
            }
            EigenProfile::PowerLaw { exponent } => {
                (1..=d).map(|k| (k as f64).powf(-exponent)).collect()
            }
            EigenProfile::Explicit(v) => {
                if v.len() != d {
                    return invalid(format!("explicit spectrum has {} entries, d = {d}", v.len()));
                }
                v.clone()
            }
        };
        if let Some(bad) = vals.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return invalid(format!("eigenvalue {bad} is negative or non-finite"));
        }
        Ok(vals)
    }
}

/// Builds `Q diag(vals) Q^T`, or `diag(vals)` when no rotation seed is given.
fn from_spectrum(vals: &[f64], rotation_seed: Option<u64>) -> DMatrix<f64> {
    let d = vals.len();
    let diag = DMatrix::from_diagonal(&DVector::from_column_slice(vals));
    match rotation_seed {
        None => diag,
        Some(seed) => {
            let q = rng::haar_orthogonal(d, seed);
            linalg::symmetrize(&(&q * diag * q.transpose()))
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    b: DMatrix<f64>,
    offset: f64,
    /// Eigenvalues of `B`, descending.
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    frob_sq: f64,
}

impl GroundTruth {
    /// Centered target with the given matrix.
    pub fn centered(b: DMatrix<f64>) -> Result<Self> {
        let offset = -b.trace();
        Self::with_offset(b, offset)
    }

    pub fn with_offset(b: DMatrix<f64>, offset: f64) -> Result<Self> {
        if b.nrows() != b.ncols() || b.nrows() == 0 {
            return invalid(format!("B must be square and non-empty, got {}x{}", b.nrows(), b.ncols()));
        }
        linalg::check_finite(&b, "B")?;
        let asym = (&b - b.transpose()).amax();
        if asym > 1e-12 * b.amax().max(1.0) {
            return invalid(format!("B is not symmetric (max asymmetry {asym:e})"));
        }
        let b = linalg::symmetrize(&b);
        let (eigenvalues, eigenvectors) = linalg::sym_eigen_desc(&b);
        let scale = eigenvalues.first().map(|x| x.abs()).unwrap_or(0.0).max(1.0);
        let min = *eigenvalues.last().unwrap();
        if min < -PSD_TOL * scale {
            return Err(Error::NotPsd(min));
        }
        let frob_sq = eigenvalues.iter().map(|x| x * x).sum();
        Ok(Self { b, offset, eigenvalues, eigenvectors, frob_sq })
    }

    /// `scale * Q diag(profile) Q^T`, centered.
    pub fn from_profile(d: usize, profile: &EigenProfile, scale: f64, rotation_seed: Option<u64>) -> Result<Self> {
        let vals: Vec<f64> = profile.eigenvalues(d)?.iter().map(|x| x * scale).collect();
        Self::centered(from_spectrum(&vals, rotation_seed))
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn offset(&self) -> f64 {
        self.offset
    }
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }
    /// `||B||_F^2`.
    pub fn frob_sq(&self) -> f64 {
        self.frob_sq
    }
    /// `E f*(x)`.
    pub fn mean(&self) -> f64 {
        self.b.trace() + self.offset
    }
    pub fn is_centered(&self) -> bool {
        self.mean().abs() <= 1e-12 * self.b.trace().abs().max(1.0)
    }
    /// `E f*(x)^2 = 2 ||B||_F^2 + (tr B + b0)^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        2.0 * self.frob_sq + self.mean().powi(2)
    }
    /// `E ||grad f*||^2 = 4 ||B||_F^2`.
    pub fn dirichlet_sq(&self) -> f64 {
        4.0 * self.frob_sq
    }
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.b * x)) + self.offset
    }
    /// Values at the rows of `x`.
    pub fn eval_rows(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let xb = x * &self.b;
        DVector::from_fn(x.nrows(), |i, _| xb.row(i).dot(&x.row(i)) + self.offset)
    }
    /// `sum_{k <= m} lambda_k(B)^2`.
    pub fn frob_trunc_sq(&self, m: usize) -> f64 {
        self.eigenvalues.iter().take(m).map(|x| x * x).sum()
    }
    /// Best rank-`m` approximation `B_m` (top-`m` eigenpairs).
    pub fn truncated(&self, m: usize) -> DMatrix<f64> {
        let d = self.dim();
        let k = m.min(d);
        let q = self.eigenvectors.columns(0, k);
        let l = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues[..k]));
        &q * l * q.transpose()
    }
    pub fn spectral(&self) -> SpectralSummary {
        SpectralSummary::new(self)
    }
}

/// `||A||_{F,m}^2`: sum of the `m` largest squared singular values.
pub fn frobenius_truncated(a: &DMatrix<f64>, m: usize) -> f64 {
    let mut s: Vec<f64> = a.singular_values().iter().map(|x| x * x).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s.iter().take(m).sum()
}

/// `tr(B Gamma) / (||B||_F ||Gamma||_F)`.
pub fn alignment(b: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<f64> {
    if b.shape() != gamma.shape() {
        return invalid("alignment: shape mismatch");
    }
    let nb = b.norm();
    let ng = gamma.norm();
    if nb == 0.0 || ng == 0.0 {
        return invalid("alignment undefined for a zero matrix");
    }
    Ok(linalg::trace_prod_sym(b, gamma) / (nb * ng))
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralSummary {
    pub frob_sq: f64,
    /// `tr(B)^2 / (d ||B||_F^2)`, 1 iff `B` is a multiple of the identity.
    pub beta: f64,
    pub eigenvalues: Vec<f64>,
}

impl SpectralSummary {
    pub fn new(t: &GroundTruth) -> Self {
        let tr: f64 = t.eigenvalues.iter().sum();
        let beta = if t.frob_sq > 0.0 { tr * tr / (t.dim() as f64 * t.frob_sq) } else { 0.0 };
        Self { frob_sq: t.frob_sq, beta, eigenvalues: t.eigenvalues.clone() }
    }
    pub fn frob_trunc_sq(&self, m: usize) -> f64 {
        self.eigenvalues.iter().take(m).map(|x| x * x).sum()
    }
}

#[derive(Clone, Debug)]
pub struct CovarianceDescriptor {
    gamma: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    /// Eigenvalues of `d * Gamma`, descending.
    spectrum: Vec<f64>,
    frob_sq: f64,
}

impl CovarianceDescriptor {
    pub fn isotropic(d: usize) -> Result<Self> {
        Self::from_spectrum(&vec![1.0; d], None)
    }

    /// `Gamma = B / tr(B)`.
    pub fn proportional_to(truth: &GroundTruth) -> Result<Self> {
        let tr = truth.matrix().trace();
        if tr <= 0.0 {
            return invalid("Gamma proportional to B requires tr(B) > 0");
        }
        Self::from_matrix(truth.matrix() / tr)
    }

    /// Spectrum of `d * Gamma` up to scale (normalized to trace 1).
    pub fn from_spectrum(spectrum: &[f64], rotation_seed: Option<u64>) -> Result<Self> {
        let d = spectrum.len();
        if d == 0 {
            return invalid("empty spectrum");
        }
        if spectrum.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return invalid("spectrum entries must be finite and non-negative");
        }
        let sum: f64 = spectrum.iter().sum();
        if sum <= 0.0 {
            return invalid("spectrum sums to zero");
        }
        let vals: Vec<f64> = spectrum.iter().map(|x| x / sum).collect();
        Self::from_matrix(from_spectrum(&vals, rotation_seed))
    }

    pub fn from_matrix(gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.nrows() != gamma.ncols() || gamma.nrows() == 0 {
            return invalid("Gamma must be square and non-empty");
        }
        linalg::check_finite(&gamma, "Gamma")?;
        let tr = gamma.trace();
        if (tr - 1.0).abs() > 1e-8 {
            return Err(Error::TraceNotOne(tr));
        }
        let gamma = linalg::symmetrize(&gamma);
        let d = gamma.nrows() as f64;
        let (vals, vecs) = linalg::sym_eigen_desc(&gamma);
        let min = *vals.last().unwrap();
        if min < -PSD_TOL * vals[0].abs().max(1.0) {
            return Err(Error::NotPsd(min));
        }
        let clamped: Vec<f64> = vals.iter().map(|x| x.max(0.0)).collect();
        let s = DVector::from_iterator(clamped.len(), clamped.iter().map(|x| x.sqrt()));
        let sqrt = &vecs * DMatrix::from_diagonal(&s) * vecs.transpose();
        let frob_sq = clamped.iter().map(|x| x * x).sum();
        let spectrum = clamped.iter().map(|x| x * d).collect();
        Ok(Self { gamma, sqrt, spectrum, frob_sq })
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }
    /// Eigenvalues of `d * Gamma`, descending.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }
    /// `||Gamma||_F^2`.
    pub fn frob_sq(&self) -> f64 {
        self.frob_sq
    }
    /// `d ||Gamma||_op`.
    pub fn scaled_op_norm(&self) -> f64 {
        self.spectrum[0]
    }
}

#[derive(Clone, Debug)]
pub struct NeuronEnsemble {
    weights: DMatrix<f64>,
    covariance: Arc<CovarianceDescriptor>,
    seed: Option<u64>,
}

impl NeuronEnsemble {
    /// `m` rows `w_j = Gamma^{1/2} z_j`, `z_j ~ N(0, I)`.
    pub fn sample(covariance: Arc<CovarianceDescriptor>, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return invalid("ensemble width must be positive");
        }
        let d = covariance.dim();
        let mut r = rng::stream(seed, rng::STREAM_ENSEMBLE);
        let z = rng::normal_matrix(m, d, &mut r);
        let weights = z * covariance.sqrt();
        Ok(Self { weights, covariance, seed: Some(seed) })
    }

    pub fn from_weights(weights: DMatrix<f64>, covariance: Arc<CovarianceDescriptor>) -> Result<Self> {
        if weights.ncols() != covariance.dim() || weights.nrows() == 0 {
            return invalid("weight matrix shape does not match covariance");
        }
        linalg::check_finite(&weights, "W")?;
        Ok(Self { weights, covariance, seed: None })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
    pub fn covariance(&self) -> &Arc<CovarianceDescriptor> {
        &self.covariance
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    pub fn width(&self) -> usize {
        self.weights.nrows()
    }
    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }
    /// `m / d`.
    pub fn rho(&self) -> f64 {
        self.width() as f64 / self.dim() as f64
    }
    /// `W W^T`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.weights * self.weights.transpose()
    }
    /// `||w_j||^2`.
    pub fn row_norms_sq(&self) -> DVector<f64> {
        DVector::from_fn(self.width(), |j, _| self.weights.row(j).norm_squared())
    }
}

pub fn sample_ensemble(covariance: &Arc<CovarianceDescriptor>, m: usize, seed: u64) -> Result<NeuronEnsemble> {
    NeuronEnsemble::sample(Arc::clone(covariance), m, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_frobenius_of_diag() {
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        assert_eq!(frobenius_truncated(&b, 2), 13.0);
        assert_eq!(frobenius_truncated(&b, 5), 14.0);
        let t = GroundTruth::centered(b).unwrap();
        assert_eq!(t.frob_trunc_sq(2), 13.0);
        assert_eq!(t.offset(), -6.0);
    }

    #[test]
    fn alignment_examples() {
        let d = 10;
        let b = DMatrix::<f64>::identity(d, d) / (d as f64).sqrt();
        let g = CovarianceDescriptor::isotropic(d).unwrap();
        assert!((alignment(&b, g.matrix()).unwrap() - 1.0).abs() < 1e-12);
        let t = GroundTruth::from_profile(d, &EigenProfile::RankFlat { rank: d / 2 }, 1.0, None).unwrap();
        assert!((alignment(t.matrix(), g.matrix()).unwrap() - 0.5_f64.sqrt()).abs() < 1e-12);
        let zero = DMatrix::zeros(d, d);
        assert!(alignment(&zero, g.matrix()).is_err());
    }

    #[test]
    fn beta_of_flat_and_rank_profiles() {
        let d = 16;
        let flat = GroundTruth::from_profile(d, &EigenProfile::Flat, 1.0, Some(3)).unwrap();
        assert!((flat.spectral().beta - 1.0).abs() < 1e-12);
        let half = GroundTruth::from_profile(d, &EigenProfile::RankFlat { rank: d / 2 }, 7.0, Some(4)).unwrap();
        assert!((half.spectral().beta - 0.5).abs() < 1e-12);
        let r1 = GroundTruth::from_profile(d, &EigenProfile::RankFlat { rank: 1 }, 1.0, None).unwrap();
        assert!((r1.spectral().beta - 1.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let indefinite = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(GroundTruth::centered(indefinite), Err(Error::NotPsd(_))));
        let g = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(CovarianceDescriptor::from_matrix(g), Err(Error::TraceNotOne(_))));
    }

    #[test]
    fn ensemble_is_seed_deterministic() {
        let c = Arc::new(CovarianceDescriptor::isotropic(5).unwrap());
        let a = sample_ensemble(&c, 7, 11).unwrap();
        let b = sample_ensemble(&c, 7, 11).unwrap();
        let other = sample_ensemble(&c, 7, 12).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_ne!(a.weights(), other.weights());
    }

    #[test]
    fn proportional_covariance_has_unit_trace() {
        let t = GroundTruth::from_profile(8, &EigenProfile::PowerLaw { exponent: 1.0 }, 2.0, Some(1)).unwrap();
        let c = CovarianceDescriptor::proportional_to(&t).unwrap();
        assert!((c.matrix().trace() - 1.0).abs() < 1e-12);
        assert!((&(c.sqrt() * c.sqrt()) - c.matrix()).norm() < 1e-12);
    }
}
