//! Exact finite-dimensional evaluation of each training regime.
//!
//! All errors are normalized: `egen = E(f - f*)^2 / (2 ||B||_F^2)` and
//! `erob = E ||grad f||^2 / (4 ||B||_F^2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationProfile;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{GroundTruth, NeuronEnsemble};
use crate::population::{self, PopulationMatrices, RidgeResolvent};
use crate::quadrature::GaussianIntegrator;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    SgdLimit,
    Rf,
    RfRidge,
    Rfl,
    Init,
    Nt,
    Ntl,
}

impl Regime {
    pub const ALL: [Regime; 7] =
        [Regime::SgdLimit, Regime::Rf, Regime::RfRidge, Regime::Rfl, Regime::Init, Regime::Nt, Regime::Ntl];

    pub fn tag(self) -> &'static str {
        match self {
            Regime::SgdLimit => "SGD_LIMIT",
            Regime::Rf => "RF",
            Regime::RfRidge => "RF_RIDGE",
            Regime::Rfl => "RFL",
            Regime::Init => "INIT",
            Regime::Nt => "NT",
            Regime::Ntl => "NTL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        Regime::ALL
            .into_iter()
            .find(|r| r.tag() == up)
            .ok_or_else(|| Error::InvalidInput(format!("unknown regime {s:?}")))
    }

    pub fn takes_lambda(self) -> bool {
        matches!(self, Regime::RfRidge | Regime::Rfl)
    }

    pub fn takes_init_seed(self) -> bool {
        matches!(self, Regime::Rfl | Regime::Init | Regime::Ntl)
    }

    pub fn needs_ensemble(self) -> bool {
        self != Regime::SgdLimit
    }

    /// NT and NTL are defined for the quadratic network only.
    pub fn quadratic_only(self) -> bool {
        matches!(self, Regime::Nt | Regime::Ntl)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug)]
pub enum FittedParams {
    /// `f(x) = x^T M x + c` with the optimal constant.
    Quadratic { matrix: DMatrix<f64> },
    /// `f(x) = z^T sigma(W x)`.
    OutputWeights { z: DVector<f64> },
    /// Lazy tangent model: trained correction `x^T M x + c` on top of `x^T W^T Q W x`.
    Lazy { correction: DMatrix<f64>, init: DMatrix<f64> },
    /// Metrics only, parameters not materialized.
    None,
}

#[derive(Clone, Debug)]
pub struct RegimeEvaluation {
    pub regime: Regime,
    pub lambda: Option<f64>,
    pub egen: f64,
    pub erob: f64,
    pub params: FittedParams,
    pub ensemble_seed: Option<u64>,
    pub init_seed: Option<u64>,
    /// `tr(P^2 U)/m` and `tr(P^2 C)/m` for the lazy random-features fit.
    pub lazy_traces: Option<(f64, f64)>,
    pub pseudo_inverse: bool,
}

impl RegimeEvaluation {
    fn new(regime: Regime, egen: f64, erob: f64, params: FittedParams) -> Self {
        Self {
            regime,
            lambda: None,
            egen,
            erob,
            params,
            ensemble_seed: None,
            init_seed: None,
            lazy_traces: None,
            pseudo_inverse: false,
        }
    }
}

fn require_nondegenerate(truth: &GroundTruth) -> Result<f64> {
    let f = truth.frob_sq();
    if f > 0.0 {
        Ok(f)
    } else {
        invalid("normalized errors are undefined for B = 0")
    }
}

/// Infinite-data SGD endpoint: the best rank-`m` approximation of `B`.
pub fn eval_sgd_limit(truth: &GroundTruth, m: usize) -> Result<RegimeEvaluation> {
    if m == 0 {
        return invalid("width must be at least 1");
    }
    require_nondegenerate(truth)?;
    let sq: Vec<f64> = truth.eigenvalues().iter().map(|x| x * x).collect();
    let k = m.min(sq.len());
    let head: f64 = sq[..k].iter().sum();
    let tail: f64 = sq[k..].iter().sum();
    let total = head + tail;
    Ok(RegimeEvaluation::new(
        Regime::SgdLimit,
        tail / total,
        head / total,
        FittedParams::Quadratic { matrix: truth.truncated(m) },
    ))
}

/// Output weights `a0 ~ N(0, I/m)` for an init seed.
pub fn sample_init(m: usize, seed: u64) -> DVector<f64> {
    let mut r = rng::stream(seed, rng::STREAM_INIT);
    rng::normal_vector(m, &mut r) / (m as f64).sqrt()
}

/// Random-features problem: population matrices of one ensemble against one target.
pub struct RfProblem {
    pop: PopulationMatrices,
    l2_sq: f64,
    frob_sq: f64,
    ensemble_seed: Option<u64>,
}

impl RfProblem {
    pub fn new(ens: &NeuronEnsemble, profile: &ActivationProfile, truth: &GroundTruth, q: &GaussianIntegrator) -> Result<Self> {
        let pop = population::population_matrices(ens, profile, truth, q)?;
        Self::from_matrices(pop, truth, ens.seed())
    }

    pub fn from_matrices(pop: PopulationMatrices, truth: &GroundTruth, ensemble_seed: Option<u64>) -> Result<Self> {
        let frob_sq = require_nondegenerate(truth)?;
        Ok(Self { pop, l2_sq: truth.l2_norm_sq(), frob_sq, ensemble_seed })
    }

    pub fn population(&self) -> &PopulationMatrices {
        &self.pop
    }

    pub fn width(&self) -> usize {
        self.pop.v.len()
    }

    /// Exact `(egen, erob)` of `z^T sigma(W x)`.
    pub fn metrics(&self, z: &DVector<f64>) -> (f64, f64) {
        let uz = &self.pop.u * z;
        let egen = (self.l2_sq - 2.0 * self.pop.v.dot(z) + z.dot(&uz)) / (2.0 * self.frob_sq);
        let erob = z.dot(&(&self.pop.c * z)) / (4.0 * self.frob_sq);
        (egen, erob)
    }

    fn evaluation(&self, regime: Regime, z: DVector<f64>) -> RegimeEvaluation {
        let (egen, erob) = self.metrics(&z);
        let mut e = RegimeEvaluation::new(regime, egen, erob, FittedParams::OutputWeights { z });
        e.ensemble_seed = self.ensemble_seed;
        e
    }

    /// `z = (U + lambda I)^{-1} v`.
    pub fn fit_rf(&self, lambda: f64) -> Result<RegimeEvaluation> {
        let res = RidgeResolvent::new(&self.pop.u, lambda)?;
        let regime = if lambda == 0.0 { Regime::Rf } else { Regime::RfRidge };
        let mut e = self.evaluation(regime, res.solve(&self.pop.v));
        e.lambda = Some(lambda);
        e.pseudo_inverse = res.is_pseudo_inverse();
        Ok(e)
    }

    /// Shared pieces of the lazy fit at one ridge level.
    pub fn lazy(&self, lambda: f64) -> Result<LazyRf<'_>> {
        let res = RidgeResolvent::new(&self.pop.u, lambda)?;
        let z_rf = res.solve(&self.pop.v);
        let p = res.shrinkage();
        let p2 = &p * &p;
        let m = self.width() as f64;
        let trace_u = linalg::trace_prod_sym(&p2, &self.pop.u) / m;
        let trace_c = linalg::trace_prod_sym(&p2, &self.pop.c) / m;
        Ok(LazyRf { problem: self, lambda, z_rf, p, trace_u, trace_c, pseudo_inverse: res.is_pseudo_inverse() })
    }

    /// `z = z_rf + P a0` with `a0` drawn from `init_seed`.
    pub fn fit_rfl(&self, lambda: f64, init_seed: u64) -> Result<RegimeEvaluation> {
        Ok(self.lazy(lambda)?.eval(init_seed))
    }

    /// The untrained network with output weights `a0`.
    pub fn eval_init(&self, init_seed: u64) -> RegimeEvaluation {
        let mut e = self.eval_init_weights(sample_init(self.width(), init_seed));
        e.init_seed = Some(init_seed);
        e
    }

    pub fn eval_init_weights(&self, a0: DVector<f64>) -> RegimeEvaluation {
        self.evaluation(Regime::Init, a0)
    }
}

pub struct LazyRf<'a> {
    problem: &'a RfProblem,
    pub lambda: f64,
    pub z_rf: DVector<f64>,
    /// `P = I - (U + lambda I)^{-1} U`.
    pub p: DMatrix<f64>,
    pub trace_u: f64,
    pub trace_c: f64,
    pub pseudo_inverse: bool,
}

impl LazyRf<'_> {
    pub fn eval(&self, init_seed: u64) -> RegimeEvaluation {
        let mut e = self.eval_weights(&sample_init(self.z_rf.len(), init_seed));
        e.init_seed = Some(init_seed);
        e
    }

    pub fn eval_weights(&self, a0: &DVector<f64>) -> RegimeEvaluation {
        let z = &self.z_rf + &self.p * a0;
        let mut e = self.problem.evaluation(Regime::Rfl, z);
        e.lambda = Some(self.lambda);
        e.lazy_traces = Some((self.trace_u, self.trace_c));
        e.pseudo_inverse = self.pseudo_inverse;
        e
    }
}

pub fn fit_rf(
    ens: &NeuronEnsemble,
    profile: &ActivationProfile,
    truth: &GroundTruth,
    lambda: f64,
    q: &GaussianIntegrator,
) -> Result<RegimeEvaluation> {
    RfProblem::new(ens, profile, truth, q)?.fit_rf(lambda)
}

pub fn fit_rfl(
    ens: &NeuronEnsemble,
    profile: &ActivationProfile,
    truth: &GroundTruth,
    lambda: f64,
    init_seed: u64,
    q: &GaussianIntegrator,
) -> Result<RegimeEvaluation> {
    RfProblem::new(ens, profile, truth, q)?.fit_rfl(lambda, init_seed)
}

pub fn eval_init(
    ens: &NeuronEnsemble,
    profile: &ActivationProfile,
    truth: &GroundTruth,
    init_seed: u64,
    q: &GaussianIntegrator,
) -> Result<RegimeEvaluation> {
    Ok(RfProblem::new(ens, profile, truth, q)?.eval_init(init_seed))
}

/// Which tangent correction is fitted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NtFit {
    /// Least-squares optimum `W^T A + A^T W = T - Q T Q` (`Q` projects onto `ker W`).
    #[default]
    GeneralizationOptimal,
    /// `W^T A = P T / 2`, so `W^T A + A^T W = (P T + T P)/2`. Coincides with the
    /// optimum when `P T Q = 0`, e.g. for `T` a multiple of the identity.
    HalfProjection,
}

impl NtFit {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "optimal" => Ok(NtFit::GeneralizationOptimal),
            "half_projection" => Ok(NtFit::HalfProjection),
            other => invalid(format!("unknown NT fit {other:?} (optimal | half_projection)")),
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            NtFit::GeneralizationOptimal => "optimal",
            NtFit::HalfProjection => "half_projection",
        }
    }
}

/// Relative singular-value threshold defining the rank of `W`.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Row space of `W` and the target statistics the tangent fits need.
pub struct NtBasis {
    /// `d x r`, orthonormal basis of the row space of `W`.
    p1: DMatrix<f64>,
    w: DMatrix<f64>,
    b: DMatrix<f64>,
    frob_sq: f64,
    /// `||P1^T B||_F^2`.
    pb_sq: f64,
    /// `||P1^T B P1||_F^2`.
    pbp_sq: f64,
    /// `w_l^T B w_l`.
    h: DVector<f64>,
    /// `(W W^T) o (W W^T)`.
    gram_sq: DMatrix<f64>,
    ensemble_seed: Option<u64>,
}

/// Squared norms of a target matrix `T` seen through `P1`.
#[derive(Clone, Copy, Debug)]
struct Projected {
    t_sq: f64,
    pt_sq: f64,
    ptp_sq: f64,
}

impl NtBasis {
    pub fn new(ens: &NeuronEnsemble, truth: &GroundTruth) -> Result<Self> {
        if ens.dim() != truth.dim() {
            return invalid("ensemble and truth dimensions differ");
        }
        let frob_sq = require_nondegenerate(truth)?;
        let w = ens.weights().clone();
        let svd = w.clone().svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
        let smax = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
        let keep: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > RANK_REL_TOL * smax).collect();
        let d = w.ncols();
        let p1 = DMatrix::from_fn(d, keep.len(), |r, c| v_t[(keep[c], r)]);
        let b = truth.matrix().clone();
        let pb = p1.transpose() * &b;
        let pbp = &pb * &p1;
        let gram = &w * w.transpose();
        Ok(Self {
            pb_sq: linalg::frob_sq(&pb),
            pbp_sq: linalg::frob_sq(&pbp),
            h: linalg::quad_diag(&w, &b),
            gram_sq: linalg::hadamard_sq(&gram),
            p1,
            w,
            b,
            frob_sq,
            ensemble_seed: ens.seed(),
        })
    }

    pub fn rank(&self) -> usize {
        self.p1.ncols()
    }
    pub fn dim(&self) -> usize {
        self.p1.nrows()
    }
    pub fn p1(&self) -> &DMatrix<f64> {
        &self.p1
    }
    /// `||P1 P1^T B||_F^2`.
    pub fn projected_sq(&self) -> f64 {
        self.pb_sq
    }
    /// `||P1^T B P1||_F^2`.
    pub fn mixed_sq(&self) -> f64 {
        self.pbp_sq
    }

    /// `||Q T Q||_F^2 = ||T||^2 - 2 ||P1^T T||^2 + ||P1^T T P1||^2`, exactly 0 at full rank.
    fn complement_sq(&self, p: Projected) -> f64 {
        if self.rank() == self.dim() {
            0.0
        } else {
            p.t_sq - 2.0 * p.pt_sq + p.ptp_sq
        }
    }

    fn metrics(&self, p: Projected, fit: NtFit) -> (f64, f64) {
        let qtq = self.complement_sq(p);
        let (resid, fitted_sq) = match fit {
            NtFit::GeneralizationOptimal => (qtq, 2.0 * p.pt_sq - p.ptp_sq),
            NtFit::HalfProjection => {
                let cross = p.pt_sq - p.ptp_sq;
                (qtq + cross / 2.0, (2.0 * p.pt_sq + 2.0 * p.ptp_sq) / 4.0)
            }
        };
        // E(x^T R x - tr R)^2 = 2 ||R||^2 and E ||2 M x||^2 = 4 ||M||^2.
        (2.0 * resid / (2.0 * self.frob_sq), 4.0 * fitted_sq / (4.0 * self.frob_sq))
    }

    fn base(&self) -> Projected {
        Projected { t_sq: self.frob_sq, pt_sq: self.pb_sq, ptp_sq: self.pbp_sq }
    }

    /// `T - QTQ` or `(PT + TP)/2` for a symmetric target `T`.
    fn fitted_matrix(&self, t: &DMatrix<f64>, fit: NtFit) -> DMatrix<f64> {
        let pt = &self.p1 * (self.p1.transpose() * t);
        let tp = pt.transpose();
        let m = match fit {
            NtFit::GeneralizationOptimal => {
                let ptp = &self.p1 * (self.p1.transpose() * &tp);
                &pt + &tp - ptp
            }
            NtFit::HalfProjection => (&pt + &tp) * 0.5,
        };
        linalg::symmetrize(&m)
    }

    pub fn fit_nt(&self, fit: NtFit) -> RegimeEvaluation {
        let (egen, erob) = self.metrics(self.base(), fit);
        let matrix = self.fitted_matrix(&self.b, fit);
        let mut e = RegimeEvaluation::new(Regime::Nt, egen, erob, FittedParams::Quadratic { matrix });
        e.ensemble_seed = self.ensemble_seed;
        e
    }

    /// Lazy tangent metrics without forming `d x d` matrices.
    ///
    /// With `t = sum_l a_l w_l^T B w_l` and `k = a^T (G o G) a`, the target
    /// `B~ = B - W^T diag(a) W` has `||B~||^2 = ||B||^2 - 2t + k`, and the same
    /// shift applies to `||P1^T B~||^2` and `||P1^T B~ P1||^2` because
    /// `P1 P1^T W^T = W^T`.
    pub fn ntl_metrics(&self, a0: &DVector<f64>, fit: NtFit) -> (f64, f64) {
        let t = self.h.dot(a0);
        let k = a0.dot(&(&self.gram_sq * a0));
        let shift = k - 2.0 * t;
        let p = Projected { t_sq: self.frob_sq + shift, pt_sq: self.pb_sq + shift, ptp_sq: self.pbp_sq + shift };
        self.metrics(p, fit)
    }

    /// `x^T W^T diag(a0) W x`, the network at initialization.
    pub fn init_matrix(&self, a0: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.w.clone();
        for (mut row, &a) in scaled.row_iter_mut().zip(a0.iter()) {
            row *= a;
        }
        linalg::symmetrize(&(self.w.transpose() * scaled))
    }

    /// Lazy tangent fit with materialized `B~`, correction and init matrices.
    /// `erob` measures the trained correction; `egen` the full predictor.
    pub fn fit_ntl_weights(&self, a0: &DVector<f64>, fit: NtFit) -> RegimeEvaluation {
        let init = self.init_matrix(a0);
        let bt = &self.b - &init;
        let pbt = self.p1.transpose() * &bt;
        let p = Projected {
            t_sq: linalg::frob_sq(&bt),
            pt_sq: linalg::frob_sq(&pbt),
            ptp_sq: linalg::frob_sq(&(&pbt * &self.p1)),
        };
        let (egen, erob) = self.metrics(p, fit);
        let correction = self.fitted_matrix(&bt, fit);
        let mut e = RegimeEvaluation::new(Regime::Ntl, egen, erob, FittedParams::Lazy { correction, init });
        e.ensemble_seed = self.ensemble_seed;
        e
    }

    pub fn fit_ntl(&self, init_seed: u64, fit: NtFit) -> RegimeEvaluation {
        let a0 = sample_init(self.w.nrows(), init_seed);
        let mut e = self.fit_ntl_weights(&a0, fit);
        e.init_seed = Some(init_seed);
        e
    }

    /// `erob` of the network at initialization, `a0^T (4 G o G) a0 / (4 ||B||^2)`.
    pub fn init_erob(&self, a0: &DVector<f64>) -> f64 {
        a0.dot(&(&self.gram_sq * a0)) / self.frob_sq
    }
}

pub fn fit_nt(ens: &NeuronEnsemble, truth: &GroundTruth) -> Result<RegimeEvaluation> {
    Ok(NtBasis::new(ens, truth)?.fit_nt(NtFit::default()))
}

pub fn fit_ntl(ens: &NeuronEnsemble, truth: &GroundTruth, init_seed: u64) -> Result<RegimeEvaluation> {
    Ok(NtBasis::new(ens, truth)?.fit_ntl(init_seed, NtFit::default()))
}
