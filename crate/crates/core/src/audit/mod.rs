//! Monte Carlo robustness audit of arbitrary predictors.
//!
//! `S(f)^2 = E ||grad f(x)||^2` under `x ~ N(0, I)`, adversarial increments
//! `sup_{|v| <= delta} |f(x + v) - f(x)|`, and the top eigenpair of
//! `J(f) = E[grad f grad f^T]` (the universal perturbation).

pub mod trs;

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::activation::ScalarActivation;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::GroundTruth;
use crate::rng;

pub trait Predictor: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Set when `f(x) = x^T M x + c`, enabling exact increments.
    fn quadratic_form(&self) -> Option<&QuadraticPredictor> {
        None
    }
    /// Values and gradients (as rows) at the rows of `x`.
    fn batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.nrows();
        let mut vals = DVector::zeros(n);
        let mut grads = DMatrix::zeros(n, self.dim());
        for i in 0..n {
            let xi = x.row(i).transpose();
            vals[i] = self.value(&xi);
            grads.set_row(i, &self.gradient(&xi).transpose());
        }
        (vals, grads)
    }
}

/// `f(x) = x^T M x + c`, `M` symmetric.
#[derive(Debug)]
pub struct QuadraticPredictor {
    m: DMatrix<f64>,
    c: f64,
    eigen: OnceLock<(Vec<f64>, DMatrix<f64>)>,
}

impl QuadraticPredictor {
    pub fn new(m: DMatrix<f64>, c: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return invalid("quadratic form must be square");
        }
        Ok(Self { m: linalg::symmetrize(&m), c, eigen: OnceLock::new() })
    }
    /// `x^T M x - tr(M)`: the mean-zero quadratic.
    pub fn centered(m: DMatrix<f64>) -> Result<Self> {
        let c = -m.trace();
        Self::new(m, c)
    }
    pub fn from_truth(t: &GroundTruth) -> Self {
        Self::new(t.matrix().clone(), t.offset()).expect("square")
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
    pub fn offset(&self) -> f64 {
        self.c
    }
    /// Eigenpairs of `M`, descending.
    pub fn eigen(&self) -> &(Vec<f64>, DMatrix<f64>) {
        self.eigen.get_or_init(|| linalg::sym_eigen_desc(&self.m))
    }
}

impl Predictor for QuadraticPredictor {
    fn dim(&self) -> usize {
        self.m.nrows()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.m * x)) + self.c
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.m * x) * 2.0
    }
    fn quadratic_form(&self) -> Option<&QuadraticPredictor> {
        Some(self)
    }
    fn batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let xm = x * &self.m;
        let vals = DVector::from_fn(x.nrows(), |i, _| xm.row(i).dot(&x.row(i)) + self.c);
        (vals, xm * 2.0)
    }
}

/// `f(x) = v^T x + c`.
#[derive(Clone, Debug)]
pub struct LinearPredictor {
    pub v: DVector<f64>,
    pub c: f64,
}

impl Predictor for LinearPredictor {
    fn dim(&self) -> usize {
        self.v.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.v.dot(x) + self.c
    }
    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.v.clone()
    }
    fn batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let vals = x * &self.v;
        let vals = vals.add_scalar(self.c);
        let grads = DMatrix::from_fn(x.nrows(), self.v.len(), |_, j| self.v[j]);
        (vals, grads)
    }
}

#[derive(Clone, Debug)]
pub struct ConstantPredictor {
    pub dim: usize,
    pub c: f64,
}

impl Predictor for ConstantPredictor {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &DVector<f64>) -> f64 {
        self.c
    }
    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

/// `f(x) = z^T sigma(W x) + c`.
#[derive(Clone, Debug)]
pub struct NetworkPredictor {
    pub w: DMatrix<f64>,
    pub z: DVector<f64>,
    pub activation: Arc<dyn ScalarActivation>,
    pub c: f64,
}

impl Predictor for NetworkPredictor {
    fn dim(&self) -> usize {
        self.w.ncols()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        let h = &self.w * x;
        h.iter().zip(self.z.iter()).map(|(&t, &z)| z * self.activation.eval(t)).sum::<f64>() + self.c
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let h = &self.w * x;
        let s = DVector::from_fn(h.len(), |j, _| self.z[j] * self.activation.deriv(h[j]));
        self.w.transpose() * s
    }
    fn batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let h = x * self.w.transpose();
        let phi = h.map(|t| self.activation.eval(t));
        let vals = (&phi * &self.z).add_scalar(self.c);
        let mut dphi = h.map(|t| self.activation.deriv(t));
        for (mut col, &z) in dphi.column_iter_mut().zip(self.z.iter()) {
            col *= z;
        }
        (vals, dphi * &self.w)
    }
}

/// Sum of two predictors.
pub struct SumPredictor<'a> {
    pub a: &'a dyn Predictor,
    pub b: &'a dyn Predictor,
}

impl Predictor for SumPredictor<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.a.value(x) + self.b.value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.gradient(x) + self.b.gradient(x)
    }
    fn batch(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (va, ga) = self.a.batch(x);
        let (vb, gb) = self.b.batch(x);
        (va + vb, ga + gb)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let se = if n < 2 { f64::INFINITY } else { ((sum_sq / nf - mean * mean).max(0.0) / (nf - 1.0)).sqrt() };
        Self { mean, se, n }
    }
}

/// Deterministic chunked Monte Carlo: `per_chunk` maps a block of standard
/// normal inputs to per-sample scalars; partial sums are reduced in chunk order.
fn mc_scalar(d: usize, n: usize, seed: u64, per_chunk: impl Fn(&DMatrix<f64>) -> DVector<f64> + Sync) -> Estimate {
    let partials: Vec<(f64, f64)> = rng::chunks(n)
        .into_par_iter()
        .map(|(k, _, len)| {
            let mut r = rng::stream(seed, rng::STREAM_MC_BASE + k);
            let x = rng::normal_matrix(len, d, &mut r);
            let s = per_chunk(&x);
            (s.sum(), s.iter().map(|v| v * v).sum())
        })
        .collect();
    let (sum, sum_sq) = partials.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    Estimate::from_sums(sum, sum_sq, n)
}

/// `E ||grad f||^q` for `q` in {1, 2}.
pub fn dirichlet_energy(pred: &dyn Predictor, n: usize, seed: u64, q: u32) -> Result<Estimate> {
    if n < 2 {
        return invalid("dirichlet_energy needs at least 2 samples");
    }
    if q != 1 && q != 2 {
        return invalid(format!("q must be 1 or 2, got {q}"));
    }
    Ok(mc_scalar(pred.dim(), n, seed, |x| {
        let (_, g) = pred.batch(x);
        DVector::from_fn(g.nrows(), |i, _| {
            let s = g.row(i).norm_squared();
            if q == 2 {
                s
            } else {
                s.sqrt()
            }
        })
    }))
}

/// `E (f(x) - f*(x))^2`.
pub fn generalization_mc(pred: &dyn Predictor, truth: &GroundTruth, n: usize, seed: u64) -> Result<Estimate> {
    if n < 2 {
        return invalid("generalization_mc needs at least 2 samples");
    }
    if pred.dim() != truth.dim() {
        return invalid("predictor and truth dimensions differ");
    }
    Ok(mc_scalar(pred.dim(), n, seed, |x| {
        let (v, _) = pred.batch(x);
        let t = truth.eval_rows(x);
        (v - t).map(|e| e * e)
    }))
}

#[derive(Clone, Copy, Debug)]
pub struct IncrementOptions {
    pub restarts: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for IncrementOptions {
    fn default() -> Self {
        Self { restarts: 8, steps: 200, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Increment {
    pub value: f64,
    /// `false`: a lower bound from projected gradient ascent.
    pub exact: bool,
}

/// `sup_{|v| <= delta} |f(x + v) - f(x)|`.
pub fn adversarial_increment(pred: &dyn Predictor, x: &DVector<f64>, delta: f64, opts: &IncrementOptions) -> Result<Increment> {
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    if let Some(qf) = pred.quadratic_form() {
        let (vals, vecs) = qf.eigen();
        let xc = vecs.transpose() * x;
        Ok(Increment { value: quadratic_increment(vals, xc.as_slice(), delta), exact: true })
    } else {
        Ok(Increment { value: ascent_increment(pred, x, delta, opts), exact: false })
    }
}

/// Exact increment of `x^T M x` at `x` with `M = V diag(vals) V^T` and `xc = V^T x`.
/// `q(y) = g^T y + y^T diag(vals) y` with `g = 2 diag(vals) xc`.
pub fn quadratic_increment(vals: &[f64], xc: &[f64], delta: f64) -> f64 {
    let g: Vec<f64> = vals.iter().zip(xc).map(|(l, x)| 2.0 * l * x).collect();
    let h: Vec<f64> = vals.iter().map(|l| 2.0 * l).collect();
    let neg_h: Vec<f64> = h.iter().map(|v| -v).collect();
    let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
    let max_q = -trs::solve_diagonal(&neg_h, &neg_g, delta).value;
    let min_q = trs::solve_diagonal(&h, &g, delta).value;
    max_q.max(-min_q).max(0.0)
}

fn project(v: &mut DVector<f64>, r: f64) {
    let n = v.norm();
    if n > r {
        *v *= r / n;
    }
}

fn ascent_increment(pred: &dyn Predictor, x: &DVector<f64>, delta: f64, opts: &IncrementOptions) -> f64 {
    let f0 = pred.value(x);
    let g0 = pred.gradient(x);
    let d = x.len();
    let gnorm = g0.norm();
    let mut r = rng::stream(opts.seed, rng::STREAM_RESTARTS);
    let mut starts: Vec<DVector<f64>> = Vec::new();
    if gnorm > 0.0 {
        starts.push(&g0 * (delta / gnorm));
        starts.push(&g0 * (-delta / gnorm));
    }
    while starts.len() < opts.restarts.max(1) {
        let mut u = rng::normal_vector(d, &mut r);
        let un = u.norm();
        if un > 0.0 {
            u *= delta * r.random_range(0.5..=1.0) / un;
        }
        starts.push(u);
    }
    let mut best = 0.0_f64;
    for sign in [1.0, -1.0] {
        for start in &starts {
            let mut v = start.clone();
            project(&mut v, delta);
            let mut obj = sign * (pred.value(&(x + &v)) - f0);
            let mut eta = delta / (pred.gradient(&(x + &v)).norm() + 1e-300);
            for _ in 0..opts.steps {
                let grad = pred.gradient(&(x + &v)) * sign;
                let mut improved = false;
                for _ in 0..40 {
                    let mut cand = &v + &grad * eta;
                    project(&mut cand, delta);
                    let c_obj = sign * (pred.value(&(x + &cand)) - f0);
                    if c_obj > obj {
                        v = cand;
                        obj = c_obj;
                        eta *= 2.0;
                        improved = true;
                        break;
                    }
                    eta *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            best = best.max(obj);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IncrementRow {
    pub delta: f64,
    /// `E[Delta_f(x; delta)] / delta`.
    pub mean_ratio: f64,
    pub mean_ratio_se: f64,
    /// `sqrt(E[Delta_f(x; delta)^2]) / delta`.
    pub rms_ratio: f64,
    /// `E ||grad f||` on the same points.
    pub grad_mean: f64,
    /// `sqrt(E ||grad f||^2)` on the same points.
    pub grad_rms: f64,
    pub exact: bool,
}

/// Compares `Delta_f(x; delta)/delta` with the gradient norm as `delta -> 0`.
pub fn increment_derivative_check(
    pred: &dyn Predictor,
    n_points: usize,
    deltas: &[f64],
    seed: u64,
    opts: &IncrementOptions,
) -> Result<Vec<IncrementRow>> {
    if n_points < 2 {
        return invalid("need at least 2 points");
    }
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("delta grid must be positive and strictly decreasing");
    }
    let d = pred.dim();
    let mut r = rng::stream(seed, rng::STREAM_MC_BASE);
    let xs = rng::normal_matrix(n_points, d, &mut r);
    let (_, grads) = pred.batch(&xs);
    let gn: Vec<f64> = (0..n_points).map(|i| grads.row(i).norm()).collect();
    let nf = n_points as f64;
    let grad_mean = gn.iter().sum::<f64>() / nf;
    let grad_rms = (gn.iter().map(|g| g * g).sum::<f64>() / nf).sqrt();
    // Rotate the sample once for quadratic forms.
    let rotated = pred.quadratic_form().map(|qf| {
        let (vals, vecs) = qf.eigen();
        (vals.clone(), &xs * vecs)
    });
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let incs: Vec<(f64, bool)> = (0..n_points)
            .into_par_iter()
            .map(|i| match &rotated {
                Some((vals, xr)) => {
                    let xc: Vec<f64> = xr.row(i).iter().copied().collect();
                    Ok((quadratic_increment(vals, &xc, delta), true))
                }
                None => {
                    let x = xs.row(i).transpose();
                    let inc = adversarial_increment(pred, &x, delta, opts)?;
                    Ok((inc.value, inc.exact))
                }
            })
            .collect::<Result<_>>()?;
        let ratios: Vec<f64> = incs.iter().map(|(v, _)| v / delta).collect();
        let sum: f64 = ratios.iter().sum();
        let sum_sq: f64 = ratios.iter().map(|v| v * v).sum();
        let est = Estimate::from_sums(sum, sum_sq, n_points);
        rows.push(IncrementRow {
            delta,
            mean_ratio: est.mean,
            mean_ratio_se: est.se,
            rms_ratio: (sum_sq / nf).sqrt(),
            grad_mean,
            grad_rms,
            exact: incs.iter().all(|(_, e)| *e),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct UniversalPerturbation {
    /// Top eigenvalue of the sampled `J(f)`.
    pub eigenvalue: f64,
    pub direction: Vec<f64>,
    /// `tr J(f)` on the same sample, i.e. the Monte Carlo `S(f)^2`.
    pub trace: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The sampled gradient field vanished; the direction is arbitrary.
    pub zero_field: bool,
}

/// Power iteration on `J = G^T G / n` for a fixed sample of gradients `G`.
pub fn universal_perturbation(pred: &dyn Predictor, n: usize, power_iters: usize, seed: u64) -> Result<UniversalPerturbation> {
    if power_iters == 0 || n == 0 {
        return invalid("universal_perturbation needs n >= 1 and power_iters >= 1");
    }
    let d = pred.dim();
    let blocks: Vec<DMatrix<f64>> = rng::chunks(n)
        .into_par_iter()
        .map(|(k, _, len)| {
            let mut r = rng::stream(seed, rng::STREAM_MC_BASE + k);
            pred.batch(&rng::normal_matrix(len, d, &mut r)).1
        })
        .collect();
    let nf = n as f64;
    let trace = blocks.iter().map(linalg::frob_sq).sum::<f64>() / nf;
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let parts: Vec<DVector<f64>> = blocks.par_iter().map(|g| g.transpose() * (g * v)).collect();
        parts.into_iter().fold(DVector::zeros(d), |a, p| a + p) / nf
    };
    if trace <= f64::MIN_POSITIVE {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        return Ok(UniversalPerturbation {
            eigenvalue: 0.0,
            direction: e,
            trace: 0.0,
            iterations: 0,
            converged: true,
            zero_field: true,
        });
    }
    let mut r = rng::stream(seed, rng::STREAM_POWER);
    let mut v = rng::normal_vector(d, &mut r);
    v.normalize_mut();
    let mut ray = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..power_iters {
        iterations = it + 1;
        let jv = apply(&v);
        let new_ray = v.dot(&jv);
        let nj = jv.norm();
        if nj == 0.0 {
            break;
        }
        v = jv / nj;
        if (new_ray - ray).abs() < 1e-8 * new_ray.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        ray = new_ray;
    }
    let eigenvalue = v.dot(&apply(&v));
    Ok(UniversalPerturbation {
        eigenvalue,
        direction: v.iter().copied().collect(),
        trace,
        iterations,
        converged,
        zero_field: false,
    })
}

/// Largest relative discrepancy between analytic directional derivatives and
/// central differences (step `1e-5 (1 + |x|)`) over random probes.
pub fn gradient_check(pred: &dyn Predictor, n_probes: usize, seed: u64) -> f64 {
    let d = pred.dim();
    let mut r = rng::stream(seed, rng::STREAM_MC_BASE);
    let mut worst = 0.0_f64;
    for _ in 0..n_probes {
        let x = rng::normal_vector(d, &mut r);
        let mut u = rng::normal_vector(d, &mut r);
        u.normalize_mut();
        let h = 1e-5 * (1.0 + x.norm());
        let fd = (pred.value(&(&x + &u * h)) - pred.value(&(&x - &u * h))) / (2.0 * h);
        let g = pred.gradient(&x);
        let an = g.dot(&u);
        let scale = g.norm().max(fd.abs()).max(1e-12);
        worst = worst.max((fd - an).abs() / scale);
    }
    worst
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LipschitzRow {
    pub d: usize,
    /// `sup_{|x| <= sqrt(d)} |B x| = sqrt(d) |B|_op`.
    pub lipschitz: f64,
    /// `S(f) = |B|_F`.
    pub dirichlet: f64,
    pub dirichlet_mc: f64,
    pub ratio: f64,
}

/// `f(x) = x^T B x / 2` with `B = e1 e1^T`: a Lipschitz bound on the typical
/// ball overstates the average gradient by `sqrt(d)`.
pub fn lipschitz_comparison(dims: &[usize], n_samples: usize, seed: u64) -> Result<Vec<LipschitzRow>> {
    dims.iter()
        .map(|&d| {
            if d == 0 {
                return Err(Error::InvalidInput("dimension must be positive".into()));
            }
            let mut b = DMatrix::zeros(d, d);
            b[(0, 0)] = 1.0;
            let f = QuadraticPredictor::new(&b * 0.5, 0.0)?;
            let mc = dirichlet_energy(&f, n_samples.max(2), seed, 2)?;
            let lipschitz = (d as f64).sqrt();
            let dirichlet = b.norm();
            Ok(LipschitzRow { d, lipschitz, dirichlet, dirichlet_mc: mc.mean.sqrt(), ratio: lipschitz / dirichlet })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub gradient_check: f64,
    pub dirichlet_sq: Estimate,
    pub dirichlet_q1: Estimate,
    pub jf_top: UniversalPerturbation,
    pub increments: Vec<IncrementRow>,
}

#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub samples: usize,
    pub power_iters: usize,
    pub increment_points: usize,
    pub deltas: Vec<f64>,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { samples: 20_000, power_iters: 500, increment_points: 2_000, deltas: vec![1e-1, 1e-2, 1e-3], seed: 0 }
    }
}

/// Full audit. Fails if the predictor's gradient disagrees with finite differences.
pub fn audit(pred: &dyn Predictor, opts: &AuditOptions) -> Result<AuditReport> {
    let gc = gradient_check(pred, 16, opts.seed);
    if gc > 1e-4 {
        return Err(Error::Numerical(format!("gradient check failed: relative error {gc:e}")));
    }
    Ok(AuditReport {
        gradient_check: gc,
        dirichlet_sq: dirichlet_energy(pred, opts.samples, opts.seed, 2)?,
        dirichlet_q1: dirichlet_energy(pred, opts.samples, opts.seed, 1)?,
        jf_top: universal_perturbation(pred, opts.samples, opts.power_iters, opts.seed)?,
        increments: increment_derivative_check(
            pred,
            opts.increment_points,
            &opts.deltas,
            opts.seed,
            &IncrementOptions { seed: opts.seed, ..Default::default() },
        )?,
    })
}
