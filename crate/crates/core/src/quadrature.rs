//! Gaussian expectations by quadrature.
//!
//! Smooth integrands use Gauss-Hermite rules rescaled to the standard normal
//! weight. Integrands with kinks (ReLU and friends) lose the spectral
//! convergence of Gauss-Hermite, so those are integrated piecewise with
//! Gauss-Legendre panels against the normal density, split at the kinks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Nodes `g_i` and weights `w_i` with `sum w_i f(g_i) ~ E f(G)`, `G ~ N(0, 1)`.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    /// Sums mirrored node pairs first, so odd integrands on a symmetric rule
    /// give exactly zero.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let n = self.nodes.len();
        let mut total = 0.0;
        for i in 0..n / 2 {
            let j = n - 1 - i;
            total += self.weights[i] * f(self.nodes[i]) + self.weights[j] * f(self.nodes[j]);
        }
        if n % 2 == 1 {
            total += self.weights[n / 2] * f(self.nodes[n / 2]);
        }
        total
    }
}

/// Gauss-Hermite rule for the standard normal weight, nodes ascending.
///
/// Nodes start from the eigenvalues of the Jacobi matrix (Golub-Welsch) and
/// are polished by Newton steps on the orthonormal three-term recurrence,
/// which also yields the weights. Far-tail nodes whose recurrence overflows
/// keep the Golub-Welsch values; their weights are below 1e-150.
pub fn gauss_hermite(n: usize) -> Result<Rule> {
    if n == 0 {
        return invalid("quadrature needs at least one node");
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^{-1/4}
    let nf = n as f64;
    // Physicists' Hermite Jacobi matrix: off-diagonal sqrt(k/2).
    let jac = DMatrix::from_fn(n, n, |i, j| if i + 1 == j || j + 1 == i { ((i.max(j)) as f64 / 2.0).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &(x0, w0) in &pairs {
        let mut z = x0;
        let mut w = w0;
        for _ in 0..20 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            let pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            if !(dz.is_finite() && pp.is_finite() && pp != 0.0) {
                break;
            }
            z -= dz;
            let wn = 2.0 / (pp * pp) / PI.sqrt();
            if wn.is_finite() {
                w = wn;
            }
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes.push(z * 2f64.sqrt());
        weights.push(w);
    }
    // Exact symmetry so that odd integrands cancel pairwise.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numerical(format!("Gauss-Hermite rule with {n} nodes has non-finite weights")));
    }
    Ok(Rule { nodes, weights })
}

/// Gauss-Legendre rule on `[-1, 1]` (plain Lebesgue weight).
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return invalid("quadrature needs at least one node");
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// Piecewise Gauss-Legendre rule for the standard normal weight on
/// `[-cutoff, cutoff]`, with panel edges at each breakpoint.
pub fn piecewise_normal_rule(breakpoints: &[f64], cutoff: f64, panel_width: f64, order: usize) -> Result<Rule> {
    let (gx, gw) = gauss_legendre(order)?;
    Ok(panel_rule(&gx, &gw, breakpoints, cutoff, panel_width))
}

fn panel_rule(gx: &[f64], gw: &[f64], breakpoints: &[f64], cutoff: f64, panel_width: f64) -> Rule {
    let mut edges: Vec<f64> = vec![-cutoff, cutoff];
    edges.extend(breakpoints.iter().copied().filter(|b| b.abs() < cutoff));
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let norm = 1.0 / (2.0 * PI).sqrt();
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let panels = ((b - a) / panel_width).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (&t, &wt) in gx.iter().zip(gw) {
                let g = lo + 0.5 * h * (t + 1.0);
                nodes.push(g);
                weights.push(0.5 * h * wt * norm * (-0.5 * g * g).exp());
            }
        }
    }
    Rule { nodes, weights }
}

/// Default number of Gauss-Hermite nodes for one-dimensional expectations.
pub const DEFAULT_NODES: usize = 200;
/// Default nodes per axis for bivariate expectations.
pub const DEFAULT_BIVARIATE_NODES: usize = 80;

/// One- and two-dimensional Gaussian expectations.
#[derive(Clone, Debug)]
pub struct GaussianIntegrator {
    hermite: Rule,
    bivariate: Rule,
    cutoff: f64,
    /// Legendre panel nodes for kinked bivariate integrands.
    panel: (Vec<f64>, Vec<f64>),
}

/// Half-width and panel order of the bivariate piecewise rules.
const PAIR_CUTOFF: f64 = 10.0;
const PAIR_ORDER: usize = 16;

impl GaussianIntegrator {
    pub fn new(nodes: usize, bivariate_nodes: usize) -> Result<Self> {
        Ok(Self {
            hermite: gauss_hermite(nodes)?,
            bivariate: gauss_hermite(bivariate_nodes)?,
            cutoff: 12.0,
            panel: gauss_legendre(PAIR_ORDER)?,
        })
    }

    pub fn nodes(&self) -> usize {
        self.hermite.len()
    }

    /// Rule used for `E f(G)` when `f` has kinks at `breakpoints`.
    pub fn rule_for(&self, breakpoints: &[f64]) -> Result<Rule> {
        if breakpoints.is_empty() {
            Ok(self.hermite.clone())
        } else {
            piecewise_normal_rule(breakpoints, self.cutoff, 2.0, 32)
        }
    }

    /// `E f(G)`, `G ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64, breakpoints: &[f64]) -> Result<f64> {
        let v = if breakpoints.is_empty() { self.hermite.expect(f) } else { self.rule_for(breakpoints)?.expect(f) };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical("Gaussian expectation is not finite".into()))
        }
    }

    /// `E f(X) g(Y)` with `(X, Y)` centered Gaussian, `Var X = a`, `Var Y = b`,
    /// `Cov = c`. `f_kinks`, `g_kinks` are the nonsmooth points of `f` and `g`.
    #[allow(clippy::too_many_arguments)]
    pub fn expect_pair(
        &self,
        f: impl Fn(f64) -> f64,
        f_kinks: &[f64],
        g: impl Fn(f64) -> f64,
        g_kinks: &[f64],
        a: f64,
        b: f64,
        c: f64,
    ) -> Result<f64> {
        let scaled = |k: &[f64], s: f64| -> Vec<f64> { k.iter().map(|x| x / s).collect() };
        let v = if a <= 0.0 || b <= 0.0 {
            // A zero-variance coordinate is identically zero.
            let (sa, sb) = (a.max(0.0).sqrt(), b.max(0.0).sqrt());
            let ef = if sa > 0.0 { self.expect(|t| f(sa * t), &scaled(f_kinks, sa))? } else { f(0.0) };
            let eg = if sb > 0.0 { self.expect(|t| g(sb * t), &scaled(g_kinks, sb))? } else { g(0.0) };
            ef * eg
        } else {
            let (sa, sb) = (a.sqrt(), b.sqrt());
            let r = (c / (sa * sb)).clamp(-1.0, 1.0);
            if r.abs() > 1.0 - 1e-12 {
                let s = r.signum();
                let mut kinks = scaled(f_kinks, sa);
                kinks.extend(g_kinks.iter().map(|x| s * x / sb));
                self.expect(|t| f(sa * t) * g(s * sb * t), &kinks)?
            } else if f_kinks.is_empty() && g_kinks.is_empty() {
                let q = (1.0 - r * r).sqrt();
                let br = &self.bivariate;
                let mut total = 0.0;
                for (&t1, &w1) in br.nodes.iter().zip(&br.weights) {
                    let fx = f(sa * t1);
                    if fx == 0.0 {
                        continue;
                    }
                    let base = r * t1;
                    let inner: f64 = br.nodes.iter().zip(&br.weights).map(|(&t2, &w2)| w2 * g(sb * (base + q * t2))).sum();
                    total += w1 * fx * inner;
                }
                total
            } else {
                // Y = sb (r T1 + q T2): the kinks of g move with the outer node.
                let q = (1.0 - r * r).sqrt();
                let (gx, gw) = &self.panel;
                let outer = panel_rule(gx, gw, &scaled(f_kinks, sa), PAIR_CUTOFF, 2.0);
                let mut total = 0.0;
                for (&t1, &w1) in outer.nodes.iter().zip(&outer.weights) {
                    let fx = f(sa * t1);
                    if fx == 0.0 {
                        continue;
                    }
                    let base = r * t1;
                    let moved: Vec<f64> = g_kinks.iter().map(|k| (k / sb - base) / q).collect();
                    let inner = panel_rule(gx, gw, &moved, PAIR_CUTOFF, 2.0);
                    total += w1 * fx * inner.expect(|t2| g(sb * (base + q * t2)));
                }
                total
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical("bivariate Gaussian expectation is not finite".into()))
        }
    }
}

impl Default for GaussianIntegrator {
    fn default() -> Self {
        Self::new(DEFAULT_NODES, DEFAULT_BIVARIATE_NODES).expect("default quadrature rules")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for n in [5, 20, 80, 200] {
            let r = gauss_hermite(n).unwrap();
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-13, "n={n} sum={sum}");
            assert!((r.expect(|t| t * t) - 1.0).abs() < 1e-12);
            if n >= 5 {
                assert!((r.expect(|t| t.powi(4)) - 3.0).abs() < 1e-11);
            }
            assert!(r.expect(|t| t.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10).unwrap();
        let s: f64 = x.iter().zip(&w).map(|(t, v)| v * t.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn piecewise_rule_handles_relu() {
        let r = piecewise_normal_rule(&[0.0], 12.0, 2.0, 32).unwrap();
        let relu = r.expect(|t| t.max(0.0));
        assert!((relu - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-14);
        assert!((r.expect(|t| t.max(0.0).powi(2)) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn pair_expectation_of_products() {
        let q = GaussianIntegrator::default();
        // E[X^2 Y^2] = ab + 2c^2
        let (a, b, c) = (1.3, 0.7, 0.4);
        let v = q.expect_pair(|x| x * x, &[], |y| y * y, &[], a, b, c).unwrap();
        assert!((v - (a * b + 2.0 * c * c)).abs() < 1e-12);
        // Degenerate correlation goes through the 1-D path.
        let v = q.expect_pair(|x| x * x, &[], |y| y * y, &[], 2.0, 2.0, 2.0).unwrap();
        assert!((v - 12.0).abs() < 1e-12);
    }

    #[test]
    fn pair_expectation_of_kinked_functions() {
        // Arc-cosine kernels for correlation r between unit-variance inputs.
        let q = GaussianIntegrator::default();
        let relu = |t: f64| t.max(0.0);
        let step = |t: f64| if t > 0.0 { 1.0 } else { 0.0 };
        for r in [-0.9, -0.3, 0.0, 0.5, 0.97] {
            let (a, b) = (1.7_f64, 0.6_f64);
            let c = r * (a * b).sqrt();
            let th = f64::acos(r);
            let k1 = (a * b).sqrt() * ((1.0 - r * r).sqrt() + (PI - th) * r) / (2.0 * PI);
            let k0 = (PI - th) / (2.0 * PI);
            let v1 = q.expect_pair(relu, &[0.0], relu, &[0.0], a, b, c).unwrap();
            let v0 = q.expect_pair(step, &[0.0], step, &[0.0], a, b, c).unwrap();
            assert!((v1 - k1).abs() < 1e-10, "r={r}: {v1} vs {k1}");
            assert!((v0 - k0).abs() < 1e-10, "r={r}: {v0} vs {k0}");
        }
    }
}
