//! Trust-region subproblem in a diagonal basis:
//! minimize `0.5 sum h_i y_i^2 + sum b_i y_i` subject to `|y| <= radius`.
//!
//! The boundary solution is `y_i = -b_i / (h_i + mu)` with the multiplier
//! `mu >= max(0, -min h)` solving `|y(mu)| = radius`. The secular equation
//! `1/|y(mu)| - 1/radius = 0` is solved by Newton steps safeguarded with
//! bisection. In the hard case (no gradient component along the bottom
//! eigenspace) the step is completed along a bottom eigenvector.

#[derive(Clone, Debug)]
pub struct TrsSolution {
    pub y: Vec<f64>,
    pub value: f64,
    pub multiplier: f64,
    pub interior: bool,
    pub hard_case: bool,
}

fn objective(h: &[f64], b: &[f64], y: &[f64]) -> f64 {
    h.iter().zip(b).zip(y).map(|((h, b), y)| 0.5 * h * y * y + b * y).sum()
}

fn step(h: &[f64], b: &[f64], mu: f64) -> Vec<f64> {
    h.iter().zip(b).map(|(h, b)| if *b == 0.0 { 0.0 } else { -b / (h + mu) }).collect()
}

fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn solve_diagonal(h: &[f64], b: &[f64], radius: f64) -> TrsSolution {
    assert_eq!(h.len(), b.len());
    assert!(radius > 0.0);
    let n = h.len();
    let hmin = h.iter().copied().fold(f64::INFINITY, f64::min);
    let hscale = h.iter().fold(0.0_f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let bnorm = norm(b);

    if hmin > 0.0 {
        let y = step(h, b, 0.0);
        if norm(&y) <= radius {
            let value = objective(h, b, &y);
            return TrsSolution { y, value, multiplier: 0.0, interior: true, hard_case: false };
        }
    }

    let lo0 = (-hmin).max(0.0);
    let bottom: Vec<usize> = (0..n).filter(|&i| h[i] - hmin <= 1e-12 * hscale).collect();
    let b_bottom = bottom.iter().map(|&i| b[i] * b[i]).sum::<f64>().sqrt();
    if b_bottom <= 1e-14 * bnorm.max(f64::MIN_POSITIVE) || bnorm == 0.0 {
        // Candidate hard case: solve on the complement at mu = lo0.
        let mut y: Vec<f64> = (0..n)
            .map(|i| if bottom.contains(&i) || b[i] == 0.0 { 0.0 } else { -b[i] / (h[i] + lo0) })
            .collect();
        let ny = norm(&y);
        if ny <= radius {
            if hmin < 0.0 {
                let t = (radius * radius - ny * ny).max(0.0).sqrt();
                y[bottom[0]] = t;
            }
            let value = objective(h, b, &y);
            return TrsSolution { y, value, multiplier: lo0, interior: hmin >= 0.0, hard_case: true };
        }
    }

    // |y(hi)| <= |b| / (hmin + hi) <= radius.
    let mut lo = lo0;
    let mut hi = lo0 + bnorm / radius + f64::MIN_POSITIVE;
    if hi <= lo {
        hi = lo * (1.0 + 1e-12) + 1e-300;
    }
    let mut mu = hi;
    for _ in 0..500 {
        let y = step(h, b, mu);
        let ny = norm(&y);
        let phi = 1.0 / ny - 1.0 / radius;
        if (ny - radius).abs() <= 1e-14 * radius {
            break;
        }
        if phi < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1e-300) {
            break;
        }
        let dsum: f64 = h.iter().zip(b).map(|(h, b)| b * b / (h + mu).powi(3)).sum();
        let dphi = dsum / ny.powi(3);
        let newton = mu - phi / dphi;
        mu = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    let y = step(h, b, mu);
    let value = objective(h, b, &y);
    TrsSolution { y, value, multiplier: mu, interior: false, hard_case: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_and_boundary() {
        // min 0.5*2 y^2 - 2 y -> y = 1 (interior for radius 2, boundary for 0.5)
        let s = solve_diagonal(&[2.0], &[-2.0], 2.0);
        assert!(s.interior && (s.y[0] - 1.0).abs() < 1e-15);
        let s = solve_diagonal(&[2.0], &[-2.0], 0.5);
        assert!((s.y[0] - 0.5).abs() < 1e-12);
        assert!((s.value - (0.25 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn hard_case_uses_bottom_direction() {
        let s = solve_diagonal(&[-2.0, 1.0], &[0.0, 0.0], 1.0);
        assert!(s.hard_case);
        assert!((s.value + 1.0).abs() < 1e-14);
        let s = solve_diagonal(&[-2.0, 4.0], &[0.0, 1.0], 1.0);
        // y2 = -1/(4+2) on the complement, remainder along y1.
        assert!(s.hard_case);
        let expect = 0.5 * 4.0 / 36.0 - 1.0 / 6.0 + 0.5 * -2.0 * (1.0 - 1.0 / 36.0);
        assert!((s.value - expect).abs() < 1e-13);
    }

    #[test]
    fn indefinite_boundary_beats_grid_search() {
        let h = [-1.0, 0.5, 3.0];
        let b = [0.3, -0.7, 0.2];
        let r = 0.8;
        let s = solve_diagonal(&h, &b, r);
        assert!((norm(&s.y) - r).abs() < 1e-12);
        let mut best = f64::INFINITY;
        let k = 200;
        for i in 0..k {
            let th = std::f64::consts::PI * i as f64 / k as f64;
            for j in 0..2 * k {
                let ph = std::f64::consts::PI * j as f64 / k as f64;
                let y = [r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()];
                best = best.min(objective(&h, &b, &y));
            }
        }
        assert!(s.value <= best + 1e-12);
        assert!(best - s.value < 1e-3);
    }
}
