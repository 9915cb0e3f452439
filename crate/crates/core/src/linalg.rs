//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn frob_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// Operator norm of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() <= 1200 {
        return sym_eigenvalues(m).iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    }
    // Power iteration on m^2 avoids sign oscillation between +/- extreme eigenvalues.
    let n = m.nrows();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_749).fract());
    x.normalize_mut();
    let mut last = 0.0;
    for _ in 0..2000 {
        let y = m * &x;
        let z = m * &y;
        let nz = z.norm();
        if nz == 0.0 {
            return 0.0;
        }
        let est = y.norm();
        x = z / nz;
        if (est - last).abs() <= 1e-13 * est {
            return est;
        }
        last = est;
    }
    last
}

/// Element-wise square.
pub fn hadamard_sq(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|x| x * x)
}

/// `diag(W B W^T)`.
pub fn quad_diag(w: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let wb = w * b;
    DVector::from_fn(w.nrows(), |j, _| wb.row(j).dot(&w.row(j)))
}

/// `tr(A B)` for symmetric `A`, `B`.
pub fn trace_prod_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Minimum eigenvalue tolerance used for PSD checks, relative to the scale of `m`.
pub const PSD_TOL: f64 = 1e-10;

/// Symmetric PSD square root. Rejects eigenvalues below `-PSD_TOL * max(1, |m|_op)`;
/// smaller negative eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_desc(m);
    let scale = vals.iter().fold(1.0_f64, |a, &x| a.max(x.abs()));
    let min = vals.last().copied().unwrap_or(0.0);
    if min < -PSD_TOL * scale {
        return Err(Error::NotPsd(min));
    }
    let s = DVector::from_iterator(vals.len(), vals.iter().map(|&x| x.max(0.0).sqrt()));
    Ok(&vecs * DMatrix::from_diagonal(&s) * vecs.transpose())
}

pub fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} contains non-finite entries")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let s = psd_sqrt(&a).unwrap();
        assert!((&s * &s - &a).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(psd_sqrt(&a), Err(Error::NotPsd(_))));
    }

    #[test]
    fn power_iteration_matches_eigen() {
        let n = 1300;
        let mut m = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0);
        m = symmetrize(&m);
        let exact = sym_eigenvalues(&m).iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        let approx = sym_op_norm(&m);
        assert!((exact - approx).abs() < 1e-8 * exact);
    }
}
