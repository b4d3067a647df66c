//! Power-iteration eigenvalue routines for small dense symmetric matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

fn start_vector(n: usize) -> DVector<f64> {
    // fixed irregular start so the iteration is not orthogonal to structured
    // eigenvectors such as the all-ones vector
    let v = DVector::from_fn(n, |i, _| {
        let x = ((i as f64 + 1.0) * 0.618_033_988_749_894_9).fract();
        x - 0.5 + 1e-3 * (i as f64 + 1.0)
    });
    let norm = v.norm();
    v / norm
}

/// Largest absolute eigenvalue of a symmetric matrix, i.e. its spectral norm.
pub fn symmetric_spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if a.iter().all(|x| x.abs() <= f64::EPSILON * 1e-2) {
        return Ok(0.0);
    }
    // iterate on A^2 so that eigenvalues of opposite sign cannot make the
    // iteration oscillate; A^2 is PSD with top eigenvalue ||A||^2
    let a2 = a * a;
    let mut v = start_vector(n);
    let mut estimate = 0.0_f64;
    for _ in 0..POWER_MAX_ITER {
        let w = &a2 * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(next.max(0.0).sqrt());
        }
        estimate = next;
    }
    Err(Error::NotConverged {
        what: "power iteration",
        iterations: POWER_MAX_ITER,
    })
}

/// Smallest eigenvalue of a symmetric positive semidefinite matrix via
/// inverse power iteration. Returns 0 when the matrix is numerically singular.
pub fn smallest_eigenvalue_psd(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let chol = match a.clone().cholesky() {
        Some(c) => c,
        None => return Ok(0.0),
    };
    let mut v = start_vector(n);
    let mut estimate = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let w = chol.solve(&v);
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Ok(0.0);
        }
        // Rayleigh quotient of A^{-1}
        let inv_eig = v.dot(&w);
        v = w / norm;
        let next = 1.0 / inv_eig;
        if (next - estimate).abs() <= POWER_TOL * next.abs() {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::NotConverged {
        what: "inverse power iteration",
        iterations: POWER_MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &b + b.transpose()
    }

    #[test]
    fn spectral_norm_matches_symmetric_eigen() {
        for seed in 0..5 {
            let a = random_symmetric(8, seed);
            let eig = a.clone().symmetric_eigen();
            let expected = eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let got = symmetric_spectral_norm(&a).unwrap();
            assert!((got - expected).abs() <= 1e-8 * expected, "{got} vs {expected}");
        }
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        assert_eq!(symmetric_spectral_norm(&DMatrix::zeros(4, 4)).unwrap(), 0.0);
    }

    #[test]
    fn smallest_eigenvalue_matches_symmetric_eigen() {
        for seed in 0..5 {
            let b = random_symmetric(6, 100 + seed);
            let a = &b * &b + DMatrix::identity(6, 6) * 0.1;
            let eig = a.clone().symmetric_eigen();
            let expected = eig.eigenvalues.min();
            let got = smallest_eigenvalue_psd(&a).unwrap();
            assert!((got - expected).abs() <= 1e-7 * expected.max(1.0), "{got} vs {expected}");
        }
    }

    #[test]
    fn singular_matrix_reports_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(smallest_eigenvalue_psd(&a).unwrap(), 0.0);
    }
}
