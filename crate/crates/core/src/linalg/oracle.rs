//! Independent singular value route used to verify [`super::singular_values`].
//!
//! Forms the smaller Gram matrix and diagonalizes it with cyclic Jacobi
//! rotations. Squaring the matrix halves the attainable relative accuracy of
//! small singular values, so this is only meant for test-scale inputs.

use super::{LinalgError, Matrix, SingularSpectrum};

/// Largest `min(rows, cols)` the oracle accepts.
pub const ORACLE_MAX_DIM: usize = 64;

const MAX_SWEEPS: usize = 100;

pub fn gram_eigen_oracle(m: &Matrix) -> Result<SingularSpectrum, LinalgError> {
    let k = m.rows().min(m.cols());
    if k > ORACLE_MAX_DIM {
        return Err(LinalgError::OracleTooLarge { min_dim: k, limit: ORACLE_MAX_DIM });
    }
    let gram = gram_of_smaller_side(m);
    let eig = jacobi_eigenvalues(gram, k)?;
    SingularSpectrum::from_unsorted(eig.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

/// `MᵀM` when `M` is tall, `MMᵀ` when wide; row-major `k x k`.
fn gram_of_smaller_side(m: &Matrix) -> Vec<f64> {
    let tall = m.rows() >= m.cols();
    let k = m.rows().min(m.cols());
    let len = m.rows().max(m.cols());
    let entry = |vec: usize, idx: usize| if tall { m.get(idx, vec) } else { m.get(vec, idx) };
    let mut g = vec![0.0; k * k];
    for p in 0..k {
        for q in p..k {
            let s: f64 = (0..len).map(|t| entry(p, t) * entry(q, t)).sum();
            g[p * k + q] = s;
            g[q * k + p] = s;
        }
    }
    g
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi, iterated until the
/// off-diagonal Frobenius norm falls below `1e-14 * trace`.
fn jacobi_eigenvalues(mut a: Vec<f64>, k: usize) -> Result<Vec<f64>, LinalgError> {
    let trace: f64 = (0..k).map(|i| a[i * k + i]).sum();
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..k {
            for q in 0..k {
                if p != q {
                    s += a[p * k + q] * a[p * k + q];
                }
            }
        }
        s.sqrt()
    };

    for _ in 0..MAX_SWEEPS {
        if off_norm(&a) <= 1e-14 * trace {
            return Ok((0..k).map(|i| a[i * k + i]).collect());
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[p * k + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * k + p];
                let aqq = a[q * k + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let arp = a[r * k + p];
                    let arq = a[r * k + q];
                    a[r * k + p] = c * arp - s * arq;
                    a[r * k + q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let apr = a[p * k + r];
                    let aqr = a[q * k + r];
                    a[p * k + r] = c * apr - s * aqr;
                    a[q * k + r] = s * apr + c * aqr;
                }
                a[p * k + q] = 0.0;
                a[q * k + p] = 0.0;
            }
        }
    }
    Err(LinalgError::NoConvergence { iterations: MAX_SWEEPS })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity() {
        let s = gram_eigen_oracle(&Matrix::identity(2).unwrap()).unwrap();
        assert_eq!(s.values(), &[1.0, 1.0]);
    }

    #[test]
    fn diagonal() {
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(gram_eigen_oracle(&m).unwrap().values(), &[4.0, 3.0]);
    }

    #[test]
    fn rank_one() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let s = gram_eigen_oracle(&m).unwrap();
        assert!((s.values()[0] - 5.0).abs() < 1e-14);
        assert!(s.values()[1] < 1e-7);
    }

    #[test]
    fn refuses_large() {
        let m = Matrix::zeros(65, 65).unwrap();
        assert!(matches!(
            gram_eigen_oracle(&m),
            Err(LinalgError::OracleTooLarge { min_dim: 65, .. })
        ));
        // a long thin matrix is fine
        assert!(gram_eigen_oracle(&Matrix::zeros(500, 3).unwrap()).is_ok());
    }
}
