//! Small dense routines for symmetric positive (semi)definite systems.
//!
//! These are written against [`Float`] so that the loss and solver code stays
//! scalar-generic; eigen-decompositions are only needed in `f64` code paths
//! and go through nalgebra directly.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Float, Result};

/// Relative pivot threshold below which a Cholesky factorization is treated
/// as singular.
pub const DEFAULT_PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T: Float> {
    l: DMatrix<T>,
}

impl<T: Float> Cholesky<T> {
    /// Factorizes a symmetric matrix. Pivots below `pivot_tol * max|diag(A)|`
    /// are reported as a rank deficiency carrying the failing pivot index.
    pub fn new(a: &DMatrix<T>, pivot_tol: T) -> std::result::Result<Self, usize> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "cholesky of non-square matrix");
        let scale = (0..n)
            .map(|i| a[(i, i)].abs())
            .fold(T::zero(), |acc, v| acc.max(v));
        let threshold = pivot_tol * scale.max(T::min_positive_value());
        let mut l = DMatrix::<T>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > threshold) {
                return Err(j);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> DMatrix<T> {
        let n = self.dim();
        let mut inv = DMatrix::<T>::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // exact symmetry
        for j in 0..n {
            for i in (j + 1)..n {
                let v = (inv[(i, j)] + inv[(j, i)]) * T::lit(0.5);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse<T: Float>(a: &DMatrix<T>, block: Option<usize>) -> Result<DMatrix<T>> {
    Cholesky::new(a, T::lit(DEFAULT_PIVOT_TOL))
        .map(|c| c.inverse())
        .map_err(|pivot| Error::Rank {
            block,
            detail: format!("matrix of size {} is singular at pivot {pivot}", a.nrows()),
        })
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn spd_solve<T: Float>(a: &DMatrix<T>, b: &[T], block: Option<usize>) -> Result<Vec<T>> {
    Cholesky::new(a, T::lit(DEFAULT_PIVOT_TOL))
        .map(|c| c.solve(b))
        .map_err(|pivot| Error::Rank {
            block,
            detail: format!("system of size {} is singular at pivot {pivot}", a.nrows()),
        })
}

/// Maximum absolute row sum, the operator norm induced by the sup-norm.
pub fn inf_norm<T: Float>(a: &DMatrix<T>) -> T {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<T>())
        .fold(T::zero(), |acc, v| acc.max(v))
}

pub fn max_asymmetry<T: Float>(a: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    nalgebra::SymmetricEigen::new(a.clone()).eigenvalues
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_and_inverts() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let chol = Cholesky::new(&a, 1e-12).unwrap();
        let x = chol.solve(&[1.0, 2.0, 3.0]);
        let back = &a * DVector::from_vec(x);
        for (v, e) in back.iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((*v - e).abs() < 1e-12);
        }
        let inv = chol.inverse();
        let id = &a * &inv;
        assert!((id - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0f32, 1.0, 1.0, 1.0]);
        assert_eq!(Cholesky::new(&a, 1e-6).unwrap_err(), 1);
        assert!(matches!(spd_inverse(&a, Some(3)), Err(Error::Rank { block: Some(3), .. })));
    }

    #[test]
    fn inf_norm_is_max_row_sum() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.25]);
        assert_eq!(inf_norm(&a), 3.0);
    }
}
