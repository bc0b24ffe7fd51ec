//! Solver for `(Σ_g ⊗ K + Σ_e ⊗ I) vec(X) = vec(B)` by simultaneous diagonalization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SymEigen;
use crate::scalar::Real;

/// Prepared factorization of `Σ_g ⊗ K + Σ_e ⊗ I`.
///
/// With `Σ_e = L L^T`, `L^{-1} Σ_g L^{-T} = U S U^T` and `K = Q D Q^T`, the
/// system `K X Σ_g + X Σ_e = B` becomes elementwise division by `d_i s_j + 1`.
#[derive(Debug, Clone)]
pub struct KronSolver<T: Real> {
    q: DMatrix<T>,
    d: DVector<T>,
    /// `L^{-T} U`.
    right: DMatrix<T>,
    s: DVector<T>,
}

impl<T: Real> KronSolver<T> {
    pub fn new(sigma_g: &DMatrix<T>, sigma_e: &DMatrix<T>, k: &DMatrix<T>) -> Result<Self> {
        Self::with_eigen(sigma_g, sigma_e, &SymEigen::new(k))
    }

    /// Reuses an existing eigendecomposition of `K`.
    pub fn with_eigen(
        sigma_g: &DMatrix<T>,
        sigma_e: &DMatrix<T>,
        k_eigen: &SymEigen<T>,
    ) -> Result<Self> {
        let t = sigma_g.nrows();
        if sigma_g.shape() != (t, t) || sigma_e.shape() != (t, t) {
            return Err(Error::DimensionMismatch("trait covariance matrices".into()));
        }
        let chol = sigma_e.clone().cholesky().ok_or(Error::SingularSigmaE)?;
        let l = chol.l();
        let l_inv = l
            .clone()
            .solve_lower_triangular(&DMatrix::identity(t, t))
            .ok_or(Error::SingularSigmaE)?;
        let whitened = &l_inv * sigma_g * l_inv.transpose();
        let pencil = SymEigen::new(&whitened);
        let right = l_inv.transpose() * &pencil.vectors;
        let solver = Self {
            q: k_eigen.vectors.clone(),
            d: k_eigen.values.clone(),
            right,
            s: pencil.values,
        };
        let tiny = T::eps() * T::lit(16.0);
        for &di in solver.d.iter() {
            for &sj in solver.s.iter() {
                if (di * sj + T::one()).abs() < tiny {
                    return Err(Error::SingularV);
                }
            }
        }
        Ok(solver)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_traits(&self) -> usize {
        self.s.len()
    }

    /// Solves for `X` (`n × t`) given `rhs` (`n × t`).
    pub fn solve(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        if rhs.shape() != (self.n(), self.n_traits()) {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side is {:?}, expected {:?}",
                rhs.shape(),
                (self.n(), self.n_traits())
            )));
        }
        let mut z = self.q.tr_mul(rhs) * &self.right;
        for j in 0..z.ncols() {
            for i in 0..z.nrows() {
                z[(i, j)] /= self.d[i] * self.s[j] + T::one();
            }
        }
        Ok(&self.q * z * self.right.transpose())
    }
}

/// One-shot form of [`KronSolver`]: returns `X` with `K X Σ_g + X Σ_e = rhs`,
/// i.e. `vec(X) = (Σ_g ⊗ K + Σ_e ⊗ I)^{-1} vec(rhs)`.
pub fn fast_kron_solve<T: Real>(
    sigma_g: &DMatrix<T>,
    sigma_e: &DMatrix<T>,
    k: &DMatrix<T>,
    rhs: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    if k.nrows() != k.ncols() || k.nrows() != rhs.nrows() {
        return Err(Error::DimensionMismatch(
            "kinship and right-hand side".into(),
        ));
    }
    KronSolver::new(sigma_g, sigma_e, k)?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_genetic_covariance_scales_by_residual_inverse() {
        let sg = DMatrix::zeros(2, 2);
        let se = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 1.0, 0.3, 0.1, 0.3, 1.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = fast_kron_solve(&sg, &se, &k, &b).unwrap();
        let expected = &b * se.clone().try_inverse().unwrap();
        assert!((x - expected).amax() < 1e-12);
    }

    #[test]
    fn single_trait_reduces_to_univariate() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.4, 0.2, 0.4, 1.0]);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 0.5]);
        let x = fast_kron_solve(
            &DMatrix::from_element(1, 1, 0.7),
            &DMatrix::from_element(1, 1, 0.3),
            &k,
            &b,
        )
        .unwrap();
        let v = &k * 0.7 + DMatrix::identity(3, 3) * 0.3;
        let expected = v.try_inverse().unwrap() * &b;
        for i in 0..3 {
            assert_abs_diff_eq!(x[(i, 0)], expected[(i, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_residual_is_rejected() {
        let se = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = KronSolver::new(
            &DMatrix::identity(2, 2),
            &se,
            &DMatrix::<f64>::identity(3, 3),
        );
        assert!(matches!(r, Err(Error::SingularSigmaE)));
    }
}
