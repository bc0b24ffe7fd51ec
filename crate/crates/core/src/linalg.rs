//! Small dense linear-algebra helpers and a bounded scalar minimizer.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct SymEigen<T: Real> {
    pub values: DVector<T>,
    /// Columns are the eigenvectors matching `values`.
    pub vectors: DMatrix<T>,
}

impl<T: Real> SymEigen<T> {
    pub fn new(a: &DMatrix<T>) -> Self {
        let eig = a.clone().symmetric_eigen();
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .partial_cmp(&eig.eigenvalues[i])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    pub fn min_value(&self) -> T {
        self.values[self.values.len() - 1]
    }

    pub fn max_value(&self) -> T {
        self.values[0]
    }

    /// Rebuilds `V f(D) V^T` for an eigenvalue map `f`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> DMatrix<T> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        let mut out = scaled * self.vectors.transpose();
        symmetrize(&mut out);
        out
    }
}

/// Replaces `a` by `(a + a^T) / 2`.
pub fn symmetrize<T: Real>(a: &mut DMatrix<T>) {
    let n = a.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (a[(i, j)] + a[(j, i)]) * half;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry<T: Real>(a: &DMatrix<T>) -> T {
    let n = a.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    let mut inv = a.clone().cholesky()?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Sub-matrix with the given row and column index sets.
pub fn submatrix<T: Real>(a: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Principal sub-matrix on `idx`.
pub fn principal<T: Real>(a: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    submatrix(a, idx, idx)
}

pub fn log_det_spd<T: Real>(a: &DMatrix<T>) -> Option<T> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = T::zero();
    for i in 0..a.nrows() {
        acc += l[(i, i)].ln();
    }
    Some(acc * T::lit(2.0))
}

/// Outcome of a bounded scalar minimization.
#[derive(Debug, Clone, Copy)]
pub struct Minimum<T> {
    pub x: T,
    pub value: T,
    pub evaluations: usize,
}

/// Brent's golden-section / parabolic-interpolation minimizer on `[lo, hi]`.
///
/// Port of the classic `fmin` routine; the endpoints themselves are never
/// evaluated and the returned abscissa is within `tol` of a local minimum.
pub fn brent_minimize<T: Real>(
    mut f: impl FnMut(T) -> T,
    lo: T,
    hi: T,
    tol: T,
    max_iter: usize,
) -> Minimum<T> {
    let golden = (T::lit(3.0) - T::lit(5.0).sqrt()) * T::lit(0.5);
    let sqrt_eps = T::eps().sqrt();
    let tol3 = tol / T::lit(3.0);
    let two = T::lit(2.0);
    let half = T::lit(0.5);

    let (mut a, mut b) = (lo, hi);
    let mut v = a + golden * (b - a);
    let mut w = v;
    let mut x = v;
    let mut d = T::zero();
    let mut e = T::zero();
    let mut fx = f(x);
    let mut fv = fx;
    let mut fw = fx;
    let mut evaluations = 1;

    for _ in 0..max_iter {
        let xm = (a + b) * half;
        let tol1 = sqrt_eps * x.abs() + tol3;
        let t2 = tol1 * two;
        if (x - xm).abs() <= t2 - (b - a) * half {
            break;
        }
        let mut p = T::zero();
        let mut q = T::zero();
        let mut r = T::zero();
        if e.abs() > tol1 {
            r = (x - w) * (fx - fv);
            q = (x - v) * (fx - fw);
            p = (x - v) * q - (x - w) * r;
            q = (q - r) * two;
            if q > T::zero() {
                p = -p;
            } else {
                q = -q;
            }
            r = e;
            e = d;
        }
        if p.abs() >= (q * half * r).abs() || p <= q * (a - x) || p >= q * (b - x) {
            e = if x < xm { b - x } else { a - x };
            d = golden * e;
        } else {
            d = p / q;
            let u = x + d;
            if u - a < t2 || b - u < t2 {
                d = if x >= xm { -tol1 } else { tol1 };
            }
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > T::zero() {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        evaluations += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum {
        x,
        value: fx,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eigen_sorted_descending() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let e = SymEigen::new(&a);
        assert_abs_diff_eq!(e.values[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[2], 1.0, epsilon = 1e-12);
        let back = e.reconstruct_with(|v| v);
        assert!((back - a).norm() < 1e-12);
    }

    #[test]
    fn brent_finds_parabola_minimum() {
        let m = brent_minimize(|x: f64| (x - 0.3).powi(2) + 1.0, 0.0, 1.0, 1e-8, 200);
        assert_abs_diff_eq!(m.x, 0.3, epsilon = 1e-7);
        assert_abs_diff_eq!(m.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn brent_converges_to_boundary() {
        let m = brent_minimize(|x: f64| -x, 1e-6, 1.0, 1e-6, 200);
        assert!(m.x > 1.0 - 1e-5);
    }

    #[test]
    fn brent_in_single_precision() {
        let m = brent_minimize(|x: f32| (x - 0.25).powi(2), 0.0, 1.0, 1e-4, 200);
        assert!((m.x - 0.25).abs() < 1e-3);
    }

    #[test]
    fn log_det_matches_product() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        assert_abs_diff_eq!(log_det_spd(&a).unwrap(), 11.0f64.ln(), epsilon = 1e-12);
    }
}
