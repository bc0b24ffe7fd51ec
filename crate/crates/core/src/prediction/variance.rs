//! REML variance components for the single-trait model `y = 1β + g + e`,
//! `g ~ N(0, σ_g K)`, `e ~ N(0, σ_e I)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{brent_minimize, SymEigen};
use crate::scalar::Real;

const H_LOWER: f64 = 1e-6;
const H_GRID: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents<T: Real> {
    pub sigma_g: T,
    pub sigma_e: T,
    pub heritability: T,
    pub intercept: T,
    pub log_likelihood: T,
}

struct Rotated<T: Real> {
    y: DVector<T>,
    x: DVector<T>,
    d: DVector<T>,
}

impl<T: Real> Rotated<T> {
    /// `(restricted log-likelihood, σ², β̂)` at heritability `h`.
    fn profile(&self, h: T) -> (T, T, T) {
        let n = self.y.len();
        let one_minus = T::one() - h;
        let mut sxx = T::zero();
        let mut sxy = T::zero();
        let mut log_det = T::zero();
        let w: Vec<T> = self
            .d
            .iter()
            .map(|&d| {
                let v = h * d + one_minus;
                log_det += v.ln();
                T::one() / v
            })
            .collect();
        for ((&wi, &xi), &yi) in w.iter().zip(self.x.iter()).zip(self.y.iter()) {
            sxx += wi * xi * xi;
            sxy += wi * xi * yi;
        }
        let beta = sxy / sxx;
        let mut rss = T::zero();
        for ((&wi, &xi), &yi) in w.iter().zip(self.x.iter()).zip(self.y.iter()) {
            let r = yi - xi * beta;
            rss += wi * r * r;
        }
        let dof = T::from_count(n - 1);
        let sigma2 = rss / dof;
        let ll = -T::lit(0.5) * (dof * sigma2.ln() + log_det + sxx.ln());
        (ll, sigma2, beta)
    }
}

/// REML estimates using an eigendecomposition of the training kinship.
///
/// The likelihood is profiled over the total variance and the intercept, then
/// maximized over `h ∈ (0, 1)` by a grid scan refined with Brent's method.
pub fn reml_univariate<T: Real>(
    y: &DVector<T>,
    k_eigen: &SymEigen<T>,
) -> Result<VarianceComponents<T>> {
    let n = y.len();
    if n < 3 {
        return Err(Error::InsufficientGenotypes(n));
    }
    if k_eigen.values.len() != n {
        return Err(Error::DimensionMismatch(
            "phenotype vector vs kinship".into(),
        ));
    }
    let u = &k_eigen.vectors;
    let rot = Rotated {
        y: u.tr_mul(y),
        x: u.tr_mul(&DVector::from_element(n, T::one())),
        d: k_eigen.values.map(|v| v.max(T::zero())),
    };
    let lo = T::lit(H_LOWER);
    let hi = T::one() - lo;
    let step = (hi - lo) / T::from_count(H_GRID);
    let mut best = (lo, rot.profile(lo).0);
    for i in 1..=H_GRID {
        let h = lo + step * T::from_count(i);
        let ll = rot.profile(h).0;
        if ll > best.1 {
            best = (h, ll);
        }
    }
    let a = (best.0 - step).max(lo);
    let b = (best.0 + step).min(hi);
    let refined = brent_minimize(|h| -rot.profile(h).0, a, b, T::lit(1e-8), 200);
    let h = if -refined.value > best.1 {
        refined.x
    } else {
        best.0
    };
    let (ll, sigma2, beta) = rot.profile(h);
    if !(sigma2 > T::zero()) || !sigma2.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    Ok(VarianceComponents {
        sigma_g: h * sigma2,
        sigma_e: (T::one() - h) * sigma2,
        heritability: h,
        intercept: beta,
        log_likelihood: ll,
    })
}
