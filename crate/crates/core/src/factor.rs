//! Latent dimension selection, maximum-likelihood factor analysis, varimax
//! rotation and factor-score projection.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_det_spd, symmetrize, SymEigen};
use crate::scalar::Real;

/// Lower bound on fitted uniquenesses (Heywood guard).
pub const UNIQUENESS_FLOOR: f64 = 1e-4;
pub const FIT_TOL: f64 = 1e-8;
pub const FIT_MAX_ITER: usize = 500;
const VARIMAX_TOL: f64 = 1e-10;
const VARIMAX_MAX_SWEEPS: usize = 1000;

/// Largest number of factors identifiable from `p` variables:
/// the largest `m` with `(p - m)^2 >= p + m`.
pub fn ledermann_bound(p: usize) -> usize {
    (0..p)
        .take_while(|&m| (p - m) * (p - m) >= p + m)
        .last()
        .unwrap_or(0)
}

/// Upper edge `(1 + sqrt(p / n))^2` of the Marchenko-Pastur spectrum.
pub fn marchenko_pastur_upper<T: Real>(p: usize, n_genotypes: usize) -> T {
    let ratio = (T::from_count(p) / T::from_count(n_genotypes)).sqrt();
    (T::one() + ratio) * (T::one() + ratio)
}

/// Number of eigenvalues of the regularized correlation matrix above the
/// Marchenko-Pastur edge, capped at the Ledermann bound.
pub fn latent_dimension<T: Real>(r_reg: &DMatrix<T>, n_genotypes: usize) -> usize {
    let p = r_reg.nrows();
    if p == 0 || n_genotypes == 0 {
        return 0;
    }
    let edge = marchenko_pastur_upper::<T>(p, n_genotypes);
    let above = SymEigen::new(r_reg)
        .values
        .iter()
        .filter(|&&v| v > edge)
        .count();
    above.min(ledermann_bound(p))
}

/// Fitted factor model on the correlation scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct FactorModel<T: Real> {
    /// `p × m` loadings.
    pub loadings: DMatrix<T>,
    pub uniquenesses: DVector<T>,
    pub m: usize,
    pub rotated: bool,
    /// Discrepancy `ln|Σ| + tr(R Σ^{-1}) - ln|R| - p` at the optimum.
    pub fit_value: T,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Real> FactorModel<T> {
    pub fn implied(&self) -> DMatrix<T> {
        implied_matrix(&self.loadings, &self.uniquenesses)
    }

    /// Communalities: row sums of squared loadings.
    pub fn communalities(&self) -> DVector<T> {
        DVector::from_fn(self.loadings.nrows(), |i, _| {
            self.loadings
                .row(i)
                .iter()
                .fold(T::zero(), |a, &v| a + v * v)
        })
    }

    /// Returns the model with varimax-rotated loadings.
    pub fn rotate(mut self) -> Self {
        self.loadings = varimax(&self.loadings).loadings;
        self.rotated = true;
        self
    }
}

/// `Λ Λ^T + Ψ`.
pub fn implied_matrix<T: Real>(loadings: &DMatrix<T>, uniquenesses: &DVector<T>) -> DMatrix<T> {
    let mut s = loadings * loadings.transpose();
    for i in 0..s.nrows() {
        s[(i, i)] += uniquenesses[i];
    }
    symmetrize(&mut s);
    s
}

/// `Λ^T Ψ^{-1} Λ`, diagonal for an identified unrotated solution.
pub fn identification_matrix<T: Real>(
    loadings: &DMatrix<T>,
    uniquenesses: &DVector<T>,
) -> DMatrix<T> {
    let mut scaled = loadings.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row /= uniquenesses[i];
    }
    loadings.tr_mul(&scaled)
}

/// Maximum-likelihood discrepancy between a sample matrix and a model-implied one.
pub fn discrepancy<T: Real>(sample: &DMatrix<T>, implied: &DMatrix<T>) -> Option<T> {
    let ld_model = log_det_spd(implied)?;
    let ld_sample = log_det_spd(sample)?;
    let inv = implied.clone().cholesky()?.inverse();
    let trace = (sample * inv).trace();
    Some(ld_model + trace - ld_sample - T::from_count(sample.nrows()))
}

struct Profile<T: Real> {
    value: T,
    grad: DVector<T>,
    loadings: DMatrix<T>,
}

/// Concentrated discrepancy at `psi` with loadings profiled out from the
/// leading eigenpairs of `Ψ^{-1/2} R Ψ^{-1/2}`.
fn profile<T: Real>(r: &DMatrix<T>, psi: &DVector<T>, m: usize) -> Profile<T> {
    let p = r.nrows();
    let inv_sd = psi.map(|v| T::one() / v.sqrt());
    let scaled = DMatrix::from_fn(p, p, |i, j| r[(i, j)] * inv_sd[i] * inv_sd[j]);
    let eig = SymEigen::new(&scaled);
    let mut value = T::zero();
    for (i, &theta) in eig.values.iter().enumerate() {
        if i >= m || theta < T::one() {
            let t = theta.max(T::eps());
            value += t - t.ln() - T::one();
        }
    }
    let mut loadings = DMatrix::zeros(p, m);
    for k in 0..m {
        let w = (eig.values[k] - T::one()).max(T::zero()).sqrt();
        for i in 0..p {
            loadings[(i, k)] = psi[i].sqrt() * eig.vectors[(i, k)] * w;
        }
    }
    let grad = DVector::from_fn(p, |i, _| {
        let common = loadings.row(i).iter().fold(T::zero(), |a, &v| a + v * v);
        (common + psi[i] - r[(i, i)]) / (psi[i] * psi[i])
    });
    Profile {
        value,
        grad,
        loadings,
    }
}

/// Settings for [`fit_factor_model_with`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Stop once the Frobenius change in Ψ between iterations drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub uniqueness_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: FIT_TOL,
            max_iter: FIT_MAX_ITER,
            uniqueness_floor: UNIQUENESS_FLOOR,
        }
    }
}

pub fn fit_factor_model<T: Real>(r: &DMatrix<T>, m: usize) -> Result<FactorModel<T>> {
    fit_factor_model_with(r, m, FitOptions::default())
}

/// Maximum-likelihood factor model for the correlation matrix `r`.
///
/// The loadings are profiled out for given uniquenesses and the concentrated
/// discrepancy is minimized over `ψ = floor + exp(φ)` with L-BFGS. The returned
/// loadings are unrotated, satisfy `Λ^T Ψ^{-1} Λ` diagonal with non-increasing
/// entries, and each column has its largest-magnitude entry positive.
pub fn fit_factor_model_with<T: Real>(
    r: &DMatrix<T>,
    m: usize,
    opts: FitOptions,
) -> Result<FactorModel<T>> {
    let p = r.nrows();
    let bound = ledermann_bound(p);
    if m == 0 || m > bound {
        return Err(Error::InvalidDimension { m, p, bound });
    }
    let floor = T::lit(opts.uniqueness_floor);
    let inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidData("correlation matrix is not positive definite".into()))?
        .inverse();
    // Start from one minus the squared multiple correlations.
    let psi0 = DVector::from_fn(p, |i, _| {
        (T::one() / inv[(i, i)])
            .min(r[(i, i)])
            .max(floor * T::lit(10.0))
    });
    let to_psi = |phi: &DVector<T>| phi.map(|v| floor + v.exp());
    let mut phi = psi0.map(|v| (v - floor).ln());

    let eval = |phi: &DVector<T>| {
        let psi = to_psi(phi);
        let prof = profile(r, &psi, m);
        let g = DVector::from_fn(p, |i, _| prof.grad[i] * (psi[i] - floor));
        (prof, g)
    };

    let (mut current, mut grad) = eval(&phi);
    let mut history: VecDeque<(DVector<T>, DVector<T>, T)> = VecDeque::new();
    let memory = 10;
    let tol = T::lit(opts.tol);
    let mut converged = false;
    let mut iterations = 0;
    let c1 = T::lit(1e-4);

    while iterations < opts.max_iter {
        iterations += 1;
        // Two-loop recursion.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = *rho * s.dot(&q);
            q.axpy(-a, y, T::one());
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map(|(s, y, _)| s.dot(y) / y.dot(y))
            .unwrap_or_else(|| T::one() / grad.amax().max(T::one()));
        q *= gamma;
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = *rho * y.dot(&q);
            q.axpy(*a - b, s, T::one());
        }
        let mut dir = -q;
        let mut slope = grad.dot(&dir);
        if !(slope < T::zero()) {
            history.clear();
            dir = -grad.clone() / grad.amax().max(T::one());
            slope = grad.dot(&dir);
        }
        if !(slope < T::zero()) {
            converged = true;
            break;
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &phi + &dir * step;
            let (prof, g) = eval(&trial);
            if prof.value.is_finite() && prof.value <= current.value + c1 * step * slope {
                accepted = Some((trial, prof, g));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((next_phi, next, next_grad)) = accepted else {
            // No decrease possible along a descent direction: stationary to
            // working precision.
            converged = true;
            break;
        };
        let change = (to_psi(&next_phi) - to_psi(&phi)).norm();
        let s = &next_phi - &phi;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        if sy > T::eps() * s.norm() * y.norm() {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        phi = next_phi;
        current = next;
        grad = next_grad;
        if change < tol {
            converged = true;
            break;
        }
    }

    let psi = to_psi(&phi);
    let mut loadings = current.loadings;
    orient_columns(&mut loadings);
    let implied = implied_matrix(&loadings, &psi);
    let fit_value = discrepancy(r, &implied).unwrap_or(current.value);
    Ok(FactorModel {
        loadings,
        uniquenesses: psi,
        m,
        rotated: false,
        fit_value,
        converged,
        iterations,
    })
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn orient_columns<T: Real>(loadings: &mut DMatrix<T>) {
    for mut col in loadings.column_iter_mut() {
        let (mut best, mut idx) = (T::zero(), 0);
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                idx = i;
            }
        }
        if col[idx] < T::zero() {
            col.neg_mut();
        }
    }
}

/// Raw varimax criterion: sum over columns of the variance of squared loadings.
pub fn varimax_criterion<T: Real>(loadings: &DMatrix<T>) -> T {
    let p = T::from_count(loadings.nrows());
    loadings.column_iter().fold(T::zero(), |acc, col| {
        let (s2, s4) = col.iter().fold((T::zero(), T::zero()), |(a, b), &v| {
            let sq = v * v;
            (a + sq, b + sq * sq)
        });
        acc + s4 / p - (s2 / p) * (s2 / p)
    })
}

#[derive(Debug, Clone)]
pub struct Varimax<T: Real> {
    pub loadings: DMatrix<T>,
    /// Orthogonal `m × m` matrix with `loadings = input · rotation` up to column signs.
    pub rotation: DMatrix<T>,
    pub criterion: T,
}

/// Raw (unnormalized) varimax by pairwise planar rotations.
pub fn varimax<T: Real>(loadings: &DMatrix<T>) -> Varimax<T> {
    let (p, m) = loadings.shape();
    let mut out = loadings.clone();
    let mut rotation = DMatrix::identity(m, m);
    if m < 2 || p == 0 {
        return Varimax {
            criterion: varimax_criterion(&out),
            loadings: out,
            rotation,
        };
    }
    let pn = T::from_count(p);
    let two = T::lit(2.0);
    let quarter = T::lit(0.25);
    let mut crit = varimax_criterion(&out);
    for _ in 0..VARIMAX_MAX_SWEEPS {
        for j in 0..m {
            for k in (j + 1)..m {
                let (mut a, mut b, mut c, mut d) = (T::zero(), T::zero(), T::zero(), T::zero());
                for i in 0..p {
                    let x = out[(i, j)];
                    let y = out[(i, k)];
                    let u = x * x - y * y;
                    let v = two * x * y;
                    a += u;
                    b += v;
                    c += u * u - v * v;
                    d += u * v;
                }
                d *= two;
                let num = d - two * a * b / pn;
                let den = c - (a * a - b * b) / pn;
                let angle = num.atan2(den) * quarter;
                if angle.abs() < T::eps() {
                    continue;
                }
                let (sin, cos) = (angle.sin(), angle.cos());
                for i in 0..p {
                    let x = out[(i, j)];
                    let y = out[(i, k)];
                    out[(i, j)] = cos * x + sin * y;
                    out[(i, k)] = -sin * x + cos * y;
                }
                for i in 0..m {
                    let x = rotation[(i, j)];
                    let y = rotation[(i, k)];
                    rotation[(i, j)] = cos * x + sin * y;
                    rotation[(i, k)] = -sin * x + cos * y;
                }
            }
        }
        let next = varimax_criterion(&out);
        let gain = next - crit;
        crit = next;
        if gain < T::lit(VARIMAX_TOL) {
            break;
        }
    }
    // Sign convention, mirrored in the rotation matrix.
    for j in 0..m {
        let col = out.column(j);
        let idx = col.iamax();
        if col[idx] < T::zero() {
            out.column_mut(j).neg_mut();
            rotation.column_mut(j).neg_mut();
        }
    }
    Varimax {
        loadings: out,
        rotation,
        criterion: crit,
    }
}

/// Plot-level factor scores and the projection that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct FactorScores<T: Real> {
    pub values: DMatrix<T>,
    /// `p* × m` matrix mapping features to scores.
    pub projection: DMatrix<T>,
}

/// Modified Thomson-regression projection
/// `P = W^{-1} Λ_Σ (I + Λ_Σ^T W^{-1} Λ_Σ)^{-1}` with `W = Ψ_Σ + Σ_ε / r`,
/// where loadings and uniquenesses are first moved to the covariance scale
/// with `D = diag(genetic_diag)^{1/2}`.
pub fn projection_matrix<T: Real>(
    model: &FactorModel<T>,
    residual_cov_reg: &DMatrix<T>,
    genetic_diag: &DVector<T>,
    replicates: usize,
) -> Result<DMatrix<T>> {
    let p = model.loadings.nrows();
    if residual_cov_reg.shape() != (p, p) || genetic_diag.len() != p {
        return Err(Error::DimensionMismatch("factor-score inputs".into()));
    }
    if let Some(i) = (0..p).find(|&i| !(genetic_diag[i] > T::zero())) {
        return Err(Error::NonPositiveDiagonal(i));
    }
    let d = genetic_diag.map(|v| v.sqrt());
    let mut lambda = model.loadings.clone();
    for (i, mut row) in lambda.row_iter_mut().enumerate() {
        row *= d[i];
    }
    let mut noise = residual_cov_reg / T::from_count(replicates);
    for i in 0..p {
        noise[(i, i)] += model.uniquenesses[i] * genetic_diag[i];
    }
    symmetrize(&mut noise);
    let chol = noise.cholesky().ok_or(Error::SingularNoise)?;
    let w_inv_lambda = chol.solve(&lambda);
    let mut inner = lambda.tr_mul(&w_inv_lambda);
    for i in 0..inner.nrows() {
        inner[(i, i)] += T::one();
    }
    symmetrize(&mut inner);
    let inner_inv = inner.cholesky().ok_or(Error::SingularNoise)?.inverse();
    Ok(w_inv_lambda * inner_inv)
}

/// Projects (filtered, standardized) plot data onto the latent factors.
pub fn factor_scores<T: Real>(
    data_filtered: &DMatrix<T>,
    model: &FactorModel<T>,
    residual_cov_reg: &DMatrix<T>,
    genetic_diag: &DVector<T>,
    replicates: usize,
) -> Result<FactorScores<T>> {
    if data_filtered.ncols() != model.loadings.nrows() {
        return Err(Error::DimensionMismatch("data columns vs loadings".into()));
    }
    let projection = projection_matrix(model, residual_cov_reg, genetic_diag, replicates)?;
    Ok(FactorScores {
        values: data_filtered * &projection,
        projection,
    })
}
