//! Genetic/residual covariance estimation from replicated plots, nearest
//! positive-definite correction and covariance/correlation scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{column_genotype_means, Design, PlotData};
use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, symmetrize, SymEigen};
use crate::scalar::Real;

/// Relative eigenvalue floor applied by [`nearest_positive_definite`].
pub const PD_FLOOR: f64 = 1e-8;
/// Floor for residual variances before correlation scaling.
pub const RESIDUAL_DIAG_FLOOR: f64 = 1e-10;
const HIGHAM_TOL: f64 = 1e-9;
const HIGHAM_MAX_ITER: usize = 200;
const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Covariance,
    Correlation,
}

/// Genetic and residual matrices for one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair<T: Real> {
    pub genetic: DMatrix<T>,
    pub residual: DMatrix<T>,
    pub scale: Scale,
    pub replicates: usize,
    /// Covariance-scale diagonals, retained once scaled to correlations.
    pub genetic_diag: Option<DVector<T>>,
    pub residual_diag: Option<DVector<T>>,
}

/// Between- and within-genotype mean-squares matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSquares<T: Real> {
    pub between: DMatrix<T>,
    pub within: DMatrix<T>,
    pub replicates: usize,
}

impl<T: Real> MeanSquares<T> {
    /// `(MS_g - MS_e) / r`, before any positive-definite correction.
    pub fn raw_genetic(&self) -> DMatrix<T> {
        (&self.between - &self.within) / T::from_count(self.replicates)
    }

    pub fn residual(&self) -> DMatrix<T> {
        self.within.clone()
    }
}

/// Sums-of-squares mean squares of the columns of `values` under `design`.
pub fn mean_squares<T: Real>(values: &DMatrix<T>, design: &Design) -> Result<MeanSquares<T>> {
    let r = design.replicates();
    let n_g = design.n_genotypes();
    if n_g < 2 {
        return Err(Error::InsufficientGenotypes(n_g));
    }
    if r < 2 {
        return Err(Error::InsufficientReplication(r));
    }
    let n = design.n_rows();
    let q = values.ncols();
    let means = column_genotype_means(values, design);
    let overall = DVector::from_fn(q, |c, _| values.column(c).mean());

    // Broadcast genotype means to plot rows.
    let mut between_dev = DMatrix::zeros(n, q);
    let mut within_dev = DMatrix::zeros(n, q);
    for row in 0..n {
        let g = design.genotype_of(row);
        for c in 0..q {
            between_dev[(row, c)] = overall[c] - means[(g, c)];
            within_dev[(row, c)] = means[(g, c)] - values[(row, c)];
        }
    }
    let mut between = between_dev.tr_mul(&between_dev) / T::from_count(n_g - 1);
    let mut within = within_dev.tr_mul(&within_dev) / T::from_count(n - n_g);
    symmetrize(&mut between);
    symmetrize(&mut within);
    Ok(MeanSquares {
        between,
        within,
        replicates: r,
    })
}

/// Sums-of-squares estimates of the genetic and residual covariances of
/// `columns`. The genetic matrix is projected to the nearest positive-definite
/// matrix and residual variances are floored.
pub fn estimate_covariances<T: Real>(
    data: &PlotData<T>,
    columns: &[usize],
) -> Result<CovariancePair<T>> {
    estimate_covariances_of(&data.columns(columns), data.design())
}

/// As [`estimate_covariances`] for an arbitrary value matrix.
pub fn estimate_covariances_of<T: Real>(
    values: &DMatrix<T>,
    design: &Design,
) -> Result<CovariancePair<T>> {
    let ms = mean_squares(values, design)?;
    let genetic = nearest_positive_definite(&ms.raw_genetic(), Scale::Covariance)?;
    let mut residual = ms.residual();
    floor_diagonal(&mut residual, T::lit(RESIDUAL_DIAG_FLOOR));
    Ok(CovariancePair {
        genetic,
        residual,
        scale: Scale::Covariance,
        replicates: ms.replicates,
        genetic_diag: None,
        residual_diag: None,
    })
}

pub(crate) fn floor_diagonal<T: Real>(a: &mut DMatrix<T>, floor: T) {
    for i in 0..a.nrows() {
        if a[(i, i)] < floor {
            a[(i, i)] = floor;
        }
    }
}

/// Eigenvalue floor used for a matrix with largest eigenvalue `lambda_max`.
pub fn pd_floor<T: Real>(lambda_max: T) -> T {
    T::lit(PD_FLOOR) * lambda_max.max(T::one())
}

/// Nearest positive-definite matrix.
///
/// Inputs already satisfying the eigenvalue floor are returned unchanged.
/// Covariance-scale inputs are clipped at the floor in their eigenbasis.
/// Correlation-scale inputs go through Higham's alternating projections (with
/// Dykstra's correction) between the PSD cone and the unit-diagonal set.
pub fn nearest_positive_definite<T: Real>(a: &DMatrix<T>, scale: Scale) -> Result<DMatrix<T>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("matrix must be square".into()));
    }
    let asym = max_asymmetry(a);
    if asym > T::lit(SYMMETRY_TOL) {
        return Err(Error::NonSymmetric(asym.as_f64()));
    }
    if a.nrows() == 0 {
        return Ok(a.clone());
    }
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let eig = SymEigen::new(&sym);
    let floor = pd_floor(eig.max_value());
    // Round-off slack so the check is stable when re-applied.
    let slack = T::eps() * T::lit(64.0) * eig.max_value().abs().max(T::one());
    if eig.min_value() >= floor - slack {
        return Ok(a.clone());
    }
    match scale {
        Scale::Covariance => Ok(eig.reconstruct_with(|v| v.max(floor))),
        Scale::Correlation => Ok(higham_correlation(&sym, floor)),
    }
}

fn higham_correlation<T: Real>(a: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let n = a.nrows();
    let tol = T::lit(HIGHAM_TOL);
    let mut y = a.clone();
    let mut correction = DMatrix::<T>::zeros(n, n);
    for _ in 0..HIGHAM_MAX_ITER {
        let r = &y - &correction;
        let x = SymEigen::new(&r).reconstruct_with(|v| v.max(floor));
        correction = &x - &r;
        let mut next = x;
        for i in 0..n {
            next[(i, i)] = T::one();
        }
        let change = (&next - &y).norm() / y.norm().max(T::eps());
        y = next;
        if change < tol {
            break;
        }
    }
    // The last unit-diagonal projection may leave tiny negative eigenvalues:
    // clip once more and rescale back to unit diagonal.
    let clipped = SymEigen::new(&y).reconstruct_with(|v| v.max(floor));
    let d = DVector::from_fn(n, |i, _| T::one() / clipped[(i, i)].sqrt());
    let mut out = DMatrix::from_fn(n, n, |i, j| clipped[(i, j)] * d[i] * d[j]);
    for i in 0..n {
        out[(i, i)] = T::one();
    }
    symmetrize(&mut out);
    out
}

/// `diag(a)^{-1/2} a diag(a)^{-1/2}` and the diagonal of `a`.
pub fn scale_to_correlation<T: Real>(a: &DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>)> {
    let n = a.nrows();
    let diag = a.diagonal();
    if let Some(i) = (0..n).find(|&i| !(diag[i] > T::zero())) {
        return Err(Error::NonPositiveDiagonal(i));
    }
    let inv_sd = diag.map(|v| T::one() / v.sqrt());
    let mut r = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * inv_sd[i] * inv_sd[j]);
    for i in 0..n {
        r[(i, i)] = T::one();
    }
    symmetrize(&mut r);
    Ok((r, diag))
}

/// `diag^{1/2} r diag^{1/2}`.
pub fn scale_to_covariance<T: Real>(r: &DMatrix<T>, diag: &DVector<T>) -> Result<DMatrix<T>> {
    let n = r.nrows();
    if diag.len() != n {
        return Err(Error::DimensionMismatch("diagonal length".into()));
    }
    if let Some(i) = (0..n).find(|&i| !(diag[i] > T::zero())) {
        return Err(Error::NonPositiveDiagonal(i));
    }
    let sd = diag.map(|v| v.sqrt());
    Ok(DMatrix::from_fn(n, n, |i, j| r[(i, j)] * sd[i] * sd[j]))
}

/// Scales both matrices of a covariance pair to correlations, retaining the
/// original diagonals. Correlation-scale input is returned unchanged.
pub fn cov_to_cor<T: Real>(pair: &CovariancePair<T>) -> Result<CovariancePair<T>> {
    if pair.scale == Scale::Correlation {
        return Ok(pair.clone());
    }
    let (genetic, gd) = scale_to_correlation(&pair.genetic)?;
    let (residual, rd) = scale_to_correlation(&pair.residual)?;
    Ok(CovariancePair {
        genetic,
        residual,
        scale: Scale::Correlation,
        replicates: pair.replicates,
        genetic_diag: Some(gd),
        residual_diag: Some(rd),
    })
}

/// Scales correlation matrices back to covariances with the given diagonals.
pub fn cor_to_cov<T: Real>(
    pair: &CovariancePair<T>,
    diag_genetic: &DVector<T>,
    diag_residual: &DVector<T>,
) -> Result<CovariancePair<T>> {
    if pair.scale != Scale::Correlation {
        return Err(Error::InvalidData(
            "pair is not on the correlation scale".into(),
        ));
    }
    Ok(CovariancePair {
        genetic: scale_to_covariance(&pair.genetic, diag_genetic)?,
        residual: scale_to_covariance(&pair.residual, diag_residual)?,
        scale: Scale::Covariance,
        replicates: pair.replicates,
        genetic_diag: None,
        residual_diag: None,
    })
}
