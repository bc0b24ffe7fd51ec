//! Redundancy filtering and cross-validated identity-target regularization of
//! correlation matrices.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{mean_squares, nearest_positive_definite, scale_to_correlation, Scale};
use crate::data::{Design, PlotData};
use crate::error::{Error, Result};
use crate::linalg::{brent_minimize, SymEigen};
use crate::scalar::Real;

/// Lower end of the penalty search interval.
pub const PENALTY_LOWER: f64 = 1e-6;
pub const PENALTY_TOL: f64 = 1e-6;
pub const DEFAULT_FOLDS: usize = 5;

/// Features retained by [`redundancy_filter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub tau: f64,
}

/// Greedy redundancy filter.
///
/// Repeatedly drops the feature involved in the most pairs with `|ρ| ≥ tau`;
/// ties go to the larger sum of absolute correlations with the remaining
/// features, then to the lowest index. Stops when no such pair is left.
pub fn redundancy_filter<T: Real>(r: &DMatrix<T>, tau: f64) -> Result<FilterResult> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    let p = r.nrows();
    let tau_t = T::lit(tau);
    let mut alive = vec![true; p];
    let mut dropped = Vec::new();
    loop {
        let mut best: Option<(usize, usize, T)> = None;
        for i in (0..p).filter(|&i| alive[i]) {
            let mut count = 0usize;
            let mut sum = T::zero();
            for j in (0..p).filter(|&j| alive[j] && j != i) {
                let a = r[(i, j)].abs();
                sum += a;
                if a >= tau_t {
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bc, bs)) => count > bc || (count == bc && sum > bs),
            };
            if better {
                best = Some((i, count, sum));
            }
        }
        match best {
            Some((i, _, _)) => {
                alive[i] = false;
                dropped.push(i);
            }
            None => break,
        }
    }
    dropped.sort_unstable();
    Ok(FilterResult {
        kept: (0..p).filter(|&i| alive[i]).collect(),
        dropped,
        tau,
    })
}

/// Largest off-diagonal `|ρ|` among the given features.
pub fn max_abs_offdiag<T: Real>(r: &DMatrix<T>, idx: &[usize]) -> T {
    let mut worst = T::zero();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            worst = worst.max(r[(i, j)].abs());
        }
    }
    worst
}

/// `(1 - θ) r + θ target`, with the identity as default target.
pub fn penalized_correlation<T: Real>(
    r: &DMatrix<T>,
    theta: T,
    target: Option<&DMatrix<T>>,
) -> Result<DMatrix<T>> {
    if !(theta > T::zero() && theta <= T::one()) {
        return Err(Error::InvalidPenalty(theta.as_f64()));
    }
    let keep = T::one() - theta;
    Ok(match target {
        Some(t) => {
            if t.shape() != r.shape() {
                return Err(Error::DimensionMismatch("target shape".into()));
            }
            r * keep + t * theta
        }
        None => {
            let mut out = r * keep;
            for i in 0..out.nrows() {
                out[(i, i)] += theta;
            }
            out
        }
    })
}

/// One cross-validation fold: matrix estimated without the fold and the
/// unpenalized matrix from the held-out fold.
#[derive(Debug, Clone)]
pub struct CvFold<T: Real> {
    pub train: DMatrix<T>,
    pub heldout: DMatrix<T>,
    pub weight: T,
}

/// Cross-validated penalized log-likelihood loss with per-fold spectra
/// precomputed, so each evaluation costs O(p) per fold.
#[derive(Debug, Clone)]
pub struct CvPenaltyLoss<T: Real> {
    folds: Vec<FoldSpectrum<T>>,
}

#[derive(Debug, Clone)]
struct FoldSpectrum<T: Real> {
    eigenvalues: DVector<T>,
    /// Diagonal of `U^T R_k U`.
    rotated_diag: DVector<T>,
    weight: T,
}

impl<T: Real> CvPenaltyLoss<T> {
    pub fn new(folds: &[CvFold<T>]) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::InvalidData("no cross-validation folds".into()));
        }
        let folds = folds
            .iter()
            .map(|f| {
                if f.train.shape() != f.heldout.shape() {
                    return Err(Error::DimensionMismatch(
                        "fold matrices differ in shape".into(),
                    ));
                }
                if !(f.weight > T::zero()) {
                    return Err(Error::InvalidData("fold weights must be positive".into()));
                }
                let eig = SymEigen::new(&f.train);
                let rotated = eig.vectors.tr_mul(&f.heldout) * &eig.vectors;
                Ok(FoldSpectrum {
                    eigenvalues: eig.values.map(|v| v.max(T::zero())),
                    rotated_diag: rotated.diagonal(),
                    weight: f.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { folds })
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    /// Loss at penalty `theta`.
    pub fn evaluate(&self, theta: T) -> Result<T> {
        let keep = T::one() - theta;
        let mut total = T::zero();
        for fold in &self.folds {
            let mut log_det = T::zero();
            let mut trace = T::zero();
            for (lambda, a) in fold.eigenvalues.iter().zip(fold.rotated_diag.iter()) {
                let shrunk = keep * *lambda + theta;
                if !(shrunk > T::zero()) {
                    return Err(Error::SingularPenalizedMatrix);
                }
                log_det += shrunk.ln();
                trace += *a / shrunk;
            }
            total += fold.weight * (log_det + trace);
        }
        Ok(total / T::from_count(self.folds.len()))
    }

    /// Brent minimization of the loss over `[1e-6, 1]`.
    pub fn minimize(&self) -> PenaltyFit<T> {
        let big = T::lit(f64::MAX.sqrt());
        let m = brent_minimize(
            |t| self.evaluate(t).unwrap_or(big),
            T::lit(PENALTY_LOWER),
            T::one(),
            T::lit(PENALTY_TOL),
            500,
        );
        PenaltyFit {
            theta: m.x.min(T::one()).max(T::lit(PENALTY_LOWER)),
            cv_loss: m.value,
            folds: self.folds.len(),
            fold_assignment: Vec::new(),
        }
    }
}

/// Free-function form of [`CvPenaltyLoss::evaluate`].
pub fn cv_penalty_loss<T: Real>(folds: &[CvFold<T>], theta: T) -> Result<T> {
    CvPenaltyLoss::new(folds)?.evaluate(theta)
}

/// Selected penalty and its cross-validated loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct PenaltyFit<T: Real> {
    pub theta: T,
    pub cv_loss: T,
    pub folds: usize,
    /// Fold index of each genotype.
    pub fold_assignment: Vec<usize>,
}

/// Which correlation matrix a penalty is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    Genetic,
    Residual,
    /// Genetic plus residual (plot-level phenotypic) covariance.
    Phenotypic,
}

/// Seeded assignment of `n_genotypes` genotypes to `k` folds of near-equal size.
pub fn assign_folds(n_genotypes: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_genotypes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n_genotypes];
    for (pos, &g) in order.iter().enumerate() {
        folds[g] = pos % k;
    }
    folds
}

fn kind_covariance<T: Real>(
    values: &DMatrix<T>,
    design: &Design,
    kind: MatrixKind,
    correct: bool,
) -> Result<DMatrix<T>> {
    let ms = mean_squares(values, design)?;
    let mut m = match kind {
        MatrixKind::Genetic => ms.raw_genetic(),
        MatrixKind::Residual => ms.residual(),
        MatrixKind::Phenotypic => ms.raw_genetic() + ms.residual(),
    };
    // Held-out estimates are only corrected when a variance came out non-positive.
    if correct || (0..m.nrows()).any(|i| !(m[(i, i)] > T::zero())) {
        m = nearest_positive_definite(&m, Scale::Covariance)?;
    }
    crate::covariance::floor_diagonal(&mut m, T::lit(crate::covariance::RESIDUAL_DIAG_FLOOR));
    Ok(m)
}

/// Builds the training/held-out correlation matrices for every fold.
///
/// Training-side matrices are positive-definite corrected; held-out matrices
/// are used as estimated. Fold weights are genotype counts for the genetic
/// matrix and plot-row counts otherwise.
pub fn cv_folds<T: Real>(
    values: &DMatrix<T>,
    design: &Design,
    kind: MatrixKind,
    fold_assignment: &[usize],
    k: usize,
) -> Result<Vec<CvFold<T>>> {
    (0..k)
        .map(|fold| {
            let (inside, outside): (Vec<usize>, Vec<usize>) =
                (0..design.n_genotypes()).partition(|&g| fold_assignment[g] != fold);
            let (train_rows, train_design) = design.subset(&inside);
            let (held_rows, held_design) = design.subset(&outside);
            let train_cov =
                kind_covariance(&values.select_rows(&train_rows), &train_design, kind, true)?;
            let held_cov =
                kind_covariance(&values.select_rows(&held_rows), &held_design, kind, false)?;
            let (train, _) = scale_to_correlation(&train_cov)?;
            let (heldout, _) = scale_to_correlation(&held_cov)?;
            let weight = match kind {
                MatrixKind::Genetic => outside.len(),
                _ => held_rows.len(),
            };
            Ok(CvFold {
                train,
                heldout,
                weight: T::from_count(weight),
            })
        })
        .collect()
}

/// K-fold cross-validated penalty for the genetic, residual or phenotypic
/// correlation matrix of `columns`.
pub fn optimize_penalty<T: Real>(
    data: &PlotData<T>,
    columns: &[usize],
    kind: MatrixKind,
    k_folds: usize,
    seed: u64,
) -> Result<PenaltyFit<T>> {
    optimize_penalty_of(&data.columns(columns), data.design(), kind, k_folds, seed)
}

pub fn optimize_penalty_of<T: Real>(
    values: &DMatrix<T>,
    design: &Design,
    kind: MatrixKind,
    k_folds: usize,
    seed: u64,
) -> Result<PenaltyFit<T>> {
    let n_g = design.n_genotypes();
    if k_folds < 2 || n_g < k_folds {
        return Err(Error::Config(format!(
            "need 2 <= folds <= genotypes, got {k_folds} folds for {n_g} genotypes"
        )));
    }
    let assignment = assign_folds(n_g, k_folds, seed);
    let folds = cv_folds(values, design, kind, &assignment, k_folds)?;
    let mut fit = CvPenaltyLoss::new(&folds)?.minimize();
    fit.fold_assignment = assignment;
    Ok(fit)
}
