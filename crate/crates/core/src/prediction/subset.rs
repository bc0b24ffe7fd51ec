//! Factor subset selection and the factor + focal covariance model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{estimate_covariances_of, nearest_positive_definite, Scale};
use crate::data::Design;
use crate::error::{Error, Result};
use crate::linalg::principal;
use crate::scalar::Real;

/// Largest factor count searched exhaustively.
pub const SUBSET_GUARD: usize = 20;
const TIE_TOL: f64 = 1e-12;

/// Chosen factors (0-based, sorted) and the adjusted R² of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFactors {
    pub indices: Vec<usize>,
    pub adjusted_r2: f64,
    /// False when forward selection replaced the exhaustive search.
    pub exhaustive: bool,
}

impl SelectedFactors {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `1 - (1 - R²)(n - 1)/(n - k - 1)`.
pub fn adjusted_r2(r2: f64, n: usize, k: usize) -> f64 {
    if n <= k + 1 {
        return f64::NEG_INFINITY;
    }
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / ((n - k - 1) as f64)
}

/// Centered cross-products used to score every subset cheaply.
struct Regression {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    total: f64,
    n: usize,
}

impl Regression {
    fn new<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::DimensionMismatch(
                "factor BLUEs vs focal BLUEs".into(),
            ));
        }
        if n < 2 {
            return Err(Error::InsufficientGenotypes(n));
        }
        let x = x.map(|v| v.as_f64());
        let y = y.map(|v| v.as_f64());
        let mut xc = x.clone();
        for mut col in xc.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let yc = y.add_scalar(-y.mean());
        Ok(Self {
            gram: xc.tr_mul(&xc),
            cross: xc.tr_mul(&yc),
            total: yc.norm_squared(),
            n,
        })
    }

    fn r2(&self, subset: &[usize]) -> f64 {
        if !(self.total > 0.0) {
            return 0.0;
        }
        let g = principal(&self.gram, subset);
        let c = DVector::from_iterator(subset.len(), subset.iter().map(|&i| self.cross[i]));
        let explained = match g.clone().cholesky() {
            Some(ch) => c.dot(&ch.solve(&c)),
            None => {
                let svd = g.svd(true, true);
                let beta = svd
                    .solve(&c, 1e-12)
                    .unwrap_or_else(|_| DVector::zeros(c.len()));
                c.dot(&beta)
            }
        };
        (explained / self.total).clamp(0.0, 1.0)
    }

    fn adjusted(&self, subset: &[usize]) -> f64 {
        adjusted_r2(self.r2(subset), self.n, subset.len())
    }
}

/// Lexicographic successor of a `k`-combination of `0..m`.
fn next_combination(c: &mut [usize], m: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < m - k + i {
            c[i] += 1;
            for j in (i + 1)..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn finish(best: Option<(Vec<usize>, f64)>, exhaustive: bool) -> SelectedFactors {
    match best {
        Some((indices, adj)) if adj > 0.0 => SelectedFactors {
            indices,
            adjusted_r2: adj,
            exhaustive,
        },
        Some((_, adj)) => SelectedFactors {
            indices: Vec::new(),
            adjusted_r2: adj.max(0.0),
            exhaustive,
        },
        None => SelectedFactors {
            indices: Vec::new(),
            adjusted_r2: 0.0,
            exhaustive,
        },
    }
}

/// Best subset by adjusted R² over all non-empty subsets of the factor columns.
///
/// Subsets are visited by size and then lexicographically, and a later subset
/// only wins with a strictly larger score, so ties go to the smaller and then
/// lexicographically first subset. A best score `<= 0` yields the empty
/// selection.
pub fn select_factors_exhaustive<T: Real>(
    factor_blues: &DMatrix<T>,
    focal_blues: &DVector<T>,
) -> Result<SelectedFactors> {
    let m = factor_blues.ncols();
    if m > SUBSET_GUARD {
        return Err(Error::TooManyFactors(m));
    }
    let reg = Regression::new(factor_blues, focal_blues)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for k in 1..=m {
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            let adj = reg.adjusted(&comb);
            if best
                .as_ref()
                .map_or(adj.is_finite(), |(_, b)| adj > b + TIE_TOL)
            {
                best = Some((comb.clone(), adj));
            }
            if !next_combination(&mut comb, m) {
                break;
            }
        }
    }
    Ok(finish(best, true))
}

/// Greedy forward selection by adjusted R², stopping when no addition improves it.
pub fn select_factors_forward<T: Real>(
    factor_blues: &DMatrix<T>,
    focal_blues: &DVector<T>,
) -> Result<SelectedFactors> {
    let m = factor_blues.ncols();
    let reg = Regression::new(factor_blues, focal_blues)?;
    let mut chosen: Vec<usize> = Vec::new();
    let mut current = f64::NEG_INFINITY;
    loop {
        let mut step: Option<(usize, f64)> = None;
        for j in (0..m).filter(|j| !chosen.contains(j)) {
            let mut trial = chosen.clone();
            trial.push(j);
            trial.sort_unstable();
            let adj = reg.adjusted(&trial);
            if step.is_none_or(|(_, b)| adj > b + TIE_TOL) {
                step = Some((j, adj));
            }
        }
        match step {
            Some((j, adj)) if adj > current + TIE_TOL => {
                chosen.push(j);
                chosen.sort_unstable();
                current = adj;
            }
            _ => break,
        }
    }
    let best = (!chosen.is_empty()).then_some((chosen, current));
    Ok(finish(best, false))
}

/// Exhaustive search up to `guard` factors, forward selection beyond.
pub fn select_factors_with_guard<T: Real>(
    factor_blues: &DMatrix<T>,
    focal_blues: &DVector<T>,
    guard: usize,
) -> Result<SelectedFactors> {
    if factor_blues.ncols() > guard.min(SUBSET_GUARD) {
        select_factors_forward(factor_blues, focal_blues)
    } else {
        select_factors_exhaustive(factor_blues, focal_blues)
    }
}

pub fn select_factors<T: Real>(
    factor_blues: &DMatrix<T>,
    focal_blues: &DVector<T>,
) -> Result<SelectedFactors> {
    select_factors_with_guard(factor_blues, focal_blues, SUBSET_GUARD)
}

/// Genetic and plot-level residual covariances of the selected factors and the
/// focal trait (last position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct TraitCovariances<T: Real> {
    pub genetic: DMatrix<T>,
    pub residual: DMatrix<T>,
    pub replicates: usize,
}

impl<T: Real> TraitCovariances<T> {
    pub fn new(genetic: DMatrix<T>, residual: DMatrix<T>, replicates: usize) -> Result<Self> {
        let t = genetic.nrows();
        if t == 0 || genetic.shape() != (t, t) || residual.shape() != (t, t) {
            return Err(Error::DimensionMismatch("trait covariance matrices".into()));
        }
        if replicates == 0 {
            return Err(Error::InsufficientReplication(0));
        }
        Ok(Self {
            genetic,
            residual,
            replicates,
        })
    }

    pub fn n_traits(&self) -> usize {
        self.genetic.nrows()
    }

    pub fn focal_index(&self) -> usize {
        self.n_traits() - 1
    }

    /// Residual covariance of genotype means: `Σ^ε / r`.
    pub fn residual_blup(&self) -> DMatrix<T> {
        &self.residual / T::from_count(self.replicates)
    }

    /// Genetic correlation of each trait with the focal trait.
    pub fn focal_genetic_correlations(&self) -> DVector<T> {
        let f = self.focal_index();
        let sf = self.genetic[(f, f)].sqrt();
        DVector::from_fn(self.n_traits(), |i, _| {
            let denom = self.genetic[(i, i)].sqrt() * sf;
            if denom > T::zero() {
                self.genetic[(i, f)] / denom
            } else {
                T::zero()
            }
        })
    }
}

/// Sums-of-squares covariances of plot-level trait columns (focal last).
/// The genetic matrix is PD-corrected; the residual matrix is corrected only
/// when it is not already positive definite.
pub fn estimate_trait_covariances<T: Real>(
    values: &DMatrix<T>,
    design: &Design,
) -> Result<TraitCovariances<T>> {
    let pair = estimate_covariances_of(values, design)?;
    let residual = nearest_positive_definite(&pair.residual, Scale::Covariance)?;
    TraitCovariances::new(pair.genetic, residual, pair.replicates)
}
