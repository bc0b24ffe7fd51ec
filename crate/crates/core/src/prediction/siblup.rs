//! Selection-index baseline: a single linear combination of secondary
//! features used as one auxiliary trait.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{estimate_covariances_of, scale_to_correlation, scale_to_covariance};
use crate::data::Design;
use crate::error::{Error, Result};
use crate::linalg::submatrix;
use crate::scalar::Real;
use crate::shrinkage::{optimize_penalty_of, penalized_correlation, redundancy_filter, MatrixKind};

/// `γ = Σ_p^{-1} σ^g_sf`.
pub fn siblup_weights<T: Real>(
    pheno_reg: &DMatrix<T>,
    sigma_sf_g: &DVector<T>,
) -> Result<DVector<T>> {
    if pheno_reg.nrows() != sigma_sf_g.len() || pheno_reg.ncols() != sigma_sf_g.len() {
        return Err(Error::DimensionMismatch(
            "phenotypic covariance vs genetic covariances".into(),
        ));
    }
    let chol = pheno_reg
        .clone()
        .cholesky()
        .ok_or(Error::SingularPhenotypic)?;
    Ok(chol.solve(sigma_sf_g))
}

/// Fitted selection index over a subset of the secondary columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct SelectionIndex<T: Real> {
    /// Secondary columns (of the input matrix) entering the index.
    pub kept: Vec<usize>,
    pub theta_phenotypic: T,
    pub weights: DVector<T>,
}

impl<T: Real> SelectionIndex<T> {
    /// Index values for plot rows of a secondary matrix with the original column layout.
    pub fn apply(&self, secondary: &DMatrix<T>) -> DVector<T> {
        secondary.select_columns(&self.kept) * &self.weights
    }
}

/// Filters the secondary columns, regularizes their phenotypic correlation
/// with a cross-validated penalty and forms the index weights from the
/// genetic covariances with the focal trait.
///
/// `secondary` and `focal` are standardized plot-level training data.
pub fn fit_selection_index<T: Real>(
    secondary: &DMatrix<T>,
    focal: &DVector<T>,
    design: &Design,
    tau: f64,
    k_folds: usize,
    seed: u64,
) -> Result<SelectionIndex<T>> {
    let p = secondary.ncols();
    let mut all = secondary.clone().insert_column(p, T::zero());
    all.set_column(p, focal);
    let pair = estimate_covariances_of(&all, design)?;
    let (r_g, _) = scale_to_correlation(&submatrix(
        &pair.genetic,
        &(0..p).collect::<Vec<_>>(),
        &(0..p).collect::<Vec<_>>(),
    ))?;
    let kept = redundancy_filter(&r_g, tau)?.kept;

    let filtered = secondary.select_columns(&kept);
    let fit = optimize_penalty_of(&filtered, design, MatrixKind::Phenotypic, k_folds, seed)?;
    let mut pheno =
        submatrix(&pair.genetic, &kept, &kept) + submatrix(&pair.residual, &kept, &kept);
    crate::linalg::symmetrize(&mut pheno);
    let (r_p, diag_p) = scale_to_correlation(&pheno)?;
    let r_reg = penalized_correlation(&r_p, fit.theta, None)?;
    let pheno_reg = scale_to_covariance(&r_reg, &diag_p)?;
    let sigma_sf = DVector::from_iterator(kept.len(), kept.iter().map(|&j| pair.genetic[(j, p)]));
    let weights = siblup_weights(&pheno_reg, &sigma_sf)?;
    Ok(SelectionIndex {
        kept,
        theta_phenotypic: fit.theta,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_feature_weight() {
        let w = siblup_weights(
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::from_element(1, 0.5),
        )
        .unwrap();
        assert_abs_diff_eq!(w[0], 0.25);
    }

    #[test]
    fn identity_phenotypic_returns_genetic_covariances() {
        let g = DVector::from_vec(vec![0.3, -0.1, 0.7]);
        let w = siblup_weights(&DMatrix::identity(3, 3), &g).unwrap();
        assert!((w - g).amax() < 1e-15);
    }

    #[test]
    fn two_feature_inverse() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![0.4, 0.2]);
        let w = siblup_weights(&p, &g).unwrap();
        // [2 .5; .5 1]^{-1} = [1 -.5; -.5 2] / 1.75
        assert_abs_diff_eq!(w[0], (0.4 - 0.1) / 1.75, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], (-0.2 + 0.4) / 1.75, epsilon = 1e-14);
    }

    #[test]
    fn singular_phenotypic_is_rejected() {
        let p = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            siblup_weights(&p, &DVector::from_element(2, 1.0)),
            Err(Error::SingularPhenotypic)
        ));
    }
}
