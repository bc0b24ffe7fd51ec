//! Univariate and multi-trait BLUP for the focal trait.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kron::KronSolver;
use super::subset::TraitCovariances;
use crate::data::Kinship;
use crate::error::{Error, Result};
use crate::linalg::{principal, submatrix};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Univariate,
    Cv1,
    Cv2,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Univariate => "univariate",
            Scenario::Cv1 => "cv1",
            Scenario::Cv2 => "cv2",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "univariate" | "uni" => Ok(Scenario::Univariate),
            "cv1" => Ok(Scenario::Cv1),
            "cv2" => Ok(Scenario::Cv2),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// What the fitted model looked like when a prediction was made.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub m_tilde: Option<usize>,
    pub n_selected: Option<usize>,
    pub theta_genetic: Option<f64>,
    pub theta_residual: Option<f64>,
    /// Set when the multi-trait model degraded to univariate gBLUP.
    pub univariate_fallback: bool,
}

/// Focal-trait BLUPs, aligned to the kinship partition order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct PredictionResult<T: Real> {
    pub test_predictions: DVector<T>,
    pub train_blups: DVector<T>,
    pub test_ids: Vec<String>,
    pub train_ids: Vec<String>,
    pub scenario: Scenario,
    pub diagnostics: Diagnostics,
}

fn check_rows<T: Real>(n: usize, kinship: &Kinship<T>, what: &str) -> Result<()> {
    if n != kinship.train().len() {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {n} rows but the kinship has {} training genotypes",
            kinship.train().len()
        )));
    }
    Ok(())
}

/// Single-trait gBLUP with `V = σ_g K_oo + σ_e I`.
pub fn blup_univariate<T: Real>(
    focal_blues: &DVector<T>,
    kinship: &Kinship<T>,
    sigma_g: T,
    sigma_e: T,
) -> Result<PredictionResult<T>> {
    check_rows(focal_blues.len(), kinship, "focal BLUE vector")?;
    if sigma_g < T::zero() {
        return Err(Error::InvalidData("negative genetic variance".into()));
    }
    if !(sigma_e > T::zero()) {
        return Err(Error::SingularV);
    }
    let sg = DMatrix::from_element(1, 1, sigma_g);
    let se = DMatrix::from_element(1, 1, sigma_e);
    let solver = KronSolver::with_eigen(&sg, &se, kinship.oo_eigen())?;
    let rhs = DMatrix::from_column_slice(focal_blues.len(), 1, focal_blues.as_slice());
    let x = solver.solve(&rhs)?.column(0) * sigma_g;
    Ok(PredictionResult {
        train_blups: kinship.k_oo() * &x,
        test_predictions: kinship.k_to() * &x,
        test_ids: kinship.test_ids(),
        train_ids: kinship.train_ids(),
        scenario: Scenario::Univariate,
        diagnostics: Diagnostics::default(),
    })
}

/// `V^{-1} vec(Y)` premultiplied by `Σ_g ⊗ I`, returned unreduced: the
/// columns of `X Σ_g` are the genetic weights for every trait.
fn cv1_weights<T: Real>(
    blues: &DMatrix<T>,
    kinship: &Kinship<T>,
    cov: &TraitCovariances<T>,
) -> Result<DMatrix<T>> {
    check_rows(blues.nrows(), kinship, "BLUE matrix")?;
    if blues.ncols() != cov.n_traits() {
        return Err(Error::DimensionMismatch(format!(
            "{} BLUE columns for {} traits",
            blues.ncols(),
            cov.n_traits()
        )));
    }
    let solver = KronSolver::with_eigen(&cov.genetic, &cov.residual_blup(), kinship.oo_eigen())?;
    Ok(solver.solve(blues)? * &cov.genetic)
}

/// Multi-trait BLUP when secondary traits are observed for training genotypes only.
///
/// `blues` holds training genotypes in kinship order with the focal trait in
/// the last column.
pub fn blup_cv1<T: Real>(
    blues: &DMatrix<T>,
    kinship: &Kinship<T>,
    cov: &TraitCovariances<T>,
) -> Result<PredictionResult<T>> {
    let w = cv1_weights(blues, kinship, cov)?;
    let f = cov.focal_index();
    let wf = w.column(f);
    Ok(PredictionResult {
        train_blups: kinship.k_oo() * wf,
        test_predictions: kinship.k_to() * wf,
        test_ids: kinship.test_ids(),
        train_ids: kinship.train_ids(),
        scenario: Scenario::Cv1,
        diagnostics: Diagnostics::default(),
    })
}

/// Two-step CV2 prediction.
///
/// Step one is the CV1 system for all traits. Step two regresses the
/// deviation of the observed test secondary BLUEs (`n_t × s`, kinship test
/// order) from their step-one predictions onto the focal trait using
/// `V = Σ^g_ss ⊗ K_tt^{-1} + Σ^ε_ss / r ⊗ I`.
pub fn blup_cv2<T: Real>(
    blues: &DMatrix<T>,
    kinship: &Kinship<T>,
    cov: &TraitCovariances<T>,
    test_secondary: &DMatrix<T>,
) -> Result<PredictionResult<T>> {
    let n_t = kinship.test().len();
    let f = cov.focal_index();
    let secondary: Vec<usize> = (0..cov.n_traits()).filter(|&i| i != f).collect();
    if test_secondary.shape() != (n_t, secondary.len()) {
        return Err(Error::DimensionMismatch(format!(
            "test secondary matrix is {:?}, expected {:?}",
            test_secondary.shape(),
            (n_t, secondary.len())
        )));
    }
    let w = cv1_weights(blues, kinship, cov)?;
    let k_to = kinship.k_to();
    let step_one = &k_to * &w;
    let mut prediction = step_one.column(f).into_owned();

    if !secondary.is_empty() && n_t > 0 {
        let deviation = test_secondary - step_one.select_columns(&secondary);
        let k_tt_inv = kinship.tt_inverse().ok_or(Error::SingularKtt)?;
        let g_ss = principal(&cov.genetic, &secondary);
        let e_ss = principal(&cov.residual_blup(), &secondary);
        let x = KronSolver::new(&g_ss, &e_ss, k_tt_inv)?.solve(&deviation)?;
        let g_sf = submatrix(&cov.genetic, &secondary, &[f]);
        prediction += k_tt_inv * (x * g_sf).column(0);
    }

    Ok(PredictionResult {
        train_blups: kinship.k_oo() * w.column(f),
        test_predictions: prediction,
        test_ids: kinship.test_ids(),
        train_ids: kinship.train_ids(),
        scenario: Scenario::Cv2,
        diagnostics: Diagnostics::default(),
    })
}

/// Step-one (CV1) genetic predictions of every trait for the test genotypes.
pub fn cv1_test_predictions<T: Real>(
    blues: &DMatrix<T>,
    kinship: &Kinship<T>,
    cov: &TraitCovariances<T>,
) -> Result<DMatrix<T>> {
    Ok(kinship.k_to() * cv1_weights(blues, kinship, cov)?)
}
