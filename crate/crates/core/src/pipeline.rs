//! End-to-end gfBLUP fitting and prediction, plus the univariate gBLUP and
//! selection-index baselines behind a common interface.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{cov_to_cor, estimate_covariances, scale_to_covariance};
use crate::data::{center_and_scale, genotype_means, Kinship, PlotData, Standardization};
use crate::error::{Error, Result, StageExt};
use crate::factor::{
    fit_factor_model_with, latent_dimension, projection_matrix, FactorModel, FitOptions,
};
use crate::linalg::principal;
use crate::prediction::{
    blup_cv1, blup_cv2, blup_univariate, estimate_trait_covariances, fit_selection_index,
    reml_univariate, select_factors_with_guard, Diagnostics, PredictionResult, Scenario,
    SelectedFactors, SelectionIndex, TraitCovariances, VarianceComponents, SUBSET_GUARD,
};
use crate::scalar::Real;
use crate::shrinkage::{
    optimize_penalty, penalized_correlation, redundancy_filter, FilterResult, MatrixKind,
    PenaltyFit, DEFAULT_FOLDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Redundancy-filter threshold on absolute genetic correlation.
    pub tau: f64,
    pub k_folds: usize,
    pub fa_tol: f64,
    pub fa_max_iter: usize,
    pub subset_guard: usize,
    pub scenario: Scenario,
    pub test_standardization: TestStandardization,
    pub seed: u64,
}

/// Statistics used to standardize test-set secondary data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestStandardization {
    /// The test set's own means and standard deviations.
    #[default]
    Separate,
    /// The statistics stored from the training set.
    Training,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            k_folds: DEFAULT_FOLDS,
            fa_tol: crate::factor::FIT_TOL,
            fa_max_iter: crate::factor::FIT_MAX_ITER,
            subset_guard: SUBSET_GUARD,
            scenario: Scenario::Cv2,
            test_standardization: TestStandardization::Separate,
            seed: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidThreshold(self.tau));
        }
        if self.k_folds < 2 {
            return Err(Error::Config(format!(
                "k_folds must be at least 2, got {}",
                self.k_folds
            )));
        }
        if !(self.fa_tol > 0.0) || self.fa_max_iter == 0 {
            return Err(Error::Config(
                "factor-fit tolerance and iteration cap must be positive".into(),
            ));
        }
        if self.scenario == Scenario::Univariate {
            return Err(Error::Config("pipeline scenario must be cv1 or cv2".into()));
        }
        Ok(())
    }
}

/// Latent-factor stages; absent when no factor survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct FactorStage<T: Real> {
    pub model: FactorModel<T>,
    /// `p* × m̃` projection from filtered standardized features to scores.
    pub projection: DMatrix<T>,
    pub selected: SelectedFactors,
}

/// Multi-trait stage: covariances and training BLUEs of selected factors + focal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct TraitStage<T: Real> {
    pub covariances: TraitCovariances<T>,
    /// Training genotypes in kinship order; focal trait last.
    pub train_blues: DMatrix<T>,
}

/// Every artifact of a gfBLUP fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct FittedPipeline<T: Real> {
    pub config: PipelineConfig,
    pub feature_names: Vec<String>,
    pub focal_name: String,
    /// Training statistics for every column (secondary then focal).
    pub standardization: Standardization<T>,
    pub filter: FilterResult,
    pub penalty_genetic: PenaltyFit<T>,
    pub penalty_residual: PenaltyFit<T>,
    /// Covariance-scale genetic variances of the retained features.
    pub genetic_diag: DVector<T>,
    pub m_tilde: usize,
    pub factors: Option<FactorStage<T>>,
    pub traits: Option<TraitStage<T>>,
    /// Focal-only model, used when the multi-trait model is not available.
    pub univariate: VarianceComponents<T>,
    /// Standardized training focal BLUEs in kinship order.
    pub train_focal: DVector<T>,
    pub kinship: Kinship<T>,
}

impl<T: Real> FittedPipeline<T> {
    pub fn univariate_fallback(&self) -> bool {
        self.traits.is_none()
    }

    /// Number of selected factors.
    pub fn n_selected(&self) -> usize {
        self.factors
            .as_ref()
            .map_or(0, |f| f.selected.indices.len())
    }

    /// Names of the retained secondary features.
    pub fn kept_features(&self) -> Vec<String> {
        self.filter
            .kept
            .iter()
            .map(|&j| self.feature_names[j].clone())
            .collect()
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            m_tilde: Some(self.m_tilde),
            n_selected: Some(self.n_selected()),
            theta_genetic: Some(self.penalty_genetic.theta.as_f64()),
            theta_residual: Some(self.penalty_residual.theta.as_f64()),
            univariate_fallback: self.univariate_fallback(),
        }
    }
}

/// Reorders `train` to the kinship's training order and checks that it holds
/// exactly those genotypes.
fn align_training<T: Real>(train: &PlotData<T>, kinship: &Kinship<T>) -> Result<PlotData<T>> {
    let ids = kinship.train_ids();
    if train.n_genotypes() != ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "training data has {} genotypes, kinship partition has {}",
            train.n_genotypes(),
            ids.len()
        )));
    }
    train.subset_ids(&ids)
}

fn univariate_components<T: Real>(
    focal: &DVector<T>,
    kinship: &Kinship<T>,
) -> Result<VarianceComponents<T>> {
    reml_univariate(focal, kinship.oo_eigen())
}

/// Runs the seven gfBLUP stages on training data only.
pub fn fit<T: Real>(
    train: &PlotData<T>,
    kinship: &Kinship<T>,
    cfg: &PipelineConfig,
) -> Result<FittedPipeline<T>> {
    cfg.validate()?;
    let data = align_training(train, kinship).stage("input")?;
    if data.replicates() < 2 {
        return Err(Error::InsufficientReplication(data.replicates()));
    }
    let all_rows: Vec<usize> = (0..data.n_rows()).collect();
    let (data, standardization) = center_and_scale(&data, &all_rows).stage("standardize")?;
    let n_g = data.n_genotypes();
    let r = data.replicates();
    let focal_col = data.focal_column();

    // I: genetic and residual covariances of the secondary features.
    let pair = estimate_covariances(&data, &data.secondary_columns()).stage("covariances")?;
    let cor = cov_to_cor(&pair).stage("covariances")?;

    // II: redundancy filter.
    let filter = redundancy_filter(&cor.genetic, cfg.tau).stage("filter")?;
    let kept = filter.kept.clone();

    // III: penalized correlation matrices.
    let penalty_genetic =
        optimize_penalty(&data, &kept, MatrixKind::Genetic, cfg.k_folds, cfg.seed)
            .stage("penalty")?;
    let penalty_residual =
        optimize_penalty(&data, &kept, MatrixKind::Residual, cfg.k_folds, cfg.seed)
            .stage("penalty")?;
    let r_g = penalized_correlation(&principal(&cor.genetic, &kept), penalty_genetic.theta, None)
        .stage("penalty")?;
    let r_e = penalized_correlation(
        &principal(&cor.residual, &kept),
        penalty_residual.theta,
        None,
    )
    .stage("penalty")?;
    let genetic_diag =
        DVector::from_iterator(kept.len(), kept.iter().map(|&j| pair.genetic[(j, j)]));
    let residual_diag =
        DVector::from_iterator(kept.len(), kept.iter().map(|&j| pair.residual[(j, j)]));

    // IV: latent dimension.
    let m_tilde = latent_dimension(&r_g, n_g);

    let blues = genotype_means(&data);
    let train_focal = blues.values.column(focal_col).into_owned();
    let univariate = univariate_components(&train_focal, kinship).stage("univariate")?;

    let mut fitted = FittedPipeline {
        config: cfg.clone(),
        feature_names: data.feature_names().to_vec(),
        focal_name: data.focal_name().to_string(),
        standardization,
        filter,
        penalty_genetic,
        penalty_residual,
        genetic_diag: genetic_diag.clone(),
        m_tilde,
        factors: None,
        traits: None,
        univariate,
        train_focal,
        kinship: kinship.clone(),
    };
    if m_tilde == 0 {
        return Ok(fitted);
    }

    // V: factor model and rotation.
    let opts = FitOptions {
        tol: cfg.fa_tol,
        max_iter: cfg.fa_max_iter,
        ..FitOptions::default()
    };
    let model = fit_factor_model_with(&r_g, m_tilde, opts)
        .stage("factor model")?
        .rotate();

    // VI: factor scores and subset selection.
    let residual_cov = scale_to_covariance(&r_e, &residual_diag).stage("factor scores")?;
    let projection =
        projection_matrix(&model, &residual_cov, &genetic_diag, r).stage("factor scores")?;
    let scores = data.columns(&kept) * &projection;
    let score_blues = crate::data::column_genotype_means(&scores, data.design());
    let selected = select_factors_with_guard(&score_blues, &fitted.train_focal, cfg.subset_guard)
        .stage("subset selection")?;

    if !selected.is_empty() {
        // VII: covariances of selected factors and focal trait.
        let t = selected.indices.len();
        let mut trait_values = scores
            .select_columns(&selected.indices)
            .insert_column(t, T::zero());
        trait_values.set_column(t, &data.values().column(focal_col));
        let covariances =
            estimate_trait_covariances(&trait_values, data.design()).stage("trait covariances")?;
        let train_blues = crate::data::column_genotype_means(&trait_values, data.design());
        fitted.traits = Some(TraitStage {
            covariances,
            train_blues,
        });
    }
    fitted.factors = Some(FactorStage {
        model,
        projection,
        selected,
    });
    Ok(fitted)
}

/// Standardizes the secondary columns of test data, after checking that the
/// features match the training features. `training` supplies stored statistics;
/// without it the test set's own statistics are used.
fn standardize_test<T: Real>(
    test: &PlotData<T>,
    feature_names: &[String],
    ids: &[String],
    training: Option<&Standardization<T>>,
) -> Result<PlotData<T>> {
    if test.feature_names() != feature_names {
        return Err(Error::DimensionMismatch(
            "test secondary features differ from the training features".into(),
        ));
    }
    let test = test.subset_ids(ids)?;
    match training {
        Some(stats) => test.with_values(stats.apply(test.values()), feature_names.to_vec()),
        None => {
            let rows: Vec<usize> = (0..test.n_rows()).collect();
            Ok(crate::data::center_and_scale_secondary(&test, &rows)?.0)
        }
    }
}

/// Predicts with the scenario stored in the configuration.
pub fn predict<T: Real>(
    fitted: &FittedPipeline<T>,
    test_secondary: Option<&PlotData<T>>,
) -> Result<PredictionResult<T>> {
    predict_scenario(fitted, fitted.config.scenario, test_secondary)
}

/// Focal-trait predictions for the kinship's test genotypes.
///
/// CV2 needs plot-level test data containing the same secondary features;
/// its focal column is never read.
pub fn predict_scenario<T: Real>(
    fitted: &FittedPipeline<T>,
    scenario: Scenario,
    test_secondary: Option<&PlotData<T>>,
) -> Result<PredictionResult<T>> {
    let mut result = match (&fitted.traits, scenario) {
        (_, Scenario::Univariate) | (None, _) => {
            let vc = &fitted.univariate;
            let y = fitted.train_focal.add_scalar(-vc.intercept);
            blup_univariate(&y, &fitted.kinship, vc.sigma_g, vc.sigma_e)?
        }
        (Some(traits), Scenario::Cv1) => {
            blup_cv1(&traits.train_blues, &fitted.kinship, &traits.covariances)?
        }
        (Some(traits), Scenario::Cv2) => {
            let test = test_secondary.ok_or(Error::MissingTestData)?;
            let factors = fitted
                .factors
                .as_ref()
                .expect("trait stage implies factor stage");
            let stats = match fitted.config.test_standardization {
                TestStandardization::Separate => None,
                TestStandardization::Training => Some(&fitted.standardization),
            };
            let test = standardize_test(
                test,
                &fitted.feature_names,
                &fitted.kinship.test_ids(),
                stats,
            )?;
            let projection = factors.projection.select_columns(&factors.selected.indices);
            let scores = test.columns(&fitted.filter.kept) * projection;
            let test_blues = crate::data::column_genotype_means(&scores, test.design());
            blup_cv2(
                &traits.train_blues,
                &fitted.kinship,
                &traits.covariances,
                &test_blues,
            )?
        }
    };
    if scenario == Scenario::Univariate || fitted.traits.is_none() {
        result.scenario = scenario;
    }
    result.diagnostics = fitted.diagnostics();
    Ok(result)
}

/// Univariate gBLUP baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct UnivariateModel<T: Real> {
    pub components: VarianceComponents<T>,
    pub train_focal: DVector<T>,
    pub kinship: Kinship<T>,
}

pub fn fit_univariate<T: Real>(
    train: &PlotData<T>,
    kinship: &Kinship<T>,
) -> Result<UnivariateModel<T>> {
    let data = align_training(train, kinship)?;
    let focal = genotype_means(&data)
        .values
        .column(data.focal_column())
        .into_owned();
    Ok(UnivariateModel {
        components: univariate_components(&focal, kinship)?,
        train_focal: focal,
        kinship: kinship.clone(),
    })
}

impl<T: Real> UnivariateModel<T> {
    pub fn predict(&self) -> Result<PredictionResult<T>> {
        let vc = &self.components;
        let y = self.train_focal.add_scalar(-vc.intercept);
        blup_univariate(&y, &self.kinship, vc.sigma_g, vc.sigma_e)
    }
}

/// Selection-index baseline: the index enters a bivariate BLUP with the focal trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct SiBlupModel<T: Real> {
    pub index: SelectionIndex<T>,
    pub feature_names: Vec<String>,
    pub traits: TraitStage<T>,
    pub kinship: Kinship<T>,
}

pub fn fit_siblup<T: Real>(
    train: &PlotData<T>,
    kinship: &Kinship<T>,
    cfg: &PipelineConfig,
) -> Result<SiBlupModel<T>> {
    cfg.validate()?;
    let data = align_training(train, kinship)?;
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let (data, _) = center_and_scale(&data, &rows)?;
    let secondary = data.columns(&data.secondary_columns());
    let focal = data.focal();
    let index = fit_selection_index(
        &secondary,
        &focal,
        data.design(),
        cfg.tau,
        cfg.k_folds,
        cfg.seed,
    )
    .stage("selection index")?;
    let mut values = DMatrix::zeros(data.n_rows(), 2);
    values.set_column(0, &index.apply(&secondary));
    values.set_column(1, &focal);
    let covariances =
        estimate_trait_covariances(&values, data.design()).stage("trait covariances")?;
    let train_blues = crate::data::column_genotype_means(&values, data.design());
    Ok(SiBlupModel {
        index,
        feature_names: data.feature_names().to_vec(),
        traits: TraitStage {
            covariances,
            train_blues,
        },
        kinship: kinship.clone(),
    })
}

impl<T: Real> SiBlupModel<T> {
    pub fn predict(
        &self,
        scenario: Scenario,
        test_secondary: Option<&PlotData<T>>,
    ) -> Result<PredictionResult<T>> {
        match scenario {
            Scenario::Cv2 => {
                let test = test_secondary.ok_or(Error::MissingTestData)?;
                let test =
                    standardize_test(test, &self.feature_names, &self.kinship.test_ids(), None)?;
                let index = self.index.apply(&test.columns(&test.secondary_columns()));
                let blues = crate::data::column_genotype_means(
                    &DMatrix::from_column_slice(index.len(), 1, index.as_slice()),
                    test.design(),
                );
                blup_cv2(
                    &self.traits.train_blues,
                    &self.kinship,
                    &self.traits.covariances,
                    &blues,
                )
            }
            _ => {
                let mut res = blup_cv1(
                    &self.traits.train_blues,
                    &self.kinship,
                    &self.traits.covariances,
                )?;
                res.scenario = scenario;
                Ok(res)
            }
        }
    }
}

/// Which predictor to run in a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Univariate,
    Gfblup,
    Siblup,
    Oracle,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Univariate => "univariate",
            Method::Gfblup => "gfblup",
            Method::Siblup => "siblup",
            Method::Oracle => "oracle",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "univariate" | "gblup" => Ok(Method::Univariate),
            "gfblup" => Ok(Method::Gfblup),
            "siblup" => Ok(Method::Siblup),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}
