//! Genetic latent factor BLUP (gfBLUP): multi-trait genomic prediction that
//! compresses high-dimensional secondary phenotypes into a few genetic factors.
//!
//! Numerical code is generic over [`Real`]; the aliases below fix `f64`.

// `!(x > 0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod covariance;
pub mod data;
pub mod error;
pub mod factor;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod prediction;
pub mod scalar;
pub mod shrinkage;
pub mod simulation;

pub use benchmark::{run_benchmark, BenchmarkConfig, BenchmarkReport, ReportRow};
pub use covariance::{
    cor_to_cov, cov_to_cor, estimate_covariances, mean_squares, nearest_positive_definite,
    CovariancePair, Scale,
};
pub use data::{
    center_and_scale, genotype_means, vanraden_kinship, BlueMatrix, Design, Kinship, MarkerMatrix,
    PlotData,
};
pub use error::{Error, Result};
pub use factor::{
    factor_scores, fit_factor_model, latent_dimension, ledermann_bound, varimax, FactorModel,
    FactorScores,
};
pub use pipeline::{
    fit, predict, predict_scenario, FittedPipeline, Method, PipelineConfig, TestStandardization,
};
pub use prediction::{
    accuracy, blup_cv1, blup_cv2, blup_univariate, fast_kron_solve, select_factors, siblup_weights,
    PredictionResult, Scenario, SelectedFactors, TraitCovariances,
};
pub use scalar::Real;
pub use shrinkage::{
    optimize_penalty, penalized_correlation, redundancy_filter, FilterResult, MatrixKind,
    PenaltyFit,
};
pub use simulation::{
    benchmark_oracle, simulate_dataset, simulate_markers, split_train_test, Partition, SimConfig,
    SimTruth,
};

pub type PlotData64 = data::PlotData<f64>;
pub type Kinship64 = data::Kinship<f64>;
pub type BlueMatrix64 = data::BlueMatrix<f64>;
pub type CovariancePair64 = covariance::CovariancePair<f64>;
pub type FactorModel64 = factor::FactorModel<f64>;
pub type FactorScores64 = factor::FactorScores<f64>;
pub type TraitCovariances64 = prediction::TraitCovariances<f64>;
pub type PredictionResult64 = prediction::PredictionResult<f64>;
pub type FittedPipeline64 = pipeline::FittedPipeline<f64>;
pub type PenaltyFit64 = shrinkage::PenaltyFit<f64>;
