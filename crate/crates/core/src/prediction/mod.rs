//! Factor subset selection, trait covariances and BLUP prediction.

pub mod blup;
pub mod kron;
pub mod metrics;
pub mod siblup;
pub mod subset;
pub mod variance;

pub use blup::{
    blup_cv1, blup_cv2, blup_univariate, cv1_test_predictions, Diagnostics, PredictionResult,
    Scenario,
};
pub use kron::{fast_kron_solve, KronSolver};
pub use metrics::accuracy;
pub use siblup::{fit_selection_index, siblup_weights, SelectionIndex};
pub use subset::{
    adjusted_r2, estimate_trait_covariances, select_factors, select_factors_exhaustive,
    select_factors_forward, select_factors_with_guard, SelectedFactors, TraitCovariances,
    SUBSET_GUARD,
};
pub use variance::{reml_univariate, VarianceComponents};
