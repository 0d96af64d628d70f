//! Kernel principal-components regression for forecasting.
//!
//! The pipeline runs from raw tabular cases to a self-contained forecaster:
//!
//! 1. [`data`] encodes categoricals as indicators and draws disjoint
//!    training/validation/test splits. Predictors are z-scored with
//!    training-only statistics.
//! 2. [`kernel`] turns the standardized predictors into an N×N radial or
//!    ANOVA kernel matrix and double-centers it.
//! 3. [`kpca`] eigendecomposes the centered kernel and projects cases onto
//!    the leading principal components.
//! 4. [`glm`] fits case-weighted logistic regression (or least squares) on
//!    those components and tabulates asymmetric-cost confusion reports.
//! 5. [`selection`] sweeps kernels and variance fractions on training data
//!    and picks a model on validation data with a two-cut rule.
//! 6. [`stepwise`] provides the backward-AIC logistic baseline.
//! 7. [`forecaster`] bundles everything needed to score new cases and
//!    persists it as checksummed JSON.

pub mod config;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod glm;
pub mod kernel;
pub mod kpca;
pub mod pipeline;
pub mod report;
pub mod selection;
pub mod stepwise;

pub use error::{Error, Result};

pub use data::{
    generate_synthetic, split_three_way, standardize, Dataset, FeatureSchema, ResponseMode,
    SplitAssignment, StandardizationParams, SyntheticKind,
};
pub use forecaster::{FittedForecaster, KpcrModel};
pub use glm::{
    confusion_report, cost_weights, fit_linear, fit_weighted_logistic, threshold_from_costs,
    ConfusionReport, CostPair, GlmFit, Link,
};
pub use kernel::{
    build_kernel_matrix, center_kernel_matrix, kernel_value, new_point_kernel_row, CenteredKernel,
    KernelFamily, KernelMatrix, KernelSpec,
};
pub use kpca::{eigendecompose, project_new, project_training, select_rank, KpcBasis, PcRegressors};
pub use selection::{run_grid, select_best, CandidateResult, SearchGrid, SelectedModel};
pub use stepwise::{backward_eliminate_aic, fit_and_evaluate_baseline, BaselineModel, StepwisePath};
