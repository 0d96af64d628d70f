//! End-to-end runs over one split assignment, for the kernel model and
//! the stepwise baseline alone or side by side.

use serde::{Deserialize, Serialize};

use crate::data::{apply_standardization, split_three_way, standardize, Dataset, SplitAssignment, StandardizationParams};
use crate::forecaster::KpcrModel;
use crate::glm::{ConfusionReport, CostPair};
use crate::report::{histogram, iqr, HistogramBin};
use crate::selection::{evaluate_on_test, run_grid, select_best, CandidateResult, SearchGrid, SelectedModel, TestEvaluation, HISTOGRAM_BINS};
use crate::stepwise::{backward_eliminate_aic, fit_and_evaluate_baseline, BaselineOutcome, StepwisePath};

pub const THIRDS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

/// Standardized splits; all three use training-only z-score parameters.
#[derive(Debug, Clone)]
pub struct PreparedSplits {
    pub assignment: SplitAssignment,
    pub standardization: StandardizationParams,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

pub fn prepare_splits(ds: &Dataset, seed: u64, proportions: [f64; 3], stratified: bool) -> crate::Result<PreparedSplits> {
    let assignment = split_three_way(ds, seed, proportions, stratified)?;
    let (train, standardization) = standardize(&ds.select_rows(&assignment.train))?;
    let validation = apply_standardization(&ds.select_rows(&assignment.validation), &standardization)?;
    let test = apply_standardization(&ds.select_rows(&assignment.test), &standardization)?;
    Ok(PreparedSplits {
        assignment,
        standardization,
        train,
        validation,
        test,
    })
}

#[derive(Debug, Clone)]
pub struct KpclrRun {
    pub grid: SearchGrid,
    pub results: Vec<CandidateResult>,
    pub selected: SelectedModel,
    pub model: KpcrModel,
    pub test: TestEvaluation,
}

/// Grid search on training/validation, then an honest test evaluation.
pub fn run_kpclr(splits: &PreparedSplits, grid: &SearchGrid) -> crate::Result<KpclrRun> {
    let results = run_grid(&splits.train, &splits.validation, grid)?;
    let selected = select_best(&results, grid.costs.target_ratio(), grid.ratio_tolerance)?;
    let model = selected.build_model()?;
    let test = evaluate_on_test(&model, &splits.test)?;
    Ok(KpclrRun {
        grid: grid.clone(),
        results,
        selected,
        model,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub path: StepwisePath,
    pub outcome: BaselineOutcome,
    pub histogram: Vec<HistogramBin>,
    pub iqr: f64,
}

/// Stepwise selection on training, refit on validation, scored on test.
pub fn run_baseline(splits: &PreparedSplits, costs: CostPair) -> crate::Result<BaselineRun> {
    let path = backward_eliminate_aic(&splits.train)?;
    let outcome = fit_and_evaluate_baseline(&path, &splits.validation, &splits.test, costs)?;
    Ok(BaselineRun {
        histogram: histogram(&outcome.test_probabilities, HISTOGRAM_BINS, 0.0, 1.0),
        iqr: iqr(&outcome.test_probabilities),
        path,
        outcome,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub kpclr: KpclrRun,
    pub baseline: BaselineRun,
}

/// Both methods on the identical split assignment and costs.
pub fn run_compare(splits: &PreparedSplits, grid: &SearchGrid) -> crate::Result<Comparison> {
    Ok(Comparison {
        kpclr: run_kpclr(splits, grid)?,
        baseline: run_baseline(splits, grid.costs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub costs: CostPair,
    pub split_seed: u64,
    pub kpclr_kernel: String,
    pub kpclr_rho: f64,
    pub kpclr_rank: usize,
    pub kpclr_validation: Option<ConfusionReport>,
    pub kpclr_test: ConfusionReport,
    pub kpclr_iqr: f64,
    pub baseline_predictors: Vec<String>,
    pub baseline_test: ConfusionReport,
    pub baseline_iqr: f64,
}

impl Comparison {
    pub fn summary(&self) -> ComparisonSummary {
        let k = &self.kpclr;
        ComparisonSummary {
            costs: k.grid.costs,
            split_seed: k.grid.seed,
            kpclr_kernel: k.model.kernel.to_string(),
            kpclr_rho: k.model.rho,
            kpclr_rank: k.model.rank(),
            kpclr_validation: k.selected.winner.report.clone(),
            kpclr_test: k.test.report.clone(),
            kpclr_iqr: k.test.iqr,
            baseline_predictors: self.baseline.outcome.model.predictors.clone(),
            baseline_test: self.baseline.outcome.report.clone(),
            baseline_iqr: self.baseline.iqr,
        }
    }
}

impl ComparisonSummary {
    /// Side-by-side text report.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "Kernel model: {} at rho {} ({} components)\n",
            self.kpclr_kernel, self.kpclr_rho, self.kpclr_rank
        ));
        s.push_str(&self.kpclr_test.render_table("Kernel model, test split"));
        s.push('\n');
        s.push_str(&format!(
            "Baseline: stepwise logistic on {} predictor(s): {}\n",
            self.baseline_predictors.len(),
            if self.baseline_predictors.is_empty() {
                "(intercept only)".to_owned()
            } else {
                self.baseline_predictors.join(", ")
            }
        ));
        s.push_str(&self.baseline_test.render_table("Baseline, test split"));
        s.push('\n');
        s.push_str(&format!(
            "{:<28}{:>14}{:>14}\n{:<28}{:>14}{:>14}\n{:<28}{:>14.4}{:>14.4}\n",
            "",
            "kernel",
            "baseline",
            "cost-weighted test error",
            self.kpclr_test.cost_weighted_error,
            self.baseline_test.cost_weighted_error,
            "fitted-value IQR",
            self.kpclr_iqr,
            self.baseline_iqr
        ));
        s
    }
}
