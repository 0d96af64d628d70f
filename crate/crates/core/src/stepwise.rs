//! Backward-elimination logistic baseline: select predictors by AIC on the
//! training split, re-estimate on validation, threshold test forecasts by
//! the cost ratio.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::glm::{
    classify, confusion_report, fit_weighted_logistic, threshold_from_costs, ConfusionReport, CostPair, GlmError,
    GlmFit,
};

#[derive(Debug, Error)]
pub enum StepwiseError {
    #[error("{cases} cases cannot support a logistic model with {predictors} predictors")]
    TooFewCases { cases: usize, predictors: usize },
    #[error("dataset columns {found:?} do not match the stepwise path's {expected:?}")]
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub removed: String,
    pub removed_index: usize,
    /// AIC of the model left after this removal.
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwisePath {
    pub predictor_names: Vec<String>,
    /// Columns removed before elimination because the full fit separated
    /// or failed to converge on them.
    pub separation_dropped: Vec<String>,
    pub initial_aic: f64,
    pub steps: Vec<StepRecord>,
    /// Column indices into `predictor_names`, ascending.
    pub final_predictors: Vec<usize>,
    pub final_aic: f64,
}

impl StepwisePath {
    pub fn final_names(&self) -> Vec<String> {
        self.final_predictors
            .iter()
            .map(|&j| self.predictor_names[j].clone())
            .collect()
    }

    pub fn intercept_only(&self) -> bool {
        self.final_predictors.is_empty()
    }

    /// `step,removed,aic`; step 0 is the starting model.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), StepwiseError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "removed", "aic"])?;
        w.write_record(["0", "", &self.initial_aic.to_string()])?;
        for (k, s) in self.steps.iter().enumerate() {
            w.write_record([(k + 1).to_string(), s.removed.clone(), s.aic.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn unweighted_fit(ds: &Dataset, columns: &[usize]) -> Result<GlmFit, GlmError> {
    let x = ds.x().select_columns(columns);
    fit_weighted_logistic(&x, ds.y(), &vec![1.0; ds.n_cases()])
}

/// −2·loglik + 2·(predictors + 1).
pub fn aic(fit: &GlmFit) -> f64 {
    fit.deviance + 2.0 * (fit.n_regressors() + 1) as f64
}

/// Greedy backward elimination by AIC from the full unweighted model.
pub fn backward_eliminate_aic(train: &Dataset) -> Result<StepwisePath, StepwiseError> {
    train.require_both_classes()?;
    let p = train.n_features();
    if train.n_cases() <= p + 1 {
        return Err(StepwiseError::TooFewCases {
            cases: train.n_cases(),
            predictors: p,
        });
    }
    let names = train.feature_names().to_vec();
    let mut current: Vec<usize> = (0..p).collect();
    let mut separation_dropped = Vec::new();

    let mut fit = unweighted_fit(train, &current)?;
    while (fit.separated || !fit.converged) && !current.is_empty() {
        let x = train.x();
        let worst = (0..current.len())
            .max_by(|&a, &b| {
                let s = |k: usize| {
                    let col = x.column(current[k]);
                    let mean = col.mean();
                    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
                    (fit.coefficients[k] * sd).abs()
                };
                s(a).total_cmp(&s(b)).then(b.cmp(&a))
            })
            .expect("nonempty");
        separation_dropped.push(names[current.remove(worst)].clone());
        fit = unweighted_fit(train, &current)?;
    }

    let initial_aic = aic(&fit);
    let mut current_aic = initial_aic;
    let mut steps = Vec::new();
    while !current.is_empty() {
        let trials: Vec<Result<f64, GlmError>> = (0..current.len())
            .into_par_iter()
            .map(|k| {
                let mut cols = current.clone();
                cols.remove(k);
                unweighted_fit(train, &cols).map(|f| aic(&f))
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (k, t) in trials.into_iter().enumerate() {
            let a = t?;
            if best.is_none_or(|(_, b)| a < b) {
                best = Some((k, a));
            }
        }
        let (k, a) = best.expect("nonempty");
        if !(a < current_aic) {
            break;
        }
        let j = current.remove(k);
        steps.push(StepRecord {
            removed: names[j].clone(),
            removed_index: j,
            aic: a,
        });
        current_aic = a;
    }

    Ok(StepwisePath {
        predictor_names: names,
        separation_dropped,
        initial_aic,
        steps,
        final_predictors: current,
        final_aic: current_aic,
    })
}

/// Stepwise-selected predictors re-estimated on validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub input_columns: Vec<String>,
    pub predictors: Vec<String>,
    pub column_indices: Vec<usize>,
    /// Selected predictors constant within validation, left out of the refit.
    pub dropped_constant: Vec<String>,
    pub fit: GlmFit,
    pub costs: CostPair,
    pub threshold: f64,
}

impl BaselineModel {
    pub fn probabilities(&self, ds: &Dataset) -> Result<Vec<f64>, StepwiseError> {
        if ds.feature_names() != self.input_columns.as_slice() {
            return Err(StepwiseError::ColumnMismatch {
                expected: self.input_columns.clone(),
                found: ds.feature_names().to_vec(),
            });
        }
        let x: DMatrix<f64> = ds.x().select_columns(&self.column_indices);
        Ok(self.fit.predict_matrix(&x)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub model: BaselineModel,
    pub report: ConfusionReport,
    pub test_probabilities: Vec<f64>,
}

/// Refits the selected predictors on `validation` (unweighted) and scores
/// `test` at the cost-derived threshold.
pub fn fit_and_evaluate_baseline(
    path: &StepwisePath,
    validation: &Dataset,
    test: &Dataset,
    costs: CostPair,
) -> Result<BaselineOutcome, StepwiseError> {
    for ds in [validation, test] {
        if ds.feature_names() != path.predictor_names.as_slice() {
            return Err(StepwiseError::ColumnMismatch {
                expected: path.predictor_names.clone(),
                found: ds.feature_names().to_vec(),
            });
        }
    }
    validation.require_both_classes()?;
    let mut column_indices = Vec::new();
    let mut dropped_constant = Vec::new();
    for &j in &path.final_predictors {
        let col = validation.x().column(j);
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if hi - lo <= 1e-12 * lo.abs().max(1.0) {
            dropped_constant.push(path.predictor_names[j].clone());
        } else {
            column_indices.push(j);
        }
    }
    if validation.n_cases() <= column_indices.len() + 1 {
        return Err(StepwiseError::TooFewCases {
            cases: validation.n_cases(),
            predictors: column_indices.len(),
        });
    }
    let fit = unweighted_fit(validation, &column_indices)?;
    let threshold = threshold_from_costs(costs);
    let model = BaselineModel {
        input_columns: path.predictor_names.clone(),
        predictors: column_indices.iter().map(|&j| path.predictor_names[j].clone()).collect(),
        column_indices,
        dropped_constant,
        fit,
        costs,
        threshold,
    };
    let test_probabilities = model.probabilities(test)?;
    let report = confusion_report(&classify(&test_probabilities, threshold), test.y(), costs)?;
    Ok(BaselineOutcome {
        model,
        report,
        test_probabilities,
    })
}
