use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    /// Population (1/N) standard deviation.
    pub sd: f64,
}

/// Training-sample z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    /// Column names of the input the parameters were estimated on, in order.
    pub input_columns: Vec<String>,
    pub retained: Vec<ColumnStats>,
    /// Zero-variance training columns, removed from every transformed dataset.
    pub dropped: Vec<String>,
}

impl StandardizationParams {
    pub fn retained_names(&self) -> Vec<String> {
        self.retained.iter().map(|c| c.name.clone()).collect()
    }

    /// Z-scores a raw predictor matrix laid out per `input_columns`.
    pub fn transform_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, DataError> {
        if x.ncols() != self.input_columns.len() {
            return Err(DataError::Shape(format!(
                "expected {} predictor columns, got {}",
                self.input_columns.len(),
                x.ncols()
            )));
        }
        let mut out = DMatrix::zeros(x.nrows(), self.retained.len());
        let mut k = 0;
        for (j, name) in self.input_columns.iter().enumerate() {
            let Some(stats) = self.retained.get(k).filter(|s| &s.name == name) else {
                continue;
            };
            for i in 0..x.nrows() {
                out[(i, k)] = (x[(i, j)] - stats.mean) / stats.sd;
            }
            k += 1;
        }
        Ok(out)
    }

    /// Maps z-scores back to original units (retained columns only).
    pub fn invert_matrix(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (k, stats) in self.retained.iter().enumerate() {
            for i in 0..z.nrows() {
                out[(i, k)] = z[(i, k)] * stats.sd + stats.mean;
            }
        }
        out
    }
}

/// Estimates z-score parameters on `train` and applies them to it.
pub fn standardize(train: &Dataset) -> Result<(Dataset, StandardizationParams), DataError> {
    let x = train.x();
    let n = x.nrows() as f64;
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in train.feature_names().iter().enumerate() {
        let col = x.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        // Relative cutoff so that constant columns with round-off in the
        // mean are still recognised as constant.
        if sd <= 1e-12 * mean.abs().max(1.0) {
            dropped.push(name.clone());
        } else {
            retained.push(ColumnStats {
                name: name.clone(),
                mean,
                sd,
            });
        }
    }
    if retained.is_empty() {
        return Err(DataError::NoVariance);
    }
    let params = StandardizationParams {
        input_columns: train.feature_names().to_vec(),
        retained,
        dropped,
    };
    let z = params.transform_matrix(x)?;
    Ok((train.with_predictors(z, params.retained_names()), params))
}

/// Applies training parameters to another dataset with the same columns.
pub fn apply_standardization(
    ds: &Dataset,
    params: &StandardizationParams,
) -> Result<Dataset, DataError> {
    if ds.feature_names() != params.input_columns.as_slice() {
        return Err(DataError::ColumnMismatch {
            expected: params.input_columns.clone(),
            found: ds.feature_names().to_vec(),
        });
    }
    let z = params.transform_matrix(ds.x())?;
    Ok(ds.with_predictors(z, params.retained_names()))
}
