//! Case data. Encoding and splitting live here, as do z-scoring and the
//! synthetic generators.

mod split;
mod standardize;
mod synthetic;
mod table;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use split::{read_split_csv, split_three_way, write_split_csv, SplitAssignment, SplitName};
pub use standardize::{apply_standardization, standardize, ColumnStats, StandardizationParams};
pub use synthetic::{generate_synthetic, regression1d_target, SyntheticKind};
pub use table::{
    load_and_encode, CategoricalSchema, CASE_ID, ColumnKind, EncodeReport, FeatureSchema, RawColumn,
    RawTable, SourceColumn,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("response column `{0}` not found")]
    MissingResponse(String),
    #[error("categorical column `{0}` has a single observed level; it carries no information")]
    SingleLevel(String),
    #[error("only {complete} complete rows after dropping incomplete ones; at least 3 are required")]
    TooFewRows { complete: usize },
    #[error("response must take exactly two values in classification mode, found {0:?}")]
    ResponseNotBinary(Vec<String>),
    #[error("response value `{0}` is not a finite number")]
    ResponseNotNumeric(String),
    #[error("classification requires both classes; only class {present} is present")]
    SingleClass { present: u8 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("standardization parameters expect columns {expected:?}, dataset has {found:?}")]
    ColumnMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("every predictor column has zero variance on the training data")]
    NoVariance,
    #[error("invalid split proportions {0:?}: each must be positive and they must sum to 1")]
    InvalidProportions([f64; 3]),
    #[error("{split} split has {count} cases of class {class}; at least 2 are required (reseed or enable stratification)")]
    ClassStarved {
        split: SplitName,
        class: u8,
        count: usize,
    },
    #[error("{split} split would hold only {count} cases")]
    SplitTooSmall { split: SplitName, count: usize },
    #[error("synthetic generator needs n >= 20, got {0}")]
    SyntheticTooSmall(usize),
    #[error("unknown synthetic kind `{0}` (expected regression1d or nonlinear_binary)")]
    UnknownKind(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("column `{column}` row {row}: cannot encode value `{value}`")]
    Unencodable {
        column: String,
        row: usize,
        value: String,
    },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema file: {0}")]
    SchemaFile(String),
}

/// How the response column is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Binary 0/1 outcome.
    Classification,
    /// Finite numeric outcome.
    Regression,
}

/// Encoded, fully numeric cases ready for kernel construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
    feature_names: Vec<String>,
    mode: ResponseMode,
}

impl Dataset {
    /// Validates shapes and values. Classification responses must be 0 or 1;
    /// whether both classes are present is checked by the operations that need it.
    pub fn new(
        x: DMatrix<f64>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        mode: ResponseMode,
    ) -> Result<Self, DataError> {
        if x.nrows() != y.len() {
            return Err(DataError::Shape(format!(
                "{} predictor rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() != feature_names.len() {
            return Err(DataError::Shape(format!(
                "{} predictor columns but {} feature names",
                x.ncols(),
                feature_names.len()
            )));
        }
        if x.nrows() < 3 {
            return Err(DataError::TooFewRows { complete: x.nrows() });
        }
        let ds = Self {
            x,
            y,
            feature_names,
            mode,
        };
        ds.check_values()?;
        Ok(ds)
    }

    fn check_values(&self) -> Result<(), DataError> {
        for col in 0..self.x.ncols() {
            for row in 0..self.x.nrows() {
                if !self.x[(row, col)].is_finite() {
                    return Err(DataError::NonFinite { row, col });
                }
            }
        }
        for &v in &self.y {
            match self.mode {
                ResponseMode::Classification if v != 0.0 && v != 1.0 => {
                    return Err(DataError::ResponseNotBinary(vec![v.to_string()]));
                }
                ResponseMode::Regression if !v.is_finite() => {
                    return Err(DataError::ResponseNotNumeric(v.to_string()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn mode(&self) -> ResponseMode {
        self.mode
    }

    pub fn n_cases(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Number of cases with y = 1 (classification mode).
    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn require_both_classes(&self) -> Result<(), DataError> {
        if self.mode != ResponseMode::Classification {
            return Ok(());
        }
        let pos = self.positives();
        if pos == 0 {
            Err(DataError::SingleClass { present: 0 })
        } else if pos == self.n_cases() {
            Err(DataError::SingleClass { present: 1 })
        } else {
            Ok(())
        }
    }

    /// Rows in the given order. Subsets may be smaller than the 3-row
    /// minimum a freshly loaded dataset must satisfy.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let x = self.x.select_rows(indices);
        let y = indices.iter().map(|&i| self.y[i]).collect();
        Dataset {
            x,
            y,
            feature_names: self.feature_names.clone(),
            mode: self.mode,
        }
    }

    /// Keep only the named columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(columns),
            y: self.y.clone(),
            feature_names: columns
                .iter()
                .map(|&c| self.feature_names[c].clone())
                .collect(),
            mode: self.mode,
        }
    }

    /// `case_id`, the predictors, then the response under `response`.
    pub fn write_csv<W: std::io::Write>(&self, response: &str, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![CASE_ID.to_owned()];
        header.extend(self.feature_names.iter().cloned());
        header.push(response.to_owned());
        w.write_record(&header)?;
        for i in 0..self.n_cases() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.x.row(i).iter().map(f64::to_string));
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub(crate) fn with_predictors(&self, x: DMatrix<f64>, feature_names: Vec<String>) -> Dataset {
        debug_assert_eq!(x.nrows(), self.y.len());
        Dataset {
            x,
            y: self.y.clone(),
            feature_names,
            mode: self.mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_skips_case_id() {
        let ds = generate_synthetic(SyntheticKind::NonlinearBinary, 40, 2, 0.1).unwrap();
        let mut buf = Vec::new();
        ds.write_csv("y", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("case_id,x1,x2,y\n"));
        let table = RawTable::from_csv(text.as_bytes(), "y", None).unwrap();
        assert_eq!(table.columns.len(), 3);
        let (back, rep) = load_and_encode(&table, ResponseMode::Classification).unwrap();
        assert_eq!(back.feature_names(), ds.feature_names());
        assert_eq!(back.x(), ds.x());
        assert_eq!(back.y(), ds.y());
        assert_eq!(rep.dropped_incomplete, 0);
    }
}
