//! Self-contained forecasters and their checksummed JSON model files.
//!
//! Scoring a new case needs the training cases themselves, so a model file
//! embeds the standardized training matrix, the kernel centering statistics
//! and the truncated eigenbasis next to the regression coefficients.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, Dataset, FeatureSchema, RawTable, ResponseMode, StandardizationParams, CASE_ID};
use crate::glm::{cost_weights, fit_linear, fit_weighted_logistic, CostPair, GlmFit, Link};
use crate::kernel::{build_kernel_matrix, center_kernel_matrix, center_new_rows, cross_kernel, CenteringStats, KernelSpec};
use crate::kpca::{eigendecompose, project_new_rows, project_training, select_rank, KpcBasis};
use crate::selection::CandidateResult;

pub const MODEL_FORMAT: &str = "kpclr-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("cannot access model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file is corrupt: {0}")]
    Corrupt(String),
    #[error("model checksum mismatch: file says {expected}, payload hashes to {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("unsupported model file: format `{format}` version {version} (this build reads `{MODEL_FORMAT}` version {MODEL_VERSION})")]
    Unsupported { format: String, version: u32 },
    #[error("model payload is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        (m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (ncols, rows) = <(usize, Vec<Vec<f64>>)>::deserialize(d)?;
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Kernel principal-components regression fitted on standardized predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpcrModel {
    pub kernel: KernelSpec,
    pub mode: ResponseMode,
    pub rho: f64,
    #[serde(with = "matrix_rows")]
    pub train_x: DMatrix<f64>,
    pub centering: CenteringStats,
    /// Leading `rank` eigenpairs only.
    pub basis: KpcBasis,
    pub glm: GlmFit,
    /// Class 1 iff probability > threshold (classification only).
    pub threshold: f64,
    pub costs: CostPair,
}

/// Probability cut used by the kernel model: costs already enter through
/// the case weights, so the fitted probabilities are cut at one half.
pub const WEIGHTED_THRESHOLD: f64 = 0.5;

impl KpcrModel {
    /// Fits one kernel/ρ combination end to end on standardized predictors.
    pub fn fit(
        x_std: &DMatrix<f64>,
        y: &[f64],
        mode: ResponseMode,
        kernel: KernelSpec,
        rho: f64,
        costs: CostPair,
    ) -> crate::Result<KpcrModel> {
        let ck = center_kernel_matrix(&build_kernel_matrix(x_std, &kernel)?)?;
        let basis = eigendecompose(&ck)?;
        let r = select_rank(&basis, rho)?;
        let scores = project_training(&ck, &basis, r)?.into_scores();
        let glm = match mode {
            ResponseMode::Classification => fit_weighted_logistic(&scores, y, &cost_weights(y, costs)?)?,
            ResponseMode::Regression => fit_linear(&scores, y)?,
        };
        Ok(KpcrModel {
            kernel,
            mode,
            rho,
            train_x: x_std.clone(),
            centering: ck.stats().clone(),
            basis: basis.truncate(r)?,
            glm,
            threshold: WEIGHTED_THRESHOLD,
            costs,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.n_components()
    }

    pub fn n_features(&self) -> usize {
        self.train_x.ncols()
    }

    /// Component scores (M×r) for standardized cases, one per row.
    pub fn scores(&self, x_std: &DMatrix<f64>) -> crate::Result<DMatrix<f64>> {
        let raw = cross_kernel(x_std, &self.train_x, &self.kernel)?;
        let centered = center_new_rows(&raw, &self.centering)?;
        Ok(project_new_rows(&centered, &self.basis, self.rank())?)
    }

    /// Probabilities (classification) or fitted values (regression).
    pub fn predict(&self, x_std: &DMatrix<f64>) -> crate::Result<Vec<f64>> {
        if x_std.nrows() == 0 {
            return Ok(Vec::new());
        }
        Ok(self.glm.predict_matrix(&self.scores(x_std)?)?)
    }

    pub fn classify(&self, x_std: &DMatrix<f64>) -> crate::Result<Vec<u8>> {
        Ok(crate::glm::classify(&self.predict(x_std)?, self.threshold))
    }

    fn check(&self) -> Result<(), ModelIoError> {
        let n = self.train_x.nrows();
        let r = self.rank();
        let bad = |m: String| Err(ModelIoError::Inconsistent(m));
        if self.basis.n_cases() != n || self.centering.column_means.len() != n {
            return bad(format!("training matrix has {n} rows but basis/centering disagree"));
        }
        if self.glm.coefficients.len() != r {
            return bad(format!("{} coefficients for rank {r}", self.glm.coefficients.len()));
        }
        if self.basis.positive_count() != r {
            return bad("basis holds non-positive eigenvalues".into());
        }
        let want = match self.mode {
            ResponseMode::Classification => Link::Logit,
            ResponseMode::Regression => Link::Identity,
        };
        if self.glm.link != want {
            return bad("link does not match response mode".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Validation summary of the winning candidate, when chosen by grid search.
    pub selected: Option<CandidateResult>,
    pub audit_file: Option<String>,
}

/// Everything needed to score raw cases: encoding, standardization, model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedForecaster {
    pub format_version: u32,
    pub response: String,
    pub class_labels: Option<[String; 2]>,
    pub schema: FeatureSchema,
    pub standardization: StandardizationParams,
    pub model: KpcrModel,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub case_id: String,
    pub value: f64,
    /// None for numeric responses.
    pub class: Option<u8>,
}

impl FittedForecaster {
    pub fn new(
        response: String,
        class_labels: Option<[String; 2]>,
        schema: FeatureSchema,
        standardization: StandardizationParams,
        model: KpcrModel,
        provenance: Provenance,
    ) -> Self {
        FittedForecaster {
            format_version: MODEL_VERSION,
            response,
            class_labels,
            schema,
            standardization,
            model,
            provenance,
        }
    }

    /// Scores an encoded, unstandardized dataset laid out like training.
    pub fn predict_dataset(&self, ds: &Dataset) -> crate::Result<Vec<f64>> {
        if ds.feature_names() != self.standardization.input_columns.as_slice() {
            return Err(DataError::ColumnMismatch {
                expected: self.standardization.input_columns.clone(),
                found: ds.feature_names().to_vec(),
            }
            .into());
        }
        self.predict_encoded(ds.x())
    }

    /// Reads labeled cases and encodes them with the training schema and
    /// class labels. Rows missing any needed cell are dropped, as in
    /// training; the count of dropped rows is returned alongside.
    pub fn labeled_dataset<R: Read>(&self, input: R) -> crate::Result<(Dataset, usize)> {
        let table = RawTable::from_csv(input, &self.response, None)?;
        let header: Vec<String> = table.columns.iter().map(|c| c.name.clone()).collect();
        let resp = header
            .iter()
            .position(|h| *h == self.response)
            .ok_or_else(|| DataError::MissingResponse(self.response.clone()))?;
        let needed: Vec<usize> = (0..header.len())
            .filter(|&j| j == resp || self.schema.columns.iter().any(|c| c.name() == header[j]))
            .collect();
        let (rows, dropped): (Vec<_>, Vec<_>) = table
            .rows
            .into_iter()
            .partition(|r| needed.iter().all(|&j| r[j].is_some()));
        let x = self.schema.encode_rows(&header, &rows, &[self.response.as_str()])?;
        let y = rows
            .iter()
            .map(|r| {
                let raw = r[resp].as_deref().unwrap_or_default().trim();
                match (&self.class_labels, self.model.mode) {
                    (Some([neg, pos]), ResponseMode::Classification) => {
                        if raw == pos {
                            Ok(1.0)
                        } else if raw == neg {
                            Ok(0.0)
                        } else {
                            Err(DataError::ResponseNotBinary(vec![neg.clone(), pos.clone(), raw.to_owned()]))
                        }
                    }
                    _ => raw
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| DataError::ResponseNotNumeric(raw.to_owned())),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ds = Dataset::new(x, y, self.schema.encoded_names(), self.model.mode)?;
        Ok((ds, dropped.len()))
    }

    fn predict_encoded(&self, x: &DMatrix<f64>) -> crate::Result<Vec<f64>> {
        let z = self.standardization.transform_matrix(x)?;
        self.model.predict(&z)
    }

    /// Scores raw CSV cases. A `case_id` column, if present, names each
    /// forecast; otherwise cases are numbered from 0. The response column
    /// may be present and is ignored.
    pub fn forecast_csv<R: Read>(&self, input: R) -> crate::Result<Vec<Forecast>> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let id_col = header.iter().position(|h| h == CASE_ID);
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            ids.push(id_col.map_or_else(|| i.to_string(), |c| rec.get(c).unwrap_or_default().to_owned()));
            rows.push(
                rec.iter()
                    .map(|c| (!c.is_empty()).then(|| c.to_owned()))
                    .collect::<Vec<_>>(),
            );
        }
        let x = self
            .schema
            .encode_rows(&header, &rows, &[CASE_ID, self.response.as_str()])?;
        let values = self.predict_encoded(&x)?;
        Ok(ids
            .into_iter()
            .zip(values)
            .map(|(case_id, value)| Forecast {
                case_id,
                value,
                class: (self.model.mode == ResponseMode::Classification)
                    .then(|| u8::from(value > self.model.threshold)),
            })
            .collect())
    }
}

/// `case_id,probability,class` (or `case_id,fitted` for numeric responses).
pub fn write_forecasts_csv<W: Write>(forecasts: &[Forecast], mode: ResponseMode, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    match mode {
        ResponseMode::Classification => w.write_record([CASE_ID, "probability", "class"])?,
        ResponseMode::Regression => w.write_record([CASE_ID, "fitted"])?,
    }
    for f in forecasts {
        let mut rec = vec![f.case_id.clone(), f.value.to_string()];
        if let Some(c) = f.class {
            rec.push(c.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Envelope<'a> {
    format: String,
    version: u32,
    checksum: String,
    #[serde(borrow)]
    payload: &'a RawValue,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes a forecaster into the checksummed envelope.
pub fn model_to_string(f: &FittedForecaster) -> String {
    let payload = serde_json::to_string(f).expect("forecaster serializes");
    let raw = RawValue::from_string(payload).expect("valid JSON");
    let env = Envelope {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        checksum: sha256_hex(raw.get().as_bytes()),
        payload: &raw,
    };
    serde_json::to_string(&env).expect("envelope serializes")
}

pub fn model_from_str(text: &str) -> Result<FittedForecaster, ModelIoError> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
    if env.format != MODEL_FORMAT || env.version != MODEL_VERSION {
        return Err(ModelIoError::Unsupported {
            format: env.format,
            version: env.version,
        });
    }
    let found = sha256_hex(env.payload.get().as_bytes());
    if found != env.checksum {
        return Err(ModelIoError::ChecksumMismatch {
            expected: env.checksum,
            found,
        });
    }
    let f: FittedForecaster =
        serde_json::from_str(env.payload.get()).map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
    if f.format_version != MODEL_VERSION {
        return Err(ModelIoError::Unsupported {
            format: env.format,
            version: f.format_version,
        });
    }
    f.model.check()?;
    if f.schema.encoded_names() != f.standardization.input_columns {
        return Err(ModelIoError::Inconsistent("schema and standardization columns differ".into()));
    }
    if f.standardization.retained.len() != f.model.n_features() {
        return Err(ModelIoError::Inconsistent("training matrix width differs from retained columns".into()));
    }
    Ok(f)
}

pub fn save_model(f: &FittedForecaster, path: &Path) -> Result<(), ModelIoError> {
    crate::report::write_atomic(path, model_to_string(f).as_bytes()).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<FittedForecaster, ModelIoError> {
    let text = fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_str(&text)
}
