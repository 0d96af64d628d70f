//! Split-sample grid search over kernels and variance fractions.
//!
//! Every candidate is fitted on the training split and scored on the
//! validation split. Selection then keeps the candidates whose FN/FP ratio
//! is near the cost target, keeps those near the lowest cost-weighted error,
//! and takes the one with the fewest components.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, ResponseMode};
use crate::forecaster::{KpcrModel, WEIGHTED_THRESHOLD};
use crate::glm::{classify, confusion_report, cost_weights, fit_weighted_logistic, ConfusionReport, CostPair, GlmFit};
use crate::kernel::{build_kernel_matrix, center_kernel_matrix, center_new_rows, cross_kernel, CenteringStats, KernelSpec};
use crate::kpca::{eigendecompose, project_new_rows, project_training, select_rank, KpcBasis};
use crate::report::{histogram, iqr, HistogramBin};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(
        "no candidate reaches FN/FP within {:.0}% of the target {target}; nearest: {}",
        tolerance * 100.0,
        nearest.join(", ")
    )]
    NoAdmissibleCandidate {
        target: f64,
        tolerance: f64,
        nearest: Vec<String>,
    },
    #[error("no candidates to select from")]
    EmptyResults,
    #[error("invalid search grid: {0}")]
    InvalidGrid(String),
    #[error("candidate {0} carries no fitted state (was it deserialized?)")]
    Detached(usize),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub const DEFAULT_RATIO_TOLERANCE: f64 = 0.25;
/// Cost-weighted errors within this fraction of the minimum count as equal.
pub const COST_SLACK: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub kernels: Vec<KernelSpec>,
    pub rhos: Vec<f64>,
    pub costs: CostPair,
    pub seed: u64,
    pub ratio_tolerance: f64,
}

impl SearchGrid {
    /// ANOVA kernels with γ ∈ {0.1, 3} and d ∈ {2, 3}.
    pub fn default_kernels() -> Vec<KernelSpec> {
        [(0.1, 2), (3.0, 2), (0.1, 3), (3.0, 3)]
            .into_iter()
            .map(|(g, d)| KernelSpec::anova(g, d).expect("valid default kernel"))
            .collect()
    }

    /// 0.30, 0.35, …, 0.95.
    pub fn default_rhos() -> Vec<f64> {
        (0..14).map(|k| (30 + 5 * k) as f64 / 100.0).collect()
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: String| Err(SelectionError::InvalidGrid(m));
        if self.kernels.is_empty() {
            return bad("at least one kernel is required".into());
        }
        if self.rhos.is_empty() {
            return bad("at least one ρ value is required".into());
        }
        if let Some(r) = self.rhos.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return bad(format!("ρ = {r} is outside (0, 1]"));
        }
        if self.rhos.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ρ values must be strictly increasing".into());
        }
        if !(self.ratio_tolerance.is_finite() && self.ratio_tolerance > 0.0) {
            return bad(format!("ratio tolerance {} must be positive", self.ratio_tolerance));
        }
        Ok(())
    }

    pub fn n_candidates(&self) -> usize {
        self.kernels.len() * self.rhos.len()
    }
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            kernels: Self::default_kernels(),
            rhos: Self::default_rhos(),
            costs: CostPair::new(2.0, 1.0).expect("valid"),
            seed: 0,
            ratio_tolerance: DEFAULT_RATIO_TOLERANCE,
        }
    }
}

/// Per-kernel training state shared by all of that kernel's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelState {
    pub spec: KernelSpec,
    pub train_x: Arc<DMatrix<f64>>,
    pub centering: CenteringStats,
    pub basis: KpcBasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub kernel: KernelSpec,
    pub rho: f64,
    pub rank: Option<usize>,
    pub threshold: f64,
    /// Computed on the validation split only.
    pub report: Option<ConfusionReport>,
    pub fn_fp_ratio: Option<f64>,
    pub cost_weighted_error: Option<f64>,
    pub train_deviance: Option<f64>,
    pub converged: bool,
    pub separated: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub fit: Option<GlmFit>,
    #[serde(skip)]
    pub state: Option<Arc<KernelState>>,
}

impl CandidateResult {
    fn failed(kernel: KernelSpec, rho: f64, rank: Option<usize>, error: String) -> Self {
        CandidateResult {
            kernel,
            rho,
            rank,
            threshold: WEIGHTED_THRESHOLD,
            report: None,
            fn_fp_ratio: None,
            cost_weighted_error: None,
            train_deviance: None,
            converged: false,
            separated: false,
            error: Some(error),
            fit: None,
            state: None,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }

    /// The serializable part, without fitted state.
    pub fn summary(&self) -> CandidateResult {
        CandidateResult {
            fit: None,
            state: None,
            ..self.clone()
        }
    }

    /// Rebuilds the complete model from the retained state.
    pub fn to_model(&self, index: usize) -> Result<KpcrModel, SelectionError> {
        let (Some(state), Some(fit), Some(r), Some(report)) = (&self.state, &self.fit, self.rank, &self.report) else {
            return Err(SelectionError::Detached(index));
        };
        Ok(KpcrModel {
            kernel: self.kernel,
            mode: ResponseMode::Classification,
            rho: self.rho,
            train_x: (*state.train_x).clone(),
            centering: state.centering.clone(),
            basis: state.basis.truncate(r).map_err(|_| SelectionError::Detached(index))?,
            glm: fit.clone(),
            threshold: self.threshold,
            costs: report.costs,
        })
    }
}

fn check_inputs(train: &Dataset, validation: &Dataset) -> crate::Result<()> {
    if train.feature_names() != validation.feature_names() {
        return Err(DataError::ColumnMismatch {
            expected: train.feature_names().to_vec(),
            found: validation.feature_names().to_vec(),
        }
        .into());
    }
    for ds in [train, validation] {
        if ds.mode() != ResponseMode::Classification {
            return Err(SelectionError::InvalidGrid("grid search needs a binary response".into()).into());
        }
        ds.require_both_classes()?;
    }
    Ok(())
}

/// Fits and validates every (kernel, ρ) candidate, in grid order.
pub fn run_grid(train: &Dataset, validation: &Dataset, grid: &SearchGrid) -> crate::Result<Vec<CandidateResult>> {
    grid.validate()?;
    check_inputs(train, validation)?;
    let weights = cost_weights(train.y(), grid.costs)?;
    let train_x = Arc::new(train.x().clone());

    let per_kernel: Vec<Vec<CandidateResult>> = grid
        .kernels
        .par_iter()
        .map(|&spec| match kernel_candidates(spec, &train_x, train.y(), &weights, validation, grid) {
            Ok(v) => v,
            Err(e) => grid
                .rhos
                .iter()
                .map(|&rho| CandidateResult::failed(spec, rho, None, e.to_string()))
                .collect(),
        })
        .collect();
    Ok(per_kernel.into_iter().flatten().collect())
}

fn kernel_candidates(
    spec: KernelSpec,
    train_x: &Arc<DMatrix<f64>>,
    y: &[f64],
    weights: &[f64],
    validation: &Dataset,
    grid: &SearchGrid,
) -> crate::Result<Vec<CandidateResult>> {
    let ck = center_kernel_matrix(&build_kernel_matrix(train_x, &spec)?)?;
    let basis = eigendecompose(&ck)?;
    let ranks = grid
        .rhos
        .iter()
        .map(|&rho| select_rank(&basis, rho))
        .collect::<Result<Vec<_>, _>>()?;
    let r_max = ranks.iter().copied().max().unwrap_or(1);
    let train_scores = project_training(&ck, &basis, r_max)?.into_scores();
    let val_rows = center_new_rows(&cross_kernel(validation.x(), train_x, &spec)?, ck.stats())?;
    let val_scores = project_new_rows(&val_rows, &basis, r_max)?;
    let state = Arc::new(KernelState {
        spec,
        train_x: Arc::clone(train_x),
        centering: ck.stats().clone(),
        basis,
    });

    let mut by_rank: HashMap<usize, CandidateResult> = HashMap::new();
    let mut out = Vec::with_capacity(grid.rhos.len());
    for (&rho, &r) in grid.rhos.iter().zip(&ranks) {
        let base = by_rank.entry(r).or_insert_with(|| {
            let xs = train_scores.columns(0, r).into_owned();
            let fit = match fit_weighted_logistic(&xs, y, weights) {
                Ok(f) => f,
                Err(e) => return CandidateResult::failed(spec, rho, Some(r), e.to_string()),
            };
            let vs = val_scores.columns(0, r).into_owned();
            let scored = fit
                .predict_matrix(&vs)
                .map_err(crate::Error::from)
                .and_then(|p| Ok(confusion_report(&classify(&p, WEIGHTED_THRESHOLD), validation.y(), grid.costs)?));
            match scored {
                Ok(report) => CandidateResult {
                    kernel: spec,
                    rho,
                    rank: Some(r),
                    threshold: WEIGHTED_THRESHOLD,
                    fn_fp_ratio: report.fn_fp_ratio,
                    cost_weighted_error: Some(report.cost_weighted_error),
                    report: Some(report),
                    train_deviance: Some(fit.deviance),
                    converged: fit.converged,
                    separated: fit.separated,
                    error: None,
                    fit: Some(fit),
                    state: Some(Arc::clone(&state)),
                },
                Err(e) => CandidateResult::failed(spec, rho, Some(r), e.to_string()),
            }
        });
        out.push(CandidateResult { rho, ..base.clone() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Selected,
    Passed,
    FailedRatio,
    FailedCost,
    Errored,
}

impl AuditStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditStatus::Selected => "selected",
            AuditStatus::Passed => "passed",
            AuditStatus::FailedRatio => "failed_ratio",
            AuditStatus::FailedCost => "failed_cost",
            AuditStatus::Errored => "errored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub index: usize,
    pub kernel: KernelSpec,
    pub rho: f64,
    pub rank: Option<usize>,
    pub fn_fp_ratio: Option<f64>,
    pub cost_weighted_error: Option<f64>,
    pub status: AuditStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedModel {
    pub index: usize,
    pub winner: CandidateResult,
    pub target_ratio: f64,
    pub ratio_tolerance: f64,
    /// Lowest cost-weighted validation error among ratio survivors.
    pub min_cost_error: f64,
    pub audit: Vec<AuditEntry>,
}

impl SelectedModel {
    pub fn build_model(&self) -> Result<KpcrModel, SelectionError> {
        self.winner.to_model(self.index)
    }

    pub fn write_audit_csv<W: Write>(&self, out: W) -> Result<(), SelectionError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "kernel", "rho", "rank", "fn_fp_ratio", "cost_weighted_error", "status"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for a in &self.audit {
            w.write_record([
                a.index.to_string(),
                a.kernel.to_string(),
                a.rho.to_string(),
                a.rank.map(|r| r.to_string()).unwrap_or_default(),
                opt(a.fn_fp_ratio),
                opt(a.cost_weighted_error),
                a.status.as_str().to_owned(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn passes_ratio(c: &CandidateResult, target: f64, tolerance: f64) -> bool {
    match (c.is_failed(), c.fn_fp_ratio) {
        (false, Some(r)) => (r - target).abs() / target <= tolerance + 1e-12,
        _ => false,
    }
}

/// Two-cut selection; see the module documentation.
pub fn select_best(results: &[CandidateResult], target_ratio: f64, ratio_tolerance: f64) -> Result<SelectedModel, SelectionError> {
    if results.is_empty() {
        return Err(SelectionError::EmptyResults);
    }
    let cut1: Vec<usize> = (0..results.len())
        .filter(|&i| passes_ratio(&results[i], target_ratio, ratio_tolerance))
        .collect();
    if cut1.is_empty() {
        let mut near: Vec<&CandidateResult> = results.iter().filter(|c| !c.is_failed()).collect();
        let dist = |c: &CandidateResult| c.fn_fp_ratio.map_or(f64::INFINITY, |r| (r - target_ratio).abs());
        near.sort_by(|a, b| dist(a).total_cmp(&dist(b)));
        let nearest = near
            .iter()
            .take(5)
            .map(|c| {
                let ratio = c.fn_fp_ratio.map_or_else(|| "undefined (FP = 0)".to_owned(), |r| format!("{r:.3}"));
                format!("{} ρ={} → {ratio}", c.kernel, c.rho)
            })
            .collect();
        return Err(SelectionError::NoAdmissibleCandidate {
            target: target_ratio,
            tolerance: ratio_tolerance,
            nearest,
        });
    }
    let cost = |i: usize| results[i].cost_weighted_error.unwrap_or(f64::INFINITY);
    let min_cost = cut1.iter().map(|&i| cost(i)).fold(f64::INFINITY, f64::min);
    let limit = min_cost * (1.0 + COST_SLACK) + 1e-9;
    let cut2: Vec<usize> = cut1.iter().copied().filter(|&i| cost(i) <= limit).collect();
    let key = |i: usize| {
        let c = &results[i];
        (c.rank.unwrap_or(usize::MAX), c.kernel.gamma(), c.kernel.degree(), i)
    };
    let winner = *cut2
        .iter()
        .min_by(|&&a, &&b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.cmp(&kb.2))
                .then(ka.3.cmp(&kb.3))
        })
        .expect("cut 2 keeps the minimum");

    let audit = results
        .iter()
        .enumerate()
        .map(|(i, c)| AuditEntry {
            index: i,
            kernel: c.kernel,
            rho: c.rho,
            rank: c.rank,
            fn_fp_ratio: c.fn_fp_ratio,
            cost_weighted_error: c.cost_weighted_error,
            status: if c.is_failed() {
                AuditStatus::Errored
            } else if i == winner {
                AuditStatus::Selected
            } else if !cut1.contains(&i) {
                AuditStatus::FailedRatio
            } else if !cut2.contains(&i) {
                AuditStatus::FailedCost
            } else {
                AuditStatus::Passed
            },
        })
        .collect();
    Ok(SelectedModel {
        index: winner,
        winner: results[winner].clone(),
        target_ratio,
        ratio_tolerance,
        min_cost_error: min_cost,
        audit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub rho: f64,
    pub rank: Option<usize>,
    /// None marks a gap: the candidate failed or FP = 0.
    pub fn_fp_ratio: Option<f64>,
    pub cost_weighted_error: Option<f64>,
    pub failed: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSeries {
    pub kernel: KernelSpec,
    pub points: Vec<SeriesPoint>,
}

/// Ratio and cost curves against ρ, one series per kernel in grid order.
pub fn diagnostics_series(results: &[CandidateResult], selected: Option<&SelectedModel>) -> Vec<KernelSeries> {
    let mut series: Vec<KernelSeries> = Vec::new();
    for (i, c) in results.iter().enumerate() {
        let point = SeriesPoint {
            rho: c.rho,
            rank: c.rank,
            fn_fp_ratio: c.fn_fp_ratio,
            cost_weighted_error: c.cost_weighted_error,
            failed: c.is_failed(),
            selected: selected.is_some_and(|s| s.index == i),
        };
        match series.iter_mut().find(|s| s.kernel == c.kernel) {
            Some(s) => s.points.push(point),
            None => series.push(KernelSeries {
                kernel: c.kernel,
                points: vec![point],
            }),
        }
    }
    series
}

/// `kernel,rho,rank,fn_fp_ratio,cost_weighted_error,failed,selected`.
pub fn write_diagnostics_csv<W: Write>(series: &[KernelSeries], out: W) -> Result<(), SelectionError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kernel", "rho", "rank", "fn_fp_ratio", "cost_weighted_error", "failed", "selected"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in series {
        for p in &s.points {
            w.write_record([
                s.kernel.to_string(),
                p.rho.to_string(),
                p.rank.map(|r| r.to_string()).unwrap_or_default(),
                opt(p.fn_fp_ratio),
                opt(p.cost_weighted_error),
                p.failed.to_string(),
                p.selected.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum SampleLabel {
    OutOfSample,
    /// Scored on the model's own training cases.
    InSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub label: SampleLabel,
    pub report: ConfusionReport,
    pub probabilities: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
    pub iqr: f64,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Scores standardized test cases through the full prediction path.
pub fn evaluate_on_test(model: &KpcrModel, test: &Dataset) -> crate::Result<TestEvaluation> {
    if test.n_features() != model.n_features() {
        return Err(DataError::Shape(format!(
            "test data has {} predictors, model expects {}",
            test.n_features(),
            model.n_features()
        ))
        .into());
    }
    let label = if test.x() == &model.train_x {
        SampleLabel::InSample
    } else {
        SampleLabel::OutOfSample
    };
    let probabilities = model.predict(test.x())?;
    let report = confusion_report(&classify(&probabilities, model.threshold), test.y(), model.costs)?;
    Ok(TestEvaluation {
        label,
        report,
        histogram: histogram(&probabilities, HISTOGRAM_BINS, 0.0, 1.0),
        iqr: iqr(&probabilities),
        probabilities,
    })
}
