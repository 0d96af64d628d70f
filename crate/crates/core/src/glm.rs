//! Case-weighted logistic regression by IRLS, plus least squares for
//! numeric responses. Costs enter as case weights or as a threshold;
//! confusion tables tally the outcome.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("{regressors} regressors with {cases} cases is ill-posed (need fewer regressors than cases)")]
    IllPosed { regressors: usize, cases: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("case weights must be finite and strictly positive")]
    InvalidWeights,
    #[error("invalid costs: {0}")]
    InvalidCosts(String),
    #[error("both classes must be present")]
    SingleClass,
    #[error("response values must be 0 or 1")]
    NotBinary,
    #[error("design matrix is numerically singular")]
    Singular,
}

/// Relative costs of a false positive and a false negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostRepr", into = "CostRepr")]
pub struct CostPair {
    cost_fp: f64,
    cost_fn: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostRepr {
    cost_fp: f64,
    cost_fn: f64,
}

impl TryFrom<CostRepr> for CostPair {
    type Error = GlmError;

    fn try_from(r: CostRepr) -> Result<Self, Self::Error> {
        CostPair::new(r.cost_fp, r.cost_fn)
    }
}

impl From<CostPair> for CostRepr {
    fn from(c: CostPair) -> Self {
        CostRepr {
            cost_fp: c.cost_fp,
            cost_fn: c.cost_fn,
        }
    }
}

impl CostPair {
    pub fn new(cost_fp: f64, cost_fn: f64) -> Result<Self, GlmError> {
        let ok = |c: f64| c.is_finite() && c > 0.0;
        if !ok(cost_fp) || !ok(cost_fn) || !(cost_fp / cost_fn).is_finite() {
            return Err(GlmError::InvalidCosts(format!(
                "costs must be finite and positive, got {cost_fp}:{cost_fn}"
            )));
        }
        Ok(CostPair { cost_fp, cost_fn })
    }

    pub fn cost_fp(&self) -> f64 {
        self.cost_fp
    }

    pub fn cost_fn(&self) -> f64 {
        self.cost_fn
    }

    /// FN/FP count ratio the costs ask for: cost_fp / cost_fn.
    pub fn target_ratio(&self) -> f64 {
        self.cost_fp / self.cost_fn
    }
}

impl Default for CostPair {
    fn default() -> Self {
        CostPair {
            cost_fp: 1.0,
            cost_fn: 1.0,
        }
    }
}

impl fmt::Display for CostPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.cost_fp, self.cost_fn)
    }
}

/// Parses `FP:FN`, e.g. `2:1`.
impl FromStr for CostPair {
    type Err = GlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GlmError::InvalidCosts(format!("expected FP:FN, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let fp = a.trim().parse::<f64>().map_err(|_| bad())?;
        let fnc = b.trim().parse::<f64>().map_err(|_| bad())?;
        CostPair::new(fp, fnc)
    }
}

fn check_binary(y: &[f64]) -> Result<usize, GlmError> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(GlmError::NotBinary);
    }
    Ok(y.iter().filter(|&&v| v == 1.0).count())
}

/// cost_fp for each actual negative, cost_fn for each actual positive,
/// rescaled to mean 1.
pub fn cost_weights(y: &[f64], costs: CostPair) -> Result<Vec<f64>, GlmError> {
    let pos = check_binary(y)?;
    if pos == 0 || pos == y.len() {
        return Err(GlmError::SingleClass);
    }
    let raw: Vec<f64> = y
        .iter()
        .map(|&v| if v == 1.0 { costs.cost_fn } else { costs.cost_fp })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// t = cost_fp / (cost_fp + cost_fn).
pub fn threshold_from_costs(costs: CostPair) -> f64 {
    costs.cost_fp / (costs.cost_fp + costs.cost_fn)
}

/// Positive iff probability exceeds the threshold.
pub fn classify(probabilities: &[f64], threshold: f64) -> Vec<u8> {
    probabilities.iter().map(|&p| u8::from(p > threshold)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub link: Link,
    pub iterations: usize,
    /// Euclidean norm of the (weighted) score vector at the solution.
    pub gradient_norm: f64,
    pub converged: bool,
    pub separated: bool,
    /// Weighted deviance for logit fits, residual sum of squares for identity.
    pub deviance: f64,
    pub weights: Vec<f64>,
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl GlmFit {
    pub fn n_regressors(&self) -> usize {
        self.coefficients.len()
    }

    pub fn linear_predictor(&self, scores: &[f64]) -> Result<f64, GlmError> {
        if scores.len() != self.coefficients.len() {
            return Err(GlmError::DimensionMismatch {
                expected: self.coefficients.len(),
                found: scores.len(),
            });
        }
        Ok(self.intercept
            + scores
                .iter()
                .zip(&self.coefficients)
                .map(|(x, b)| x * b)
                .sum::<f64>())
    }

    /// Probability for logit fits, fitted value for identity fits.
    pub fn predict(&self, scores: &[f64]) -> Result<f64, GlmError> {
        let eta = self.linear_predictor(scores)?;
        Ok(match self.link {
            Link::Logit => logistic(eta),
            Link::Identity => eta,
        })
    }

    /// One prediction per row of `scores`.
    pub fn predict_matrix(&self, scores: &DMatrix<f64>) -> Result<Vec<f64>, GlmError> {
        if scores.ncols() != self.coefficients.len() {
            return Err(GlmError::DimensionMismatch {
                expected: self.coefficients.len(),
                found: scores.ncols(),
            });
        }
        let beta = DVector::from_column_slice(&self.coefficients);
        let eta = scores * beta;
        Ok(eta
            .iter()
            .map(|&e| match self.link {
                Link::Logit => logistic(e + self.intercept),
                Link::Identity => e + self.intercept,
            })
            .collect())
    }

    /// (probability, class) with class 1 iff probability > threshold.
    pub fn predict_and_classify(&self, scores: &[f64], threshold: f64) -> Result<(f64, u8), GlmError> {
        let p = self.predict(scores)?;
        Ok((p, u8::from(p > threshold)))
    }
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

fn check_design(x: &DMatrix<f64>, y: &[f64]) -> Result<(), GlmError> {
    let (n, r) = x.shape();
    if y.len() != n {
        return Err(GlmError::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if r >= n {
        return Err(GlmError::IllPosed {
            regressors: r,
            cases: n,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite("design matrix"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite("response"));
    }
    Ok(())
}

/// Solves the symmetric system by Cholesky, falling back to a truncated SVD.
fn solve_normal(h: DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>, GlmError> {
    if let Some(ch) = h.clone().cholesky() {
        let d = ch.solve(g);
        if d.iter().all(|v| v.is_finite()) {
            return Ok(d);
        }
    }
    let svd = h.svd(true, true);
    let tol = svd.singular_values.max() * 1e-13;
    svd.solve(g, tol).map_err(|_| GlmError::Singular)
}

fn weighted_deviance(a: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = a * beta;
    2.0 * eta
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * if yi == 1.0 { softplus(-e) } else { softplus(e) })
        .sum::<f64>()
}

const MAX_ITER: usize = 100;
const REL_TOL: f64 = 1e-10;
const SEPARATION_COEF: f64 = 30.0;
const PINNED: f64 = 1e-10;
/// Per-case score tolerance; far below the reported 1e-8·N bound so the
/// score equations hold to round-off.
const GRAD_TOL: f64 = 1e-11;

/// Weighted logistic regression with intercept, by IRLS with step halving.
pub fn fit_weighted_logistic(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<GlmFit, GlmError> {
    check_design(x, y)?;
    check_binary(y)?;
    let n = x.nrows();
    if w.len() != n {
        return Err(GlmError::DimensionMismatch {
            expected: n,
            found: w.len(),
        });
    }
    if w.iter().any(|&v| !v.is_finite() || v <= 0.0) {
        return Err(GlmError::InvalidWeights);
    }
    let a = with_intercept(x);
    let k = a.ncols();

    let wsum: f64 = w.iter().sum();
    let ybar = (y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / wsum).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::zeros(k);
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut dev = weighted_deviance(&a, y, w, &beta);

    let score = |beta: &DVector<f64>| -> (DVector<f64>, Vec<f64>) {
        let p: Vec<f64> = (&a * beta).iter().map(|&e| logistic(e)).collect();
        let resid = DVector::from_iterator(n, (0..n).map(|i| w[i] * (y[i] - p[i])));
        (a.transpose() * resid, p)
    };

    let mut iterations = 0;
    let mut converged = false;
    let (mut grad, mut p) = score(&beta);
    while iterations < MAX_ITER {
        iterations += 1;
        // Aᵀ S A with S = diag(w p (1 − p)), floored against exact 0/1 fits.
        let mut sa = a.clone();
        for i in 0..n {
            let s = (w[i] * p[i] * (1.0 - p[i])).max(w[i] * 1e-12);
            sa.row_mut(i).scale_mut(s);
        }
        let h = a.transpose() * sa;
        let step = solve_normal(h, &grad)?;

        // Near the optimum the deviance cannot resolve the remaining
        // improvement, so a change at round-off level is accepted.
        let slack = 1e-13 * (dev.abs() + 1.0);
        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut new_dev = weighted_deviance(&a, y, w, &candidate);
        let mut halvings = 0;
        while !(new_dev <= dev + slack) && halvings < 30 {
            t *= 0.5;
            candidate = &beta + &step * t;
            new_dev = weighted_deviance(&a, y, w, &candidate);
            halvings += 1;
        }
        if !(new_dev <= dev + slack) {
            // no descent available along the Newton direction
            let (g, _) = score(&beta);
            converged = g.norm() <= 1e-8 * n as f64;
            break;
        }
        let rel = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        beta = candidate;
        dev = new_dev;
        (grad, p) = score(&beta);
        if rel < REL_TOL && grad.norm() <= GRAD_TOL * n as f64 {
            converged = true;
            break;
        }
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite("coefficients"));
    }

    let separated = (1..k).any(|j| {
        let col = a.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        (beta[j] * sd).abs() > SEPARATION_COEF
    }) || p.iter().any(|&pi| pi < PINNED || pi > 1.0 - PINNED);

    Ok(GlmFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        link: Link::Logit,
        iterations,
        gradient_norm: grad.norm(),
        converged,
        separated,
        deviance: dev,
        weights: w.to_vec(),
    })
}

/// Ordinary least squares with intercept.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64]) -> Result<GlmFit, GlmError> {
    check_design(x, y)?;
    let n = x.nrows();
    let a = with_intercept(x);
    let yv = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    let beta = svd.solve(&yv, tol).map_err(|_| GlmError::Singular)?;
    let resid = &yv - &a * &beta;
    Ok(GlmFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        link: Link::Identity,
        iterations: 1,
        gradient_norm: (a.transpose() * &resid).norm(),
        converged: true,
        separated: false,
        deviance: resid.norm_squared(),
        weights: vec![1.0; n],
    })
}

/// 2×2 confusion table with row-wise model errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_positives: usize,
    pub costs: CostPair,
    /// FP / (TN + FP); undefined without actual negatives.
    pub negative_error: Option<f64>,
    /// FN / (FN + TP); undefined without actual positives.
    pub positive_error: Option<f64>,
    /// FN / (TN + FN), the error among forecast negatives.
    pub forecast_negative_error: Option<f64>,
    /// FP / (FP + TP), the error among forecast positives.
    pub forecast_positive_error: Option<f64>,
    /// FN / FP; undefined when FP = 0.
    pub fn_fp_ratio: Option<f64>,
    pub cost_weighted_error: f64,
    pub overall_error: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionReport {
    pub fn from_counts(tn: usize, fp: usize, fn_: usize, tp: usize, costs: CostPair) -> Self {
        let total = tn + fp + fn_ + tp;
        ConfusionReport {
            true_negatives: tn,
            false_positives: fp,
            false_negatives: fn_,
            true_positives: tp,
            costs,
            negative_error: ratio(fp, tn + fp),
            positive_error: ratio(fn_, fn_ + tp),
            forecast_negative_error: ratio(fn_, tn + fn_),
            forecast_positive_error: ratio(fp, fp + tp),
            fn_fp_ratio: ratio(fn_, fp),
            cost_weighted_error: costs.cost_fp * fp as f64 + costs.cost_fn * fn_ as f64,
            overall_error: ratio(fp + fn_, total).unwrap_or(0.0),
        }
    }

    pub fn total(&self) -> usize {
        self.true_negatives + self.false_positives + self.false_negatives + self.true_positives
    }

    /// Aligned text table: actual classes as rows, forecasts as columns.
    pub fn render_table(&self, title: &str) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.2}"));
        let mut s = String::new();
        s.push_str(title);
        s.push('\n');
        s.push_str(&format!(
            "{:<18}{:>12}{:>12}{:>14}\n",
            "", "Forecast 0", "Forecast 1", "Model Error"
        ));
        s.push_str(&format!(
            "{:<18}{:>12}{:>12}{:>14}\n",
            "Actual 0",
            self.true_negatives,
            self.false_positives,
            f(self.negative_error)
        ));
        s.push_str(&format!(
            "{:<18}{:>12}{:>12}{:>14}\n",
            "Actual 1",
            self.false_negatives,
            self.true_positives,
            f(self.positive_error)
        ));
        s.push_str(&format!(
            "{:<18}{:>12}{:>12}\n",
            "Forecasting Error",
            f(self.forecast_negative_error),
            f(self.forecast_positive_error)
        ));
        s.push_str(&format!(
            "FN/FP ratio {}   cost-weighted error {} (costs {})   N = {}\n",
            f(self.fn_fp_ratio),
            self.cost_weighted_error,
            self.costs,
            self.total()
        ));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn confusion_report(predicted: &[u8], actual: &[f64], costs: CostPair) -> Result<ConfusionReport, GlmError> {
    if predicted.len() != actual.len() {
        return Err(GlmError::DimensionMismatch {
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    check_binary(actual)?;
    let mut c = [[0usize; 2]; 2];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p > 1 {
            return Err(GlmError::NotBinary);
        }
        c[a as usize][p as usize] += 1;
    }
    Ok(ConfusionReport::from_counts(c[0][0], c[0][1], c[1][0], c[1][1], costs))
}
