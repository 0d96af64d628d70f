//! Radial and ANOVA kernel matrices with double centering.
//!
//! Centering makes the implicit expanded features mean-zero without ever
//! forming them. New cases are centered with the training statistics so a
//! training case pushed through [`new_point_kernel_row`] reproduces its row
//! of the centered training matrix.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid kernel: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected} predictors, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("a kernel matrix needs at least 2 cases, got {0}")]
    TooFewCases(usize),
    #[error("kernel matrix is not symmetric (max |K - Kᵀ| = {0:e})")]
    Asymmetric(f64),
    #[error("centering statistics describe {expected} training cases, found {found}")]
    StatsMismatch { expected: usize, found: usize },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// exp(−γ‖x − x′‖²)
    Radial,
    /// (Σⱼ exp(−γ(xⱼ − x′ⱼ)²))ᵈ
    Anova,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecRepr", into = "KernelSpecRepr")]
pub struct KernelSpec {
    family: KernelFamily,
    gamma: f64,
    degree: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSpecRepr {
    family: KernelFamily,
    gamma: f64,
    #[serde(default = "one")]
    degree: u32,
}

fn one() -> u32 {
    1
}

impl TryFrom<KernelSpecRepr> for KernelSpec {
    type Error = KernelError;

    fn try_from(r: KernelSpecRepr) -> Result<Self, Self::Error> {
        match r.family {
            KernelFamily::Radial => KernelSpec::radial(r.gamma),
            KernelFamily::Anova => KernelSpec::anova(r.gamma, r.degree),
        }
    }
}

impl From<KernelSpec> for KernelSpecRepr {
    fn from(k: KernelSpec) -> Self {
        KernelSpecRepr {
            family: k.family,
            gamma: k.gamma,
            degree: k.degree,
        }
    }
}

fn check_gamma(gamma: f64) -> Result<(), KernelError> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidSpec(format!(
            "gamma must be a positive finite number, got {gamma}"
        )))
    }
}

impl KernelSpec {
    pub fn radial(gamma: f64) -> Result<Self, KernelError> {
        check_gamma(gamma)?;
        Ok(Self {
            family: KernelFamily::Radial,
            gamma,
            degree: 1,
        })
    }

    pub fn anova(gamma: f64, degree: u32) -> Result<Self, KernelError> {
        check_gamma(gamma)?;
        if degree == 0 {
            return Err(KernelError::InvalidSpec("degree must be at least 1".into()));
        }
        Ok(Self {
            family: KernelFamily::Anova,
            gamma,
            degree,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// ANOVA degree; always 1 for radial kernels.
    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Kernel value without shape or finiteness checks.
    #[inline]
    pub(crate) fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Radial => {
                let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * sq).exp()
            }
            KernelFamily::Anova => {
                let terms = x.iter().zip(z).map(|(a, b)| (-self.gamma * (a - b) * (a - b)).exp());
                let sum = if x.len() > 10_000 {
                    neumaier_sum(terms)
                } else {
                    terms.sum()
                };
                sum.powi(self.degree as i32)
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::Radial => write!(f, "radial:{}", self.gamma),
            KernelFamily::Anova => write!(f, "anova:{}:{}", self.gamma, self.degree),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = KernelError;

    /// Parses `radial:<gamma>` or `anova:<gamma>:<degree>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || KernelError::InvalidSpec(format!("cannot parse kernel `{s}`"));
        let gamma = |t: &str| t.parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            ["radial", g] => KernelSpec::radial(gamma(g)?),
            ["anova", g, d] => KernelSpec::anova(gamma(g)?, d.parse().map_err(|_| bad())?),
            _ => Err(bad()),
        }
    }
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// k(x, x′) for two cases of equal length.
pub fn kernel_value(x: &[f64], z: &[f64], spec: &KernelSpec) -> Result<f64, KernelError> {
    if x.len() != z.len() {
        return Err(KernelError::DimensionMismatch {
            expected: x.len(),
            found: z.len(),
        });
    }
    if x.is_empty() {
        return Err(KernelError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    if !x.iter().chain(z).all(|v| v.is_finite()) {
        return Err(KernelError::NonFinite("kernel arguments"));
    }
    Ok(spec.eval(x, z))
}

/// Cases as contiguous slices: column i of the result is row i of `x`.
fn cases_by_column(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.transpose()
}

fn check_finite(x: &DMatrix<f64>, what: &'static str) -> Result<(), KernelError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KernelError::NonFinite(what))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    spec: KernelSpec,
    n_features: usize,
}

impl KernelMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Width of the predictor matrix the kernel was built from.
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_cases(&self) -> usize {
        self.values.nrows()
    }
}

/// N×N matrix of pairwise kernel values. Only the upper triangle is
/// evaluated; the lower is mirrored, so the result is exactly symmetric.
pub fn build_kernel_matrix(x: &DMatrix<f64>, spec: &KernelSpec) -> Result<KernelMatrix, KernelError> {
    let n = x.nrows();
    if n < 2 {
        return Err(KernelError::TooFewCases(n));
    }
    if x.ncols() == 0 {
        return Err(KernelError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    check_finite(x, "predictor matrix")?;
    let cases = cases_by_column(x);
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = cases.column(i);
            let xi = xi.as_slice();
            (i..n)
                .map(|j| spec.eval(xi, cases.column(j).as_slice()))
                .collect()
        })
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            values[(i, i + off)] = v;
            values[(i + off, i)] = v;
        }
    }
    Ok(KernelMatrix {
        values,
        spec: *spec,
        n_features: x.ncols(),
    })
}

/// Raw kernel rows between new cases (rows of `x_new`) and training cases.
pub fn cross_kernel(
    x_new: &DMatrix<f64>,
    x_train: &DMatrix<f64>,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>, KernelError> {
    if x_new.ncols() != x_train.ncols() {
        return Err(KernelError::DimensionMismatch {
            expected: x_train.ncols(),
            found: x_new.ncols(),
        });
    }
    check_finite(x_new, "new cases")?;
    let train = cases_by_column(x_train);
    let new = cases_by_column(x_new);
    let rows: Vec<Vec<f64>> = (0..x_new.nrows())
        .into_par_iter()
        .map(|i| {
            let xi = new.column(i);
            (0..train.ncols())
                .map(|j| spec.eval(xi.as_slice(), train.column(j).as_slice()))
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(x_new.nrows(), x_train.nrows(), |i, j| rows[i][j]))
}

/// Training-kernel statistics needed to center new-case kernel rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringStats {
    pub column_means: Vec<f64>,
    pub grand_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenteredKernel {
    values: DMatrix<f64>,
    stats: CenteringStats,
}

impl CenteredKernel {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn stats(&self) -> &CenteringStats {
        &self.stats
    }

    pub fn n_cases(&self) -> usize {
        self.values.nrows()
    }
}

/// Double centering K̃ = K − (1/N)JK − (1/N)KJ + (1/N²)JKJ.
pub fn center_kernel_matrix(k: &KernelMatrix) -> Result<CenteredKernel, KernelError> {
    double_center(&k.values)
}

/// [`center_kernel_matrix`] for any square symmetric matrix.
pub fn double_center(k: &DMatrix<f64>) -> Result<CenteredKernel, KernelError> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(KernelError::DimensionMismatch {
            expected: n,
            found: k.ncols(),
        });
    }
    if n < 2 {
        return Err(KernelError::TooFewCases(n));
    }
    check_finite(k, "kernel matrix")?;
    let scale = k.amax().max(1.0);
    let mut asym = 0.0_f64;
    for j in 0..n {
        for i in 0..j {
            asym = asym.max((k[(i, j)] - k[(j, i)]).abs());
        }
    }
    if asym > 1e-12 * scale {
        return Err(KernelError::Asymmetric(asym));
    }

    let nf = n as f64;
    // (1/N)JK has entry c_j, (1/N)KJ has entry c_i by symmetry, (1/N²)JKJ is g.
    let column_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand_mean = column_means.iter().sum::<f64>() / nf;
    let values = DMatrix::from_fn(n, n, |i, j| {
        k[(i, j)] - column_means[j] - column_means[i] + grand_mean
    });
    Ok(CenteredKernel {
        values,
        stats: CenteringStats {
            column_means,
            grand_mean,
        },
    })
}

/// Centered kernel row k̃* = k* − mean(k*)·1ᵀ − c + g for one new case,
/// where c and g are the training column means and grand mean.
pub fn new_point_kernel_row(
    x_star: &[f64],
    x_train: &DMatrix<f64>,
    spec: &KernelSpec,
    stats: &CenteringStats,
) -> Result<Vec<f64>, KernelError> {
    if x_star.len() != x_train.ncols() {
        return Err(KernelError::DimensionMismatch {
            expected: x_train.ncols(),
            found: x_star.len(),
        });
    }
    if !x_star.iter().all(|v| v.is_finite()) {
        return Err(KernelError::NonFinite("new case"));
    }
    let train = cases_by_column(x_train);
    let raw: Vec<f64> = (0..train.ncols())
        .map(|j| spec.eval(x_star, train.column(j).as_slice()))
        .collect();
    let n = stats.column_means.len();
    if raw.len() != n {
        return Err(KernelError::StatsMismatch {
            expected: n,
            found: raw.len(),
        });
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    Ok(raw
        .iter()
        .zip(&stats.column_means)
        .map(|(k, c)| k - mean - c + stats.grand_mean)
        .collect())
}

/// Centers each raw new-case kernel row with training statistics.
pub fn center_new_rows(raw: &DMatrix<f64>, stats: &CenteringStats) -> Result<DMatrix<f64>, KernelError> {
    let n = stats.column_means.len();
    if raw.ncols() != n {
        return Err(KernelError::StatsMismatch {
            expected: n,
            found: raw.ncols(),
        });
    }
    let mut out = raw.clone();
    for i in 0..raw.nrows() {
        let row_mean = raw.row(i).sum() / n as f64;
        for j in 0..n {
            out[(i, j)] = raw[(i, j)] - row_mean - stats.column_means[j] + stats.grand_mean;
        }
    }
    Ok(out)
}

/// Full-precision CSV dump of a square matrix (no header).
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: W) -> Result<(), KernelError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
