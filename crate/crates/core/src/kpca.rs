//! Kernel principal components: eigendecomposition of the centered kernel,
//! rank selection by variance fraction, and projection of cases.
//!
//! Component k of the regressor matrix is K̃·u_k/√λ_k, which equals √λ_k·u_k
//! for training cases, so its squared norm is λ_k. New cases use the same
//! formula with their centered kernel row in place of the row of K̃.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::CenteredKernel;

#[derive(Debug, Error)]
pub enum KpcaError {
    #[error("centered kernel is not positive semidefinite: eigenvalue {min:e} against λ₁ = {lambda1:e}")]
    NotPsd { min: f64, lambda1: f64 },
    #[error("all eigenvalues are zero; the centered kernel carries no variance")]
    AllZero,
    #[error("variance fraction must lie in (0, 1], got {0}")]
    InvalidRho(f64),
    #[error("rank {requested} requested but only {available} components have positive eigenvalues")]
    RankTooLarge { requested: usize, available: usize },
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("dimension mismatch: expected length {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix must be square, got {0}×{1}")]
    NotSquare(usize, usize),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Eigenpairs of a centered kernel in descending eigenvalue order.
///
/// A basis may be truncated to its leading components; `total_variance` still
/// refers to the full spectrum so shares stay comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct KpcBasis {
    eigenvalues: Vec<f64>,
    /// N×m, column k is u_k.
    eigenvectors: DMatrix<f64>,
    total_variance: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisRepr {
    eigenvalues: Vec<f64>,
    total_variance: f64,
    /// One inner vector per component.
    eigenvectors: Vec<Vec<f64>>,
}

impl From<KpcBasis> for BasisRepr {
    fn from(b: KpcBasis) -> Self {
        BasisRepr {
            eigenvectors: b
                .eigenvectors
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            eigenvalues: b.eigenvalues,
            total_variance: b.total_variance,
        }
    }
}

impl TryFrom<BasisRepr> for KpcBasis {
    type Error = KpcaError;

    fn try_from(r: BasisRepr) -> Result<Self, Self::Error> {
        if r.eigenvectors.len() != r.eigenvalues.len() {
            return Err(KpcaError::DimensionMismatch {
                expected: r.eigenvalues.len(),
                found: r.eigenvectors.len(),
            });
        }
        let n = r.eigenvectors.first().map_or(0, Vec::len);
        if let Some(bad) = r.eigenvectors.iter().find(|c| c.len() != n) {
            return Err(KpcaError::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        let eigenvectors = DMatrix::from_fn(n, r.eigenvalues.len(), |i, k| r.eigenvectors[k][i]);
        Ok(KpcBasis {
            eigenvalues: r.eigenvalues,
            eigenvectors,
            total_variance: r.total_variance,
        })
    }
}

impl KpcBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Number of training cases (rows of U).
    pub fn n_cases(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Number of components held.
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn positive_count(&self) -> usize {
        self.eigenvalues.iter().take_while(|&&l| l > 0.0).count()
    }

    /// λ′_k = λ_k / Σλ.
    pub fn shares(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues
            .iter()
            .map(|l| l / self.total_variance)
            .collect()
    }

    /// Prefix sums over the total, so the last positive component reaches exactly 1.
    pub fn cumulative_shares(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|l| {
                acc += l;
                acc / self.total_variance
            })
            .collect()
    }

    /// Leading `r` components.
    pub fn truncate(&self, r: usize) -> Result<KpcBasis, KpcaError> {
        check_rank(self, r)?;
        Ok(KpcBasis {
            eigenvalues: self.eigenvalues[..r].to_vec(),
            eigenvectors: self.eigenvectors.columns(0, r).into_owned(),
            total_variance: self.total_variance,
        })
    }

    /// U_r·Λ_r^{−1/2}, the map from centered kernel rows to scores.
    fn projector(&self, r: usize) -> DMatrix<f64> {
        let mut p = self.eigenvectors.columns(0, r).into_owned();
        for (k, mut col) in p.column_iter_mut().enumerate() {
            col /= self.eigenvalues[k].sqrt();
        }
        p
    }
}

fn check_rank(basis: &KpcBasis, r: usize) -> Result<(), KpcaError> {
    if r == 0 {
        return Err(KpcaError::ZeroRank);
    }
    let available = basis.positive_count();
    if r > available {
        return Err(KpcaError::RankTooLarge {
            requested: r,
            available,
        });
    }
    Ok(())
}

/// Full symmetric eigendecomposition of K̃.
pub fn eigendecompose(ck: &CenteredKernel) -> Result<KpcBasis, KpcaError> {
    eigendecompose_matrix(ck.values())
}

/// Eigendecomposition of any symmetric PSD matrix, with the same sorting,
/// clamping, and sign conventions as [`eigendecompose`].
pub fn eigendecompose_matrix(m: &DMatrix<f64>) -> Result<KpcBasis, KpcaError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(KpcaError::NotSquare(n, m.ncols()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lambda1 = order.first().map_or(0.0, |&k| eig.eigenvalues[k]).max(0.0);
    // Round-off floor of a dense symmetric solver, relative to λ₁.
    let roundoff = (n as f64) * f64::EPSILON * lambda1.max(m.amax());
    let neg_tol = 1e-8 * lambda1 + roundoff;
    let min = order.last().map_or(0.0, |&k| eig.eigenvalues[k]);
    if min < -neg_tol {
        return Err(KpcaError::NotPsd { min, lambda1 });
    }

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let l = eig.eigenvalues[src];
        eigenvalues.push(if l <= roundoff { 0.0 } else { l });
        let mut v = eig.eigenvectors.column(src).into_owned();
        let mut lead = 0;
        for i in 1..n {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        eigenvectors.set_column(dst, &v);
    }
    let total_variance = eigenvalues.iter().sum();
    Ok(KpcBasis {
        eigenvalues,
        eigenvectors,
        total_variance,
    })
}

/// Smallest r whose cumulative variance share reaches `rho`; components
/// with zero eigenvalue are never counted.
pub fn select_rank(basis: &KpcBasis, rho: f64) -> Result<usize, KpcaError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(KpcaError::InvalidRho(rho));
    }
    let positive = basis.positive_count();
    if positive == 0 {
        return Err(KpcaError::AllZero);
    }
    let cum = basis.cumulative_shares();
    let r = cum
        .iter()
        .position(|&c| c >= rho - 4.0 * f64::EPSILON)
        .map_or(positive, |k| k + 1);
    Ok(r.min(positive))
}

/// N×r component scores for the training cases.
#[derive(Debug, Clone, PartialEq)]
pub struct PcRegressors {
    scores: DMatrix<f64>,
}

impl PcRegressors {
    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn rank(&self) -> usize {
        self.scores.ncols()
    }

    pub fn into_scores(self) -> DMatrix<f64> {
        self.scores
    }
}

/// X′ = K̃·U_r·Λ_r^{−1/2}.
pub fn project_training(
    ck: &CenteredKernel,
    basis: &KpcBasis,
    r: usize,
) -> Result<PcRegressors, KpcaError> {
    check_rank(basis, r)?;
    if ck.n_cases() != basis.n_cases() {
        return Err(KpcaError::DimensionMismatch {
            expected: basis.n_cases(),
            found: ck.n_cases(),
        });
    }
    Ok(PcRegressors {
        scores: ck.values() * basis.projector(r),
    })
}

/// Scores for one centered new-case kernel row.
pub fn project_new(centered_row: &[f64], basis: &KpcBasis, r: usize) -> Result<Vec<f64>, KpcaError> {
    let m = DMatrix::from_row_slice(1, centered_row.len(), centered_row);
    Ok(project_new_rows(&m, basis, r)?.row(0).iter().copied().collect())
}

/// Scores for many centered new-case rows (one per matrix row).
pub fn project_new_rows(
    centered_rows: &DMatrix<f64>,
    basis: &KpcBasis,
    r: usize,
) -> Result<DMatrix<f64>, KpcaError> {
    check_rank(basis, r)?;
    if centered_rows.ncols() != basis.n_cases() {
        return Err(KpcaError::DimensionMismatch {
            expected: basis.n_cases(),
            found: centered_rows.ncols(),
        });
    }
    Ok(centered_rows * basis.projector(r))
}

/// Scree table: `k,eigenvalue,share,cumulative`, k starting at 1.
pub fn write_spectrum_csv<W: Write>(basis: &KpcBasis, out: W) -> Result<(), KpcaError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "eigenvalue", "share", "cumulative"])?;
    let shares = basis.shares();
    let cum = basis.cumulative_shares();
    for k in 0..basis.n_components() {
        w.write_record([
            (k + 1).to_string(),
            basis.eigenvalues[k].to_string(),
            shares[k].to_string(),
            cum[k].to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{
        build_kernel_matrix, center_kernel_matrix, center_new_rows, cross_kernel, double_center,
        KernelSpec,
    };
    use proptest::prelude::*;

    fn basis_of(values: &[f64]) -> KpcBasis {
        let n = values.len();
        KpcBasis {
            eigenvalues: values.to_vec(),
            eigenvectors: DMatrix::identity(n, n),
            total_variance: values.iter().sum(),
        }
    }

    #[test]
    fn two_by_two_by_hand() {
        let ck = double_center(&DMatrix::identity(2, 2)).unwrap();
        let b = eigendecompose(&ck).unwrap();
        assert!((b.eigenvalues()[0] - 1.0).abs() < 1e-14);
        assert_eq!(b.eigenvalues()[1], 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // tie in magnitude resolved at the lowest index, which is positive
        assert!((b.eigenvectors()[(0, 0)] - h).abs() < 1e-14);
        assert!((b.eigenvectors()[(1, 0)] + h).abs() < 1e-14);

        let x = project_training(&ck, &b, 1).unwrap();
        assert!((x.scores().column(0).norm_squared() - 1.0).abs() < 1e-12);
        assert!((x.scores()[(0, 0)] - h).abs() < 1e-12);
        assert!((x.scores()[(1, 0)] + h).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let b = eigendecompose_matrix(&DMatrix::zeros(4, 4)).unwrap();
        assert!(b.eigenvalues().iter().all(|&l| l == 0.0));
        assert!(matches!(select_rank(&b, 0.5), Err(KpcaError::AllZero)));
        assert!(matches!(b.truncate(1), Err(KpcaError::RankTooLarge { .. })));
    }

    #[test]
    fn negative_definite_input_rejected() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(eigendecompose_matrix(&m), Err(KpcaError::NotPsd { .. })));
        // a tiny negative is clamped
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1e-10]));
        let b = eigendecompose_matrix(&m).unwrap();
        assert_eq!(b.eigenvalues(), &[1.0, 0.0]);
    }

    #[test]
    fn rank_selection_examples() {
        let b = basis_of(&[3.0, 1.0]);
        assert_eq!(select_rank(&b, 0.70).unwrap(), 1);
        assert_eq!(select_rank(&b, 0.75).unwrap(), 1);
        assert_eq!(select_rank(&b, 0.80).unwrap(), 2);
        let b = basis_of(&[5.0, 2.0, 1.0, 0.0, 0.0]);
        assert_eq!(select_rank(&b, 1.0).unwrap(), 3);
        assert!(matches!(select_rank(&b, 0.0), Err(KpcaError::InvalidRho(_))));
        assert!(matches!(select_rank(&b, 1.2), Err(KpcaError::InvalidRho(_))));
    }

    #[test]
    fn zero_row_projects_to_zero() {
        let ck = double_center(&DMatrix::from_row_slice(3, 3, &[2., 1., 0., 1., 2., 1., 0., 1., 2.])).unwrap();
        let b = eigendecompose(&ck).unwrap();
        assert_eq!(project_new(&[0.0; 3], &b, 1).unwrap(), vec![0.0]);
        assert!(matches!(
            project_new(&[0.0; 2], &b, 1),
            Err(KpcaError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            project_training(&ck, &b, 3),
            Err(KpcaError::RankTooLarge { .. })
        ));
    }

    #[test]
    fn basis_serde_round_trip_keeps_rank() {
        let x = DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j) as f64).sin());
        let ck = center_kernel_matrix(&build_kernel_matrix(&x, &KernelSpec::radial(0.8).unwrap()).unwrap()).unwrap();
        let b = eigendecompose(&ck).unwrap().truncate(3).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        let back: KpcBasis = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.eigenvectors().ncols(), 3);
    }

    #[test]
    fn spectrum_csv_rows() {
        let mut buf = Vec::new();
        write_spectrum_csv(&basis_of(&[3.0, 1.0]), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "k,eigenvalue,share,cumulative\n1,3,0.75,0.75\n2,1,0.25,1\n"
        );
    }

    /// Explicit features for the d = 1 ANOVA kernel: each coordinate's
    /// Gaussian factor exp(−γ(a−b)²) = Σₙ φₙ(a)φₙ(b) with
    /// φₙ(a) = exp(−γa²)(2γ)^{n/2} aⁿ/√n!, truncated at `terms`.
    fn explicit_features(x: &DMatrix<f64>, gamma: f64, terms: usize) -> DMatrix<f64> {
        let p = x.ncols();
        DMatrix::from_fn(x.nrows(), p * terms, |i, col| {
            let (j, n) = (col / terms, col % terms);
            let a = x[(i, j)];
            let mut log_fact = 0.0;
            for k in 1..=n {
                log_fact += (k as f64).ln();
            }
            (-gamma * a * a).exp() * (2.0 * gamma).powf(n as f64 / 2.0) * a.powi(n as i32)
                / (0.5 * log_fact).exp()
        })
    }

    #[test]
    fn scores_match_explicit_feature_pca() {
        let gamma = 0.7;
        let terms = 40;
        let x = DMatrix::from_fn(7, 2, |i, j| (1.3 * i as f64 + 2.1 * j as f64).sin());
        let x_new = DMatrix::from_row_slice(2, 2, &[0.3, -0.6, -0.9, 0.1]);
        let spec = KernelSpec::anova(gamma, 1).unwrap();

        let ck = center_kernel_matrix(&build_kernel_matrix(&x, &spec).unwrap()).unwrap();
        let basis = eigendecompose(&ck).unwrap();
        let r = 3;
        let train_scores = project_training(&ck, &basis, r).unwrap().into_scores();
        let new_rows = center_new_rows(&cross_kernel(&x_new, &x, &spec).unwrap(), ck.stats()).unwrap();
        let new_scores = project_new_rows(&new_rows, &basis, r).unwrap();

        // Oracle: ordinary PCA on centered explicit features.
        let phi = explicit_features(&x, gamma, terms);
        let means = DMatrix::from_fn(1, phi.ncols(), |_, c| phi.column(c).mean());
        let center = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, c| m[(i, c)] - means[(0, c)]);
        let phi_c = center(&phi);
        let cov = phi_c.transpose() * &phi_c;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let phi_new_c = center(&explicit_features(&x_new, gamma, terms));

        for k in 0..r {
            let v = eig.eigenvectors.column(order[k]);
            assert!((eig.eigenvalues[order[k]] - basis.eigenvalues()[k]).abs() < 1e-9);
            let oracle_train = &phi_c * v;
            let oracle_new = &phi_new_c * v;
            let sign = if oracle_train.dot(&train_scores.column(k)) < 0.0 { -1.0 } else { 1.0 };
            for i in 0..x.nrows() {
                assert!((sign * oracle_train[i] - train_scores[(i, k)]).abs() < 1e-8);
            }
            for i in 0..x_new.nrows() {
                assert!((sign * oracle_new[i] - new_scores[(i, k)]).abs() < 1e-8);
            }
        }
    }

    fn random_centered() -> impl Strategy<Value = CenteredKernel> {
        (3usize..25, 1usize..4, 0.05f64..3.0, 1u32..4).prop_flat_map(|(n, p, g, d)| {
            proptest::collection::vec(-2.0f64..2.0, n * p).prop_map(move |v| {
                let x = DMatrix::from_row_slice(n, p, &v);
                let spec = KernelSpec::anova(g, d).unwrap();
                center_kernel_matrix(&build_kernel_matrix(&x, &spec).unwrap()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn spectral_properties(ck in random_centered()) {
            let b = eigendecompose(&ck).unwrap();
            let l1 = b.eigenvalues()[0];
            prop_assert!(b.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
            let u = b.eigenvectors();
            let utu = u.transpose() * u;
            prop_assert!((utu - DMatrix::identity(b.n_cases(), b.n_cases())).amax() < 1e-8);
            let recon = u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(b.eigenvalues().to_vec())) * u.transpose();
            prop_assert!((recon - ck.values()).amax() <= 1e-8 * l1);

            let cum = b.cumulative_shares();
            prop_assert!(cum.windows(2).all(|w| w[0] <= w[1] + 1e-15));
            prop_assert_eq!(*cum.last().unwrap(), 1.0);

            let pos = b.positive_count();
            let x = project_training(&ck, &b, pos).unwrap();
            let gram = x.scores().transpose() * x.scores();
            for i in 0..pos {
                for j in 0..pos {
                    let want = if i == j { b.eigenvalues()[i] } else { 0.0 };
                    prop_assert!((gram[(i, j)] - want).abs() <= 1e-6 * b.eigenvalues()[i.min(j)].max(1e-300) + 1e-10 * l1);
                }
                prop_assert!(x.scores().column(i).mean().abs() <= 1e-12 * l1 / b.eigenvalues()[i].sqrt() + 1e-10);
            }
            let again = project_new_rows(ck.values(), &b, pos).unwrap();
            prop_assert!((again - x.scores()).amax() < 1e-8);
        }

        #[test]
        fn rank_monotone_in_rho(ck in random_centered(), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let basis = eigendecompose(&ck).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(select_rank(&basis, lo).unwrap() <= select_rank(&basis, hi).unwrap());
            prop_assert!(select_rank(&basis, 1.0).unwrap() == basis.positive_count());
        }
    }
}
