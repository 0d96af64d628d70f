//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the verdict lines are always printed; the process exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use kpclr::data::{generate_synthetic, ResponseMode, SyntheticKind};
use kpclr::forecaster::{load_model, model_to_string, model_from_str, save_model, FittedForecaster, Provenance};
use kpclr::glm::{logistic, ConfusionReport};
use kpclr::kernel::{center_new_rows, double_center};
use kpclr::kpca::{eigendecompose, project_new_rows, project_training};
use kpclr::pipeline::{prepare_splits, run_compare, THIRDS};
use kpclr::stepwise::aic;
use kpclr::{
    backward_eliminate_aic, build_kernel_matrix, fit_weighted_logistic, standardize, threshold_from_costs, CostPair,
    Dataset, FeatureSchema, KernelSpec, KpcrModel, SearchGrid,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn toy() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 5, &[1., 2., 3., 2., 0., 2., 6., 1., 1., 1., 0., 6., 0., 1., 2.])
}

fn golden_kernels() -> Verdict {
    let rad = build_kernel_matrix(&toy(), &KernelSpec::radial(0.01).unwrap()).unwrap();
    let r = rad.values();
    let radial_ok = [(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (0, 1, 0.79), (0, 2, 0.73), (1, 2, 0.94)]
        .iter()
        .all(|&(i, j, want)| close(r[(i, j)], want, 0.005) && r[(i, j)] == r[(j, i)]);

    let an = build_kernel_matrix(&toy(), &KernelSpec::anova(0.01, 2).unwrap()).unwrap();
    let a = an.values();
    let diag_ok = (0..3).all(|i| a[(i, i)] == 25.0);
    let off_ok = close(a[(0, 1)], 22.88, 0.005) && close(a[(1, 2)], 24.41, 0.005) && close(a[(0, 2)], 22.155, 0.005);
    verdict(
        radial_ok && diag_ok && off_ok,
        format!(
            "radial (1,2) {:.4} (1,3) {:.4} (2,3) {:.4}; anova diagonal exactly 25: {diag_ok}; (1,2) {:.4} (2,3) {:.4} (1,3) {:.4}",
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 2)],
            a[(0, 1)],
            a[(1, 2)],
            a[(0, 2)]
        ),
    )
}

fn thresholds() -> Verdict {
    let t = |fp: f64, fn_: f64| threshold_from_costs(CostPair::new(fp, fn_).unwrap());
    let r3 = |v: f64| (v * 1000.0).round() / 1000.0;
    let core = r3(t(2.0, 1.0)) == 0.667 && r3(t(1.0, 2.0)) == 0.333 && t(1.0, 1.0) == 0.5;
    // "1 to 3" is stated as FN:FP, i.e. false positives three times as costly.
    let fp_three_times = t(3.0, 1.0) == 0.75;
    let literal_fp1_fn3 = t(1.0, 3.0) == 0.25;
    verdict(
        core && fp_three_times && literal_fp1_fn3,
        format!(
            "FP:FN 2:1 -> {:.3}, 1:2 -> {:.3}, 1:1 -> {}, FP three times costlier (FP:FN 3:1, \"1 to 3\" as FN:FP) -> {}, literal FP:FN 1:3 -> {}",
            t(2.0, 1.0),
            t(1.0, 2.0),
            t(1.0, 1.0),
            t(3.0, 1.0),
            t(1.0, 3.0)
        ),
    )
}

/// PSD test matrix: a Gram matrix of random features, or a radial kernel of
/// random points.
fn random_psd(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = rng.random_range(5..=60);
    if rng.random_bool(0.5) {
        let k = rng.random_range(1..=n);
        let a = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal) / (k as f64).sqrt());
        &a * a.transpose()
    } else {
        let p = rng.random_range(1..=6);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = [0.05, 0.5, 2.0][rng.random_range(0..3)];
        build_kernel_matrix(&x, &KernelSpec::radial(g).unwrap()).unwrap().values().clone()
    }
}

fn decomposition_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut row_sum, mut recon, mut gram, mut consistency) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut entrywise = 0.0f64;
    let mut failures = 0;
    for _ in 0..200 {
        let k = random_psd(&mut rng);
        let n = k.nrows() as f64;
        let ck = double_center(&k).unwrap();
        let kt = ck.values();
        let rs = kt.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max) / n;
        let basis = eigendecompose(&ck).unwrap();
        let l1 = basis.eigenvalues()[0];
        let r = basis.positive_count();

        let u = basis.eigenvectors().columns(0, r).into_owned();
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&basis.eigenvalues()[..r]));
        let rec = (kt - &u * lam * u.transpose()).abs().max() / l1;

        let scores = project_training(&ck, &basis, r).unwrap().into_scores();
        let g = scores.transpose() * &scores;
        let lv = basis.eigenvalues();
        // normwise: |G − Λ| against ‖Λ‖ = λ₁. Entrywise against √(λᵢλⱼ) the
        // error grows like ε·λ₁/λᵢ, so it is only tracked for components
        // resolved above 1e-9·λ₁.
        let mut gr = 0.0f64;
        for i in 0..r {
            for j in 0..r {
                let want = if i == j { lv[i] } else { 0.0 };
                let e = (g[(i, j)] - want).abs();
                gr = gr.max(e / l1);
                if lv[i].min(lv[j]) >= 1e-9 * l1 {
                    entrywise = entrywise.max(e / (lv[i] * lv[j]).sqrt());
                }
            }
        }

        let again = project_new_rows(&center_new_rows(&k, ck.stats()).unwrap(), &basis, r).unwrap();
        let cons = (&again - &scores).abs().max();

        if rs > 1e-8 || rec > 1e-8 || gr > 1e-6 || cons > 1e-8 {
            failures += 1;
        }
        row_sum = row_sum.max(rs);
        recon = recon.max(rec);
        gram = gram.max(gr);
        consistency = consistency.max(cons);
    }
    verdict(
        failures == 0,
        format!(
            "200 matrices, {failures} failing; worst row sum/N {row_sum:.1e}, reconstruction/λ₁ {recon:.1e}, Gram error/λ₁ {gram:.1e} (entrywise relative for λ ≥ 1e-9·λ₁ {entrywise:.1e}), train/test {consistency:.1e}"
        ),
    )
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Direct minimization of the weighted negative log-likelihood by gradient
/// descent with the fixed step 4/λmax(AᵀWA).
fn nll_oracle(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    let a = with_intercept(x);
    let wa = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| w[i] * a[(i, j)]);
    let step = 4.0 / (a.transpose() * wa).symmetric_eigenvalues().max();
    let mut beta = DVector::zeros(a.ncols());
    for _ in 0..500_000 {
        let eta = &a * &beta;
        let r = DVector::from_fn(a.nrows(), |i, _| w[i] * (y[i] - logistic(eta[i])));
        let g = a.transpose() * r;
        if g.norm() < 1e-13 {
            break;
        }
        beta += g * step;
    }
    beta.iter().copied().collect()
}

fn irls_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut done, mut redrawn, mut failures) = (0, 0, 0);
    let (mut coef_err, mut score_err) = (0.0f64, 0.0f64);
    while done < 100 {
        let n = rng.random_range(15..=50);
        let r = rng.random_range(0..=3);
        let x = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta = rng.random_range(-0.5..0.5) + (0..r).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
                f64::from(rng.random::<f64>() < logistic(eta))
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let pos = y.iter().filter(|&&v| v == 1.0).count();
        // separable or one-class draws have no finite minimizer
        let fit = match fit_weighted_logistic(&x, &y, &w) {
            Ok(f) if pos > 0 && pos < n && !f.separated => f,
            _ => {
                redrawn += 1;
                continue;
            }
        };
        done += 1;
        let p = fit.predict_matrix(&x).unwrap();
        let a = with_intercept(&x);
        let se = (0..=r)
            .map(|k| (0..n).map(|i| w[i] * (y[i] - p[i]) * a[(i, k)]).sum::<f64>().abs())
            .fold(0.0, f64::max);
        let oracle = nll_oracle(&x, &y, &w);
        let mine: Vec<f64> = std::iter::once(fit.intercept).chain(fit.coefficients.iter().copied()).collect();
        let ce = mine.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if ce > 1e-6 || se > 1e-8 || !fit.converged {
            failures += 1;
        }
        coef_err = coef_err.max(ce);
        score_err = score_err.max(se);
    }
    verdict(
        failures == 0,
        format!(
            "100 instances ({redrawn} separable draws replaced), {failures} failing; worst coefficient gap {coef_err:.1e}, score equations {score_err:.1e}"
        ),
    )
}

fn stepwise_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let (mut done, mut redrawn, mut failures) = (0, 0, 0);
    let mut worst_gap = f64::INFINITY;
    while done < 50 {
        let p = rng.random_range(1..=8);
        let n = rng.random_range(60..=200);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta: Vec<f64> = (0..p).map(|_| if rng.random_bool(0.5) { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| f64::from(rng.random::<f64>() < logistic((0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>())))
            .collect();
        let names = (0..p).map(|j| format!("v{j}")).collect();
        let Ok(ds) = Dataset::new(x, y, names, ResponseMode::Classification) else {
            redrawn += 1;
            continue;
        };
        let Ok(path) = backward_eliminate_aic(&ds) else {
            redrawn += 1;
            continue;
        };
        if !path.separation_dropped.is_empty() {
            redrawn += 1;
            continue;
        }
        done += 1;
        let unit = vec![1.0; n];
        let best = (0u32..1 << p)
            .map(|mask| {
                let cols: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
                aic(&fit_weighted_logistic(&ds.x().select_columns(&cols), ds.y(), &unit).unwrap())
            })
            .fold(f64::INFINITY, f64::min);
        let mut seq = vec![path.initial_aic];
        seq.extend(path.steps.iter().map(|s| s.aic));
        let decreasing = seq.windows(2).all(|w| w[1] < w[0]);
        let gap = path.final_aic - best;
        if !(gap >= -1e-9 && decreasing) {
            failures += 1;
        }
        worst_gap = worst_gap.min(gap);
    }
    verdict(
        failures == 0,
        format!(
            "50 instances ({redrawn} redrawn), {failures} failing; smallest greedy minus best-subset AIC {worst_gap:.2e}"
        ),
    )
}

fn regression_gamma() -> Verdict {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let train = generate_synthetic(SyntheticKind::Regression1d, 300, 2 * seed, 0.5).unwrap();
        let test = generate_synthetic(SyntheticKind::Regression1d, 300, 2 * seed + 1, 0.5).unwrap();
        let mse: Vec<f64> = [0.5, 3.0, 500.0]
            .iter()
            .map(|&g| {
                let m = KpcrModel::fit(
                    train.x(),
                    train.y(),
                    ResponseMode::Regression,
                    KernelSpec::anova(g, 1).unwrap(),
                    0.95,
                    CostPair::default(),
                )
                .unwrap();
                let f = m.predict(test.x()).unwrap();
                f.iter().zip(test.y()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 300.0
            })
            .collect();
        if mse[1] < mse[0] && mse[1] < mse[2] {
            wins += 1;
        }
        lines.push(format!("{:.2}/{:.2}/{:.2}", mse[0], mse[1], mse[2]));
    }
    verdict(
        wins >= 9,
        format!("γ=3 best in {wins}/10 seeds; test MSE at γ 0.5/3/500: {}", lines.join(" ")),
    )
}

fn competition() -> Verdict {
    let (mut selected, mut ratio_ok, mut cost_wins, mut iqr_wins) = (0, 0, 0, 0);
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let ds = generate_synthetic(SyntheticKind::NonlinearBinary, 1500, seed, 0.15).unwrap();
        let splits = prepare_splits(&ds, seed, THIRDS, false).unwrap();
        let grid = SearchGrid {
            seed,
            ..SearchGrid::default()
        };
        match run_compare(&splits, &grid) {
            Ok(cmp) => {
                selected += 1;
                let s = cmp.summary();
                let ratio = cmp.kpclr.selected.winner.fn_fp_ratio.unwrap_or(f64::NAN);
                if (ratio - 2.0).abs() <= 0.25 * 2.0 {
                    ratio_ok += 1;
                }
                if s.kpclr_test.cost_weighted_error < s.baseline_test.cost_weighted_error {
                    cost_wins += 1;
                }
                if s.kpclr_iqr > s.baseline_iqr {
                    iqr_wins += 1;
                }
                notes.push(format!(
                    "{seed}:{:.2},{}v{},{:.2}v{:.2}",
                    ratio, s.kpclr_test.cost_weighted_error, s.baseline_test.cost_weighted_error, s.kpclr_iqr, s.baseline_iqr
                ));
            }
            Err(e) => notes.push(format!("{seed}:no model ({e})")),
        }
    }
    verdict(
        selected == 10 && ratio_ok == 10 && cost_wins >= 9 && iqr_wins >= 9,
        format!(
            "(a) model selected with validation FN/FP within 25% of 2 in {ratio_ok}/10; (b) lower test cost in {cost_wins}/10; (c) larger IQR in {iqr_wins}/10 [seed:ratio,cost kernel v baseline,IQR kernel v baseline] {}",
            notes.join(" ")
        ),
    )
}

fn confusion_arithmetic() -> Verdict {
    let costs = CostPair::new(2.0, 1.0).unwrap();
    let r2 = |v: Option<f64>| (v.unwrap() * 100.0).round() / 100.0;
    let t1 = ConfusionReport::from_counts(300, 2, 192, 6, costs);
    let t2 = ConfusionReport::from_counts(239, 57, 141, 67, costs);
    let items = [
        ("stepwise table non-FTA error 0.01", r2(t1.negative_error) == 0.01),
        ("stepwise table FTA error 0.97", r2(t1.positive_error) == 0.97),
        ("kernel table non-FTA error 0.19", r2(t2.negative_error) == 0.19),
        ("kernel table FTA error 0.69", r2(t2.positive_error) == 0.69),
        ("FN/FP 2.47", r2(t2.fn_fp_ratio) == 2.47),
        ("cost-weighted error 255", t2.cost_weighted_error == 255.0),
    ];
    let failed: Vec<&str> = items.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    verdict(
        failed.is_empty(),
        format!(
            "kernel table FTA error from the printed counts is 141/208 = {:.4}; mismatched: {}",
            t2.positive_error.unwrap(),
            if failed.is_empty() { "none".to_owned() } else { failed.join(", ") }
        ),
    )
}

fn persistence() -> Verdict {
    let ds = generate_synthetic(SyntheticKind::NonlinearBinary, 300, 9, 0.15).unwrap();
    let (z, params) = standardize(&ds).unwrap();
    let model = KpcrModel::fit(
        z.x(),
        z.y(),
        ResponseMode::Classification,
        KernelSpec::anova(3.0, 2).unwrap(),
        0.8,
        CostPair::new(2.0, 1.0).unwrap(),
    )
    .unwrap();
    let rank = model.rank();
    let f = FittedForecaster::new(
        "y".into(),
        Some(["0".into(), "1".into()]),
        FeatureSchema::numeric(ds.feature_names()),
        params,
        model,
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: Some(9),
            selected: None,
            audit_file: None,
        },
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&f, &path).unwrap();
    let back = load_model(&path).unwrap();
    let probe = generate_synthetic(SyntheticKind::NonlinearBinary, 100, 1234, 0.15).unwrap();
    let a = f.predict_dataset(&probe).unwrap();
    let b = back.predict_dataset(&probe).unwrap();
    let gap = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);

    let text = model_to_string(&f);
    let truncated = model_from_str(&text[..text.len() - 40]).is_err();
    let flipped = {
        let i = text.find("\"rho\":").unwrap() + 7;
        let mut bytes = text.clone().into_bytes();
        bytes[i] = if bytes[i] == b'7' { b'6' } else { b'7' };
        model_from_str(&String::from_utf8(bytes).unwrap()).is_err()
    };
    let versioned = model_from_str(&text.replacen("\"version\":1", "\"version\":99", 1)).is_err();
    verdict(
        gap <= 1e-12 && back.model.rank() == rank && truncated && flipped && versioned,
        format!(
            "100 cases, worst forecast gap {gap:.1e}; rank {rank} kept; truncated rejected {truncated}, altered byte rejected {flipped}, unknown version rejected {versioned}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, Duration); 9] = [
        ("golden kernel matrices", golden_kernels, Duration::from_secs(1)),
        ("threshold arithmetic", thresholds, Duration::from_secs(1)),
        ("centering and decomposition suite", decomposition_suite, Duration::from_secs(30)),
        ("IRLS oracle", irls_oracle, Duration::from_secs(60)),
        ("stepwise oracle", stepwise_oracle, Duration::from_secs(120)),
        ("regression γ reproduction", regression_gamma, Duration::from_secs(120)),
        ("competition reproduction", competition, Duration::from_secs(600)),
        ("confusion arithmetic", confusion_arithmetic, Duration::from_secs(1)),
        ("persistence", persistence, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let pass = v.pass && took <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {} ({name}): {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
