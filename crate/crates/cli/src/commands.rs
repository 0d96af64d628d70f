use std::fs;
use std::path::{Path, PathBuf};

use kpclr::config::{parse_costs, parse_rho_list, ConfigError, GridConfig, RunConfig};
use kpclr::data::{
    apply_standardization, read_split_csv, write_split_csv, CategoricalSchema, EncodeReport, RawTable, SplitName,
};
use kpclr::forecaster::{load_model, save_model, write_forecasts_csv, Provenance};
use kpclr::kpca::write_spectrum_csv;
use kpclr::pipeline::{prepare_splits, run_baseline, BaselineRun, Comparison, KpclrRun, PreparedSplits, THIRDS};
use kpclr::report::{write_atomic, write_csv_atomic, write_histogram_csv, RegressionReport};
use kpclr::selection::{diagnostics_series, evaluate_on_test, write_diagnostics_csv, TestEvaluation};
use kpclr::{
    generate_synthetic, run_grid, select_best, Dataset, Error, FeatureSchema, FittedForecaster, KernelSpec,
    KpcrModel, ResponseMode, Result, SearchGrid,
};

use crate::{BaselineArgs, Command, DataArgs, EvaluateArgs, FitArgs, PredictArgs, ReportArgs, SelectArgs, SimulateArgs};

pub(crate) fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Select(a) => select(a).map(drop),
        Command::Compare(a) => compare(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Baseline(a) => baseline(a),
        Command::Report(a) => report(a),
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    ConfigError::Invalid(msg.into()).into()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    write_atomic(&path, text.as_bytes()).map_err(|e| Error::io(&path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

/// Cases plus everything needed to describe them in a model file.
struct Loaded {
    ds: Dataset,
    response: String,
    encoding: EncodeReport,
}

/// Resolved run settings: defaults, then the run config, then the grid
/// file, then explicit flags.
struct Setup {
    loaded: Loaded,
    grid: SearchGrid,
    out: PathBuf,
    proportions: [f64; 3],
    stratified: bool,
}

impl Setup {
    fn splits(&self) -> Result<PreparedSplits> {
        prepare_splits(&self.loaded.ds, self.grid.seed, self.proportions, self.stratified)
    }

    fn forecaster(&self, splits: &PreparedSplits, model: KpcrModel, provenance: Provenance) -> FittedForecaster {
        FittedForecaster::new(
            self.loaded.response.clone(),
            self.loaded.encoding.class_labels.clone(),
            self.loaded.encoding.schema.clone(),
            splits.standardization.clone(),
            model,
            provenance,
        )
    }
}

fn setup(
    data: &DataArgs,
    regression: bool,
    grid_file: Option<&Path>,
    rho_list: Option<&str>,
    ratio_tolerance: Option<f64>,
) -> Result<Setup> {
    let cfg = match &data.config {
        Some(p) => Some(RunConfig::from_toml_str(&read_text(p)?)?),
        None => None,
    };
    let cfg_ref = cfg.as_ref();

    let mut grid = SearchGrid::default();
    if let Some(c) = cfg_ref.and_then(|c| c.costs.as_deref()) {
        grid.costs = parse_costs(c)?;
    }
    if let Some(s) = cfg_ref.and_then(|c| c.seed) {
        grid.seed = s;
    }
    if let Some(g) = cfg_ref.and_then(|c| c.grid.as_ref()) {
        grid = g.apply(grid)?;
    }
    if let Some(p) = grid_file {
        grid = GridConfig::from_toml_str(&read_text(p)?)?.apply(grid)?;
    }
    if let Some(c) = &data.costs {
        grid.costs = parse_costs(c)?;
    }
    if let Some(s) = data.seed {
        grid.seed = s;
    }
    if let Some(r) = rho_list {
        grid.rhos = parse_rho_list(r)?;
    }
    if let Some(t) = ratio_tolerance {
        grid.ratio_tolerance = t;
    }
    grid.validate()?;

    let mode = if regression {
        ResponseMode::Regression
    } else {
        cfg_ref.and_then(|c| c.response_mode).unwrap_or(ResponseMode::Classification)
    };
    let input = data.input.clone().or_else(|| cfg_ref.and_then(|c| c.input.clone()));
    let response = data.response.clone().or_else(|| cfg_ref.and_then(|c| c.response.clone()));
    let schema = data.schema.clone().or_else(|| cfg_ref.and_then(|c| c.schema.clone()));

    let loaded = match (input, cfg_ref.and_then(|c| c.simulate.as_ref())) {
        (Some(path), _) => {
            let response = response.ok_or_else(|| invalid("--response is required with --input"))?;
            let schema = match schema {
                Some(p) => Some(CategoricalSchema::from_toml_str(&read_text(&p)?)?),
                None => None,
            };
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let table = RawTable::from_csv(file, &response, schema.as_ref())?;
            let (ds, encoding) = kpclr::data::load_and_encode(&table, mode)?;
            if encoding.dropped_incomplete > 0 {
                eprintln!("dropped {} incomplete row(s)", encoding.dropped_incomplete);
            }
            Loaded { ds, response, encoding }
        }
        (None, Some(sim)) => {
            let ds = generate_synthetic(sim.kind, sim.n, grid.seed, sim.noise)?;
            let encoding = EncodeReport {
                schema: FeatureSchema::numeric(ds.feature_names()),
                dropped_incomplete: 0,
                class_labels: (ds.mode() == ResponseMode::Classification).then(|| ["0".into(), "1".into()]),
            };
            Loaded {
                ds,
                response: response.unwrap_or_else(|| "y".into()),
                encoding,
            }
        }
        (None, None) => return Err(invalid("no cases: pass --input or a config with a [simulate] table")),
    };

    let out = data
        .out
        .clone()
        .or_else(|| cfg_ref.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("kpclr-out"));
    ensure_dir(&out)?;
    Ok(Setup {
        loaded,
        grid,
        out,
        proportions: cfg_ref.and_then(|c| c.proportions).unwrap_or(THIRDS),
        stratified: data.stratified || cfg_ref.and_then(|c| c.stratified).unwrap_or(false),
    })
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let kind = a.kind.parse()?;
    let ds = generate_synthetic(kind, a.n, a.seed, a.noise)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_csv_atomic(&a.out, |buf| ds.write_csv(&a.response, buf))?;
    println!("wrote {} {kind} cases to {}", ds.n_cases(), a.out.display());
    Ok(())
}

fn write_splits(s: &Setup, splits: &PreparedSplits) -> Result<()> {
    write_csv_atomic(&s.out.join("splits.csv"), |buf| write_split_csv(&splits.assignment, buf))
}

fn write_evaluation(dir: &Path, stem: &str, title: &str, ev: &TestEvaluation) -> Result<()> {
    let label = serde_json::to_value(ev.label).expect("label serializes");
    let table = format!(
        "{}\nfitted-value IQR: {:.4}\n",
        ev.report.render_table(&format!("{title} ({})", label.as_str().unwrap_or_default())),
        ev.iqr
    );
    print!("{table}");
    write_text(dir, &format!("{stem}.txt"), &table)?;
    write_text(dir, &format!("{stem}.json"), &to_json(ev))?;
    write_csv_atomic(&dir.join(format!("{stem}_histogram.csv")), |buf| write_histogram_csv(&ev.histogram, buf))
}

fn fit(a: FitArgs) -> Result<()> {
    let s = setup(&a.data, a.regression, None, None, None)?;
    let kernel: KernelSpec = a.kernel.parse()?;
    let splits = s.splits()?;
    let model = KpcrModel::fit(
        splits.train.x(),
        splits.train.y(),
        splits.train.mode(),
        kernel,
        a.rho,
        s.grid.costs,
    )?;
    println!("{} at rho {}: {} components", model.kernel, model.rho, model.rank());
    match model.mode {
        ResponseMode::Classification => {
            let ev = evaluate_on_test(&model, &splits.validation)?;
            write_evaluation(&s.out, "validation_report", "Validation split", &ev)?;
        }
        ResponseMode::Regression => {
            let rep = RegressionReport::new(&model.predict(splits.validation.x())?, splits.validation.y());
            println!("validation MSE: {:.6} on {} cases", rep.mse, rep.cases);
            write_text(&s.out, "validation_report.json", &to_json(&rep))?;
        }
    }
    write_csv_atomic(&s.out.join("spectrum.csv"), |buf| write_spectrum_csv(&model.basis, buf))?;
    write_splits(&s, &splits)?;
    let provenance = Provenance {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: Some(s.grid.seed),
        selected: None,
        audit_file: None,
    };
    save_model(&s.forecaster(&splits, model, provenance), &s.out.join("model.json"))?;
    Ok(())
}

/// Grid search and selection, then the single test evaluation. Diagnostics are
/// written before selection so a failed search still leaves a trail.
fn select_inner(s: &Setup, splits: &PreparedSplits) -> Result<KpclrRun> {
    let results = run_grid(&splits.train, &splits.validation, &s.grid)?;
    let selected = match select_best(&results, s.grid.costs.target_ratio(), s.grid.ratio_tolerance) {
        Ok(sel) => sel,
        Err(e) => {
            let series = diagnostics_series(&results, None);
            write_csv_atomic(&s.out.join("diagnostics.csv"), |buf| write_diagnostics_csv(&series, buf))?;
            return Err(e.into());
        }
    };
    let series = diagnostics_series(&results, Some(&selected));
    write_csv_atomic(&s.out.join("diagnostics.csv"), |buf| write_diagnostics_csv(&series, buf))?;
    write_csv_atomic(&s.out.join("audit.csv"), |buf| selected.write_audit_csv(buf))?;
    write_text(&s.out, "selection.json", &to_json(&selected))?;

    let model = selected.build_model()?;
    let winner = &selected.winner;
    println!(
        "selected {} at rho {} ({} components); validation FN/FP {}",
        winner.kernel,
        winner.rho,
        model.rank(),
        winner.fn_fp_ratio.map_or("undefined".into(), |r| format!("{r:.3}"))
    );
    if let Some(rep) = &winner.report {
        let table = rep.render_table("Validation split");
        print!("{table}");
        write_text(&s.out, "validation_report.txt", &table)?;
        write_text(&s.out, "validation_report.json", &rep.to_json())?;
    }
    let test = evaluate_on_test(&model, &splits.test)?;
    write_evaluation(&s.out, "test_report", "Kernel model, test split", &test)?;
    write_csv_atomic(&s.out.join("spectrum.csv"), |buf| write_spectrum_csv(&model.basis, buf))?;
    write_splits(s, splits)?;

    let provenance = Provenance {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: Some(s.grid.seed),
        selected: Some(winner.summary()),
        audit_file: Some("audit.csv".into()),
    };
    save_model(&s.forecaster(splits, model.clone(), provenance), &s.out.join("model.json"))?;
    Ok(KpclrRun {
        grid: s.grid.clone(),
        results,
        selected,
        model,
        test,
    })
}

fn select(a: SelectArgs) -> Result<KpclrRun> {
    let s = setup(&a.data, false, a.grid.as_deref(), a.rho_list.as_deref(), a.ratio_tolerance)?;
    let splits = s.splits()?;
    select_inner(&s, &splits)
}

fn baseline_inner(s: &Setup, splits: &PreparedSplits) -> Result<BaselineRun> {
    let run = run_baseline(splits, s.grid.costs)?;
    let names = run.path.final_names();
    let table = format!(
        "Stepwise predictors: {}\n{}\nfitted-value IQR: {:.4}\n",
        if names.is_empty() { "(intercept only)".to_owned() } else { names.join(", ") },
        run.outcome.report.render_table("Baseline, test split"),
        run.iqr
    );
    print!("{table}");
    write_text(&s.out, "baseline_report.txt", &table)?;
    write_text(&s.out, "baseline_report.json", &to_json(&run))?;
    write_csv_atomic(&s.out.join("stepwise_path.csv"), |buf| run.path.write_csv(buf))?;
    write_csv_atomic(&s.out.join("baseline_histogram.csv"), |buf| write_histogram_csv(&run.histogram, buf))?;
    write_splits(s, splits)?;
    Ok(run)
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let s = setup(&a.data, false, None, None, None)?;
    let splits = s.splits()?;
    baseline_inner(&s, &splits).map(drop)
}

fn compare(a: SelectArgs) -> Result<()> {
    let s = setup(&a.data, false, a.grid.as_deref(), a.rho_list.as_deref(), a.ratio_tolerance)?;
    let splits = s.splits()?;
    let kpclr = select_inner(&s, &splits)?;
    let baseline = baseline_inner(&s, &splits)?;
    let summary = Comparison { kpclr, baseline }.summary();
    let text = summary.render();
    print!("\n{text}");
    write_text(&s.out, "comparison.txt", &text)?;
    write_text(&s.out, "comparison.json", &to_json(&summary))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let f = load_model(&a.model)?;
    let file = fs::File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let (mut ds, dropped) = f.labeled_dataset(file)?;
    if dropped > 0 {
        eprintln!("dropped {dropped} incomplete row(s)");
    }
    if let Some(p) = &a.splits {
        let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
        let rows = read_split_csv(file, SplitName::Test)?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= ds.n_cases()) {
            return Err(invalid(format!("split file names case {bad}, input has {}", ds.n_cases())));
        }
        ds = ds.select_rows(&rows);
    }
    let z = apply_standardization(&ds, &f.standardization)?;
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
    }
    match f.model.mode {
        ResponseMode::Classification => {
            let ev = evaluate_on_test(&f.model, &z)?;
            match &a.out {
                Some(dir) => write_evaluation(dir, "evaluation", "Evaluation", &ev)?,
                None => print!("{}\nfitted-value IQR: {:.4}\n", ev.report.render_table("Evaluation"), ev.iqr),
            }
        }
        ResponseMode::Regression => {
            let rep = RegressionReport::new(&f.model.predict(z.x())?, z.y());
            println!("MSE: {:.6} on {} cases", rep.mse, rep.cases);
            if let Some(dir) = &a.out {
                write_text(dir, "evaluation.json", &to_json(&rep))?;
            }
        }
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let f = load_model(&a.model)?;
    let file = fs::File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let forecasts = f.forecast_csv(file)?;
    match &a.out {
        Some(path) => {
            write_csv_atomic(path, |buf| write_forecasts_csv(&forecasts, f.model.mode, buf))?;
            eprintln!("wrote {} forecast(s) to {}", forecasts.len(), path.display());
        }
        None => write_forecasts_csv(&forecasts, f.model.mode, std::io::stdout().lock())?,
    }
    Ok(())
}

fn model_summary(f: &FittedForecaster) -> String {
    let m = &f.model;
    let mut s = format!(
        "response: {} ({})\nkernel: {}\nrho: {}\ncomponents: {}\ntraining cases: {}\npredictors: {}\ncosts FP:FN: {}\nthreshold: {}\nformat version: {}\ntool version: {}\n",
        f.response,
        serde_json::to_value(m.mode).expect("mode serializes").as_str().unwrap_or_default(),
        m.kernel,
        m.rho,
        m.rank(),
        m.train_x.nrows(),
        f.standardization.retained_names().join(", "),
        m.costs,
        m.threshold,
        f.format_version,
        f.provenance.tool_version,
    );
    if !f.standardization.dropped.is_empty() {
        s.push_str(&format!("dropped constant predictors: {}\n", f.standardization.dropped.join(", ")));
    }
    if let Some(seed) = f.provenance.seed {
        s.push_str(&format!("split seed: {seed}\n"));
    }
    if let Some(rep) = f.provenance.selected.as_ref().and_then(|c| c.report.as_ref()) {
        s.push_str(&rep.render_table("Validation split at selection"));
    }
    s
}

fn report(a: ReportArgs) -> Result<()> {
    let f = load_model(&a.model)?;
    let text = model_summary(&f);
    print!("{text}");
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        write_text(dir, "model_summary.txt", &text)?;
        write_csv_atomic(&dir.join("spectrum.csv"), |buf| write_spectrum_csv(&f.model.basis, buf))?;
    }
    Ok(())
}
