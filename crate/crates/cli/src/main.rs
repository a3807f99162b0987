//! `hrecon`: reconcile, evaluate and run rolling-origin experiments from the
//! command line.
//!
//! Exit codes: 0 on success, 2 on input errors, 3 on numerical failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hrecon::evaluate::{accuracy_report, build_error_tensor, parse_groups, parse_horizon_sets, Group, Metric};
use hrecon::harness::io::{
    read_forecast_set, read_proportions, read_runs_dir, read_runs_raw, read_series_matrix, read_weight_table,
    write_forecast_set,
};
use hrecon::harness::{
    count_negative, persist_results, read_forecast_store, read_observations, run_experiment,
    seasonal_average_forecast, ExperimentConfig, ResidualStore, RunStatus, NEGATIVITY_TOL,
};
use hrecon::hierarchy::{balance, Hierarchy, HierarchySpec};
use hrecon::reconcile::{reconcile, ForecastSet, MethodInputs, MethodKind, MethodSpec};
use hrecon::weights::{weights_from_proportions, CombinationWeights, WeightMatrix};
use hrecon::Error;
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(name = "hrecon", version, about = "Hierarchical forecast reconciliation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconcile one block of base forecasts.
    Reconcile(ReconcileArgs),
    /// Score stored runs against actuals.
    Evaluate(EvaluateArgs),
    /// Run a rolling-origin experiment.
    Experiment(ExperimentArgs),
    /// Count negative forecasts in stored runs.
    AuditNegativity(AuditArgs),
}

#[derive(Args)]
struct ReconcileArgs {
    /// Hierarchy spec (JSON, or CSV with one ancestor column per level).
    #[arg(long)]
    hierarchy: PathBuf,
    /// Base forecasts `series,h1,..,hH` covering every series.
    #[arg(long)]
    base: PathBuf,
    /// Method key, e.g. `lcc-exo:1`, `ccc`, `shr`, `avg:wls+wls@sa`.
    #[arg(long)]
    method: String,
    /// Weight table: `series,variance` rows or a square matrix.
    #[arg(long, group = "weighting")]
    weights: Option<PathBuf>,
    /// In-sample residuals (time x series) for wls and shr.
    #[arg(long, group = "weighting")]
    residuals: Option<PathBuf>,
    /// `series,proportion` rows over the bottoms; only for `lcc-exo:<l>`.
    #[arg(long, group = "weighting")]
    proportions: Option<PathBuf>,
    /// Training observations (time x series); enables variance weights and
    /// seasonal-average forecasts.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    period: usize,
    /// Estimate one variance per season instead of per series.
    #[arg(long)]
    seasonal_variance: bool,
    /// Floor for zero training variances.
    #[arg(long)]
    var_floor: Option<f64>,
    #[arg(long)]
    nonneg: bool,
    /// Origin recorded with the forecasts.
    #[arg(long, default_value_t = 0)]
    origin: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Observations (time x series); bottoms only are aggregated.
    #[arg(long)]
    actuals: PathBuf,
    /// Directory of `<approach>/origin_<t>.csv` forecast files.
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    hierarchy: PathBuf,
    #[arg(long, default_value = "base")]
    benchmark: String,
    /// Comma-separated metrics.
    #[arg(long, default_value = "mse,mae")]
    metric: String,
    /// Comma-separated horizon sets such as `1,2,1:6`; defaults to every
    /// horizon plus the full range.
    #[arg(long)]
    horizons: Option<String>,
    #[arg(long, default_value = "all,uts,bts")]
    groups: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML config; every key can also be given as a flag, and flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window_length: Option<usize>,
    #[arg(long)]
    horizons: Option<usize>,
    #[arg(long)]
    first_origin: Option<usize>,
    #[arg(long)]
    last_origin: Option<usize>,
    #[arg(long)]
    seasonal_period: Option<usize>,
    /// Comma-separated method keys.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    nonneg: bool,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seasonal_variance: Option<bool>,
    #[arg(long)]
    var_floor: Option<f64>,
    #[arg(long)]
    horizon_sets: Option<String>,
    #[arg(long)]
    groups: Option<String>,
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long)]
    base_forecasts: Option<PathBuf>,
    #[arg(long)]
    residuals: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    runs: PathBuf,
    /// Restricts the audit to bottom series; without it every row counts.
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// A failure together with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Reconcile(a) => cmd_reconcile(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::AuditNegativity(a) => cmd_audit(a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_hierarchy(path: &Path) -> CliResult<Hierarchy> {
    Ok(balance(&HierarchySpec::from_path(path)?)?)
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Series ids whose weights a method reads from a weight table.
fn weight_ids<'a>(h: &'a Hierarchy, method: &MethodSpec) -> CliResult<Vec<&'a str>> {
    let all = h.series_ids();
    let bottoms = all[h.n_a()..].to_vec();
    Ok(match &method.kind {
        MethodKind::Ols | MethodKind::Wls | MethodKind::Shr => all,
        MethodKind::LccEndo(l) => {
            let mut ids: Vec<&str> = h.level_range(*l)?.map(|i| all[i]).collect();
            ids.extend(bottoms);
            ids
        }
        MethodKind::Avg(..) | MethodKind::Base | MethodKind::TdHp => {
            return Err(Failure::input(format!("method '{method}' does not take a weight table")))
        }
        _ => bottoms,
    })
}

fn cmd_reconcile(a: ReconcileArgs) -> CliResult<()> {
    let h = load_hierarchy(&a.hierarchy)?;
    let method: MethodSpec = a.method.parse()?;
    let base = read_forecast_set(&a.base, &h, a.origin, "base")?;
    let history = a.history.as_ref().map(|p| read_observations(p, &h)).transpose()?.map(|m| columns(&m));
    let sa = match &history {
        Some(hist) => {
            let rows = hist
                .iter()
                .map(|x| seasonal_average_forecast(x, a.period, base.horizons()))
                .collect::<hrecon::Result<Vec<_>>>()?;
            Some(ForecastSet::from_rows(&h, &rows, a.origin, "sa")?)
        }
        None => None,
    };
    let residuals = a.residuals.as_ref().map(|p| read_series_matrix(p, &h)).transpose()?;
    let weights: Option<WeightMatrix> = if let Some(p) = &a.weights {
        Some(read_weight_table(p)?.select(&weight_ids(&h, &method)?)?)
    } else if let Some(p) = &a.proportions {
        let MethodKind::LccExo(l) = method.kind else {
            return Err(Failure::input("--proportions applies to lcc-exo:<l> only"));
        };
        let props = read_proportions(p, &h)?;
        Some(weights_from_proportions(&CombinationWeights::from_bottom_weights(&h, l, &props)?)?)
    } else {
        None
    };
    let mut inputs = MethodInputs::new(&h, &base);
    inputs.sa = sa.as_ref();
    inputs.history = history.as_deref();
    inputs.residuals = residuals.as_ref();
    inputs.weights = weights.as_ref();
    inputs.seasonal_period = a.period;
    inputs.seasonal_variance = a.seasonal_variance;
    inputs.var_floor = a.var_floor;
    inputs.nonneg = a.nonneg;
    let r = reconcile(&method, &inputs).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("origin {}, method '{method}': {}", a.origin, f.message);
        f
    })?;
    write_forecast_set(&a.out, &r.forecasts)?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let h = load_hierarchy(&a.hierarchy)?;
    let actuals = read_observations(&a.actuals, &h)?;
    let runs = read_runs_dir(&a.runs, &h)?;
    if runs.is_empty() {
        return Err(Failure::input(format!("no forecast files under {}", a.runs.display())));
    }
    let metrics: Vec<Metric> = a
        .metric
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<hrecon::Result<_>>()?;
    let groups: Vec<Group> = parse_groups(&a.groups)?;
    let tensor = build_error_tensor(&actuals, &h, &runs, &a.benchmark)?;
    let sets = match &a.horizons {
        Some(s) => parse_horizon_sets(s)?,
        None => {
            let n = tensor.horizons();
            let mut labels: Vec<String> = (1..=n).map(|j| j.to_string()).collect();
            if n > 1 {
                labels.push(format!("1:{n}"));
            }
            parse_horizon_sets(&labels.join(","))?
        }
    };
    let report = accuracy_report(&tensor, &metrics, &sets, &groups, a.alpha)?;
    write_text(&a.out, &report.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

fn experiment_config(a: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => {
            let need = |name: &str| Failure::input(format!("--{name} is required without --config"));
            let methods = a.methods.as_deref().ok_or_else(|| need("methods"))?;
            let methods = split_list(methods);
            let refs: Vec<&str> = methods.iter().map(String::as_str).collect();
            ExperimentConfig::new(
                a.window_length.ok_or_else(|| need("window-length"))?,
                a.horizons.ok_or_else(|| need("horizons"))?,
                a.seasonal_period.ok_or_else(|| need("seasonal-period"))?,
                &refs,
            )
        }
    };
    if let Some(v) = a.window_length {
        cfg.window_length = v;
    }
    if let Some(v) = a.horizons {
        cfg.horizons = v;
    }
    if let Some(v) = a.seasonal_period {
        cfg.seasonal_period = v;
    }
    if let Some(v) = &a.methods {
        cfg.methods = split_list(v);
    }
    if a.first_origin.is_some() {
        cfg.first_origin = a.first_origin;
    }
    if a.last_origin.is_some() {
        cfg.last_origin = a.last_origin;
    }
    if a.nonneg {
        cfg.nonneg = true;
    }
    if let Some(v) = &a.benchmark {
        cfg.benchmark = v.clone();
    }
    if let Some(v) = a.parallelism {
        cfg.parallelism = v;
    }
    if let Some(v) = a.seasonal_variance {
        cfg.seasonal_variance = v;
    }
    if a.var_floor.is_some() {
        cfg.var_floor = a.var_floor;
    }
    if let Some(v) = &a.horizon_sets {
        cfg.horizon_sets = Some(parse_horizon_sets(v)?);
    }
    if let Some(v) = &a.groups {
        cfg.groups = parse_groups(v)?;
    }
    if let Some(v) = &a.metrics {
        cfg.metrics = split_list(v).iter().map(|m| m.parse()).collect::<hrecon::Result<_>>()?;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.hierarchy, &a.hierarchy),
        (&mut paths.observations, &a.observations),
        (&mut paths.base_forecasts, &a.base_forecasts),
        (&mut paths.residuals, &a.residuals),
        (&mut paths.output, &a.output),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    Ok(cfg)
}

fn cmd_experiment(a: ExperimentArgs) -> CliResult<()> {
    let cfg = experiment_config(&a)?;
    let need = |name: &str| Failure::input(format!("no {name} path in the config or flags"));
    let hierarchy = cfg.paths.hierarchy.clone().ok_or_else(|| need("hierarchy"))?;
    let observations = cfg.paths.observations.clone().ok_or_else(|| need("observations"))?;
    let output = cfg.paths.output.clone().ok_or_else(|| need("output"))?;
    let h = load_hierarchy(&hierarchy)?;
    let data = read_observations(&observations, &h)?;
    let store = cfg
        .paths
        .base_forecasts
        .as_ref()
        .map(|p| read_forecast_store(p, &h, "base"))
        .transpose()?;
    let residuals = cfg.paths.residuals.as_ref().map(|p| ResidualStore::read(p, &h)).transpose()?;
    let out = run_experiment(&cfg, &h, &data, store.as_ref(), residuals.as_ref())?;
    persist_results(&output, &out)?;
    print!("{}", out.report.to_table());
    let mut failed = 0;
    for r in out.failures() {
        if let RunStatus::Failed(msg) = &r.status {
            eprintln!("failed cell: origin {}, method '{}': {msg}", r.origin, r.method);
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: 3,
            message: format!("{failed} of {} cells failed; results written to {}", out.records.len(), output.display()),
        });
    }
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> CliResult<()> {
    let mut csv = String::from("method,origin,scope,negative_count,min_value\n");
    let mut rows: Vec<(String, usize, &str, usize, f64)> = Vec::new();
    match &a.hierarchy {
        Some(p) => {
            let h = load_hierarchy(p)?;
            for (t, method, fs) in read_runs_dir(&a.runs, &h)? {
                let min = fs.values.rows(h.n_a(), h.n_b()).iter().copied().fold(f64::INFINITY, f64::min);
                rows.push((method, t, "bts", count_negative(&fs, &h), min));
            }
        }
        None => {
            for (t, method, _, m) in read_runs_raw(&a.runs)? {
                let neg = m.iter().filter(|&&v| v < -NEGATIVITY_TOL).count();
                rows.push((method, t, "all", neg, m.iter().copied().fold(f64::INFINITY, f64::min)));
            }
        }
    }
    if rows.is_empty() {
        return Err(Failure::input(format!("no forecast files under {}", a.runs.display())));
    }
    let mut totals: Vec<(String, usize)> = Vec::new();
    for (method, t, scope, neg, min) in &rows {
        writeln!(csv, "{method},{t},{scope},{neg},{min}").expect("write to string");
        match totals.iter_mut().find(|(m, _)| m == method) {
            Some((_, n)) => *n += neg,
            None => totals.push((method.clone(), *neg)),
        }
    }
    write_text(&a.out, &csv)?;
    for (method, n) in totals {
        println!("{method}: {n} negative forecasts");
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}
