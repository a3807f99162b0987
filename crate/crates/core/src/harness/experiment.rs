//! Rolling-origin experiment driver.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::io::{self, ForecastStore, ResidualStore};
use super::seasonal::{seasonal_average_forecast, seasonal_deviations};
use crate::error::{Error, Result};
use crate::evaluate::{accuracy_report, build_error_tensor, AccuracyReport, ErrorTensor};
use crate::hierarchy::Hierarchy;
use crate::reconcile::{reconcile, ForecastSet, MethodInputs, MethodSpec, ReconciliationResult};

/// Forecasts below `-NEGATIVITY_TOL` count as negative.
pub const NEGATIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    /// A numerical failure confined to this cell.
    Failed(String),
}

/// One (origin, method) cell of the experiment.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub origin: usize,
    pub method: String,
    pub status: RunStatus,
    pub result: Option<ReconciliationResult>,
    pub wall_time: Duration,
    /// Bottom forecasts below `-NEGATIVITY_TOL`, over all horizons.
    pub negative_count: usize,
    /// Smallest bottom forecast (NaN for a failed cell).
    pub min_bottom: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Origin-major, methods in [`ExperimentConfig::approaches`] order.
    pub records: Vec<RunRecord>,
    pub tensor: ErrorTensor,
    pub report: AccuracyReport,
}

impl ExperimentOutput {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.status != RunStatus::Ok)
    }
}

/// Bottom forecasts below `-NEGATIVITY_TOL`.
pub fn count_negative(fs: &ForecastSet, h: &Hierarchy) -> usize {
    fs.values
        .rows(h.n_a(), h.n_b())
        .iter()
        .filter(|&&v| v < -NEGATIVITY_TOL)
        .count()
}

struct OriginData {
    origin: usize,
    base: ForecastSet,
    sa: ForecastSet,
    history: Vec<Vec<f64>>,
    residuals: DMatrix<f64>,
}

fn origin_data(
    cfg: &ExperimentConfig,
    h: &Hierarchy,
    data: &DMatrix<f64>,
    store: Option<&ForecastStore>,
    residuals: Option<&ResidualStore>,
    t: usize,
) -> Result<OriginData> {
    let w = cfg.window_length;
    let window = data.rows(t - w, w).clone_owned();
    let history: Vec<Vec<f64>> = window.column_iter().map(|c| c.iter().copied().collect()).collect();
    let sa_rows = history
        .iter()
        .map(|x| seasonal_average_forecast(x, cfg.seasonal_period, cfg.horizons))
        .collect::<Result<Vec<_>>>()?;
    let sa = ForecastSet::from_rows(h, &sa_rows, t, "sa")?;
    let base = match store {
        None => ForecastSet { source: "base".into(), ..sa.clone() },
        Some(s) => {
            let f = s
                .get(&t)
                .ok_or_else(|| Error::Missing(format!("base forecasts for origin {t}")))?;
            if f.horizons() < cfg.horizons {
                return Err(Error::Missing(format!(
                    "base forecasts for origin {t} cover {} horizons, {} configured",
                    f.horizons(),
                    cfg.horizons
                )));
            }
            let values = f.values.columns(0, cfg.horizons).clone_owned();
            ForecastSet::new(h, values, t, "base")?
        }
    };
    let residuals = match residuals.map(|r| r.get(t)) {
        Some(Some(r)) => r.clone(),
        Some(None) => return Err(Error::Missing(format!("residuals for origin {t}"))),
        None => seasonal_deviations(&window, cfg.seasonal_period)?,
    };
    Ok(OriginData {
        origin: t,
        base,
        sa,
        history,
        residuals,
    })
}

fn run_cell(cfg: &ExperimentConfig, h: &Hierarchy, d: &OriginData, method: &MethodSpec) -> Result<RunRecord> {
    let mut inputs = MethodInputs::new(h, &d.base);
    inputs.sa = Some(&d.sa);
    inputs.history = Some(&d.history);
    inputs.residuals = Some(&d.residuals);
    inputs.seasonal_period = cfg.seasonal_period;
    inputs.seasonal_variance = cfg.seasonal_variance;
    inputs.var_floor = cfg.var_floor;
    inputs.nonneg = cfg.nonneg;
    let start = Instant::now();
    let out = reconcile(method, &inputs);
    let wall_time = start.elapsed();
    let key = method.to_string();
    match out {
        Ok(mut r) => {
            r.forecasts.origin = d.origin;
            Ok(RunRecord {
                origin: d.origin,
                method: key,
                status: RunStatus::Ok,
                negative_count: count_negative(&r.forecasts, h),
                min_bottom: r.min_bottom(h),
                result: Some(r),
                wall_time,
            })
        }
        Err(e) if e.is_numerical() => Ok(RunRecord {
            origin: d.origin,
            method: key,
            status: RunStatus::Failed(e.to_string()),
            result: None,
            wall_time,
            negative_count: 0,
            min_bottom: f64::NAN,
        }),
        Err(e) => Err(Error::InvalidArgument(format!("origin {}, method '{key}': {e}", d.origin))),
    }
}

/// Runs every configured method at every origin, then scores the
/// successful cells against the actuals in `data` (`T x n`).
///
/// Numerical failures are confined to their cell and reported in the
/// records; any other error aborts the run. Results do not depend on
/// `cfg.parallelism`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    h: &Hierarchy,
    data: &DMatrix<f64>,
    store: Option<&ForecastStore>,
    residuals: Option<&ResidualStore>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if data.ncols() != h.n() {
        return Err(Error::Dimension(format!(
            "observations have {} series, hierarchy has {}",
            data.ncols(),
            h.n()
        )));
    }
    let (first, last) = cfg.origin_range(data.nrows())?;
    let methods = cfg.approaches()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let records = pool.install(|| -> Result<Vec<RunRecord>> {
        let origins = (first..=last)
            .into_par_iter()
            .map(|t| origin_data(cfg, h, data, store, residuals, t))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let cells: Vec<(usize, usize)> = (0..origins.len())
            .flat_map(|o| (0..methods.len()).map(move |m| (o, m)))
            .collect();
        cells
            .into_par_iter()
            .map(|(o, m)| run_cell(cfg, h, &origins[o], &methods[m]))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    })?;
    let runs: Vec<(usize, String, ForecastSet)> = records
        .iter()
        .filter_map(|r| r.result.as_ref().map(|res| (r.origin, r.method.clone(), res.forecasts.clone())))
        .collect();
    let bench = methods[0].to_string();
    let tensor = build_error_tensor(data, h, &runs, &bench)?;
    let report = accuracy_report(&tensor, &cfg.metrics, &cfg.horizon_sets(), &cfg.groups, cfg.alpha)?;
    Ok(ExperimentOutput {
        records,
        tensor,
        report,
    })
}

fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("origin,method,status,negative_count,min_bottom\n");
    for r in records {
        let status = match &r.status {
            RunStatus::Ok => "ok".to_string(),
            RunStatus::Failed(m) => format!("\"failed: {}\"", m.replace('"', "'")),
        };
        out.push_str(&format!(
            "{},{},{status},{},{}\n",
            r.origin, r.method, r.negative_count, r.min_bottom
        ));
    }
    out
}

/// Writes `runs/<method>/origin_<t>.csv`, `runs.csv` (status and
/// negativity audit), `timings.csv`, `report.csv` and `report.txt` under
/// `out_dir`. Everything except `timings.csv` is deterministic.
pub fn persist_results(out_dir: impl AsRef<Path>, output: &ExperimentOutput) -> Result<()> {
    let out = out_dir.as_ref();
    for r in &output.records {
        if let Some(res) = &r.result {
            let path = out.join("runs").join(&r.method).join(format!("origin_{}.csv", r.origin));
            io::write_forecast_set(path, &res.forecasts)?;
        }
    }
    io::write_file(&out.join("runs.csv"), &records_csv(&output.records))?;
    let mut timings = String::from("origin,method,wall_time_s\n");
    for r in &output.records {
        timings.push_str(&format!("{},{},{}\n", r.origin, r.method, r.wall_time.as_secs_f64()));
    }
    io::write_file(&out.join("timings.csv"), &timings)?;
    io::write_file(&out.join("report.csv"), &output.report.to_csv())?;
    io::write_file(&out.join("report.txt"), &output.report.to_table())
}
