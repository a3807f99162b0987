//! Accuracy measurement: forecast errors, MSE / MAE, relative accuracy
//! indices (geometric means of ratios against a benchmark), and the
//! Friedman and MCB-Nemenyi rank tests.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, SeriesKind};
use crate::reconcile::ForecastSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Mae,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "MSE",
            Metric::Mae => "MAE",
        }
    }

    fn of(self, errors: &[f64]) -> Result<f64> {
        match self {
            Metric::Mse => mse(errors),
            Metric::Mae => mae(errors),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(Metric::Mse),
            "mae" => Ok(Metric::Mae),
            other => Err(Error::InvalidArgument(format!("unknown metric '{other}'"))),
        }
    }
}

/// Mean squared error over forecast origins.
pub fn mse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no forecast origins".into()));
    }
    Ok(errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64)
}

/// Mean absolute error over forecast origins.
pub fn mae(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no forecast origins".into()));
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

/// A set of horizons evaluated together, e.g. `3` or `1:6`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HorizonSet {
    pub label: String,
    pub horizons: Vec<usize>,
}

impl FromStr for HorizonSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("bad horizon set '{s}'"));
        let num = |x: &str| x.trim().parse::<usize>().ok().filter(|&h| h >= 1).ok_or_else(bad);
        let horizons = match s.split_once(':') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(bad());
                }
                (a..=b).collect()
            }
            None => vec![num(s)?],
        };
        Ok(Self {
            label: s.to_string(),
            horizons,
        })
    }
}

impl TryFrom<String> for HorizonSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HorizonSet> for String {
    fn from(h: HorizonSet) -> String {
        h.label
    }
}

/// Parses a comma-separated list such as `1,2,3,1:6`.
pub fn parse_horizon_sets(s: &str) -> Result<Vec<HorizonSet>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

/// Series filter. Duplicates are excluded from every group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    All,
    Uts,
    Bts,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Uts => "uts",
            Group::Bts => "bts",
        }
    }

    fn admits(self, kind: SeriesKind) -> bool {
        match (self, kind) {
            (_, SeriesKind::Duplicate) => false,
            (Group::All, _) => true,
            (Group::Uts, SeriesKind::Upper) => true,
            (Group::Bts, SeriesKind::Bottom) => true,
            _ => false,
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Group::All),
            "uts" => Ok(Group::Uts),
            "bts" => Ok(Group::Bts),
            other => Err(Error::InvalidArgument(format!("unknown series group '{other}'"))),
        }
    }
}

pub fn parse_groups(s: &str) -> Result<Vec<Group>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

/// Forecast errors `e = y - ŷ` by approach, series, horizon and origin.
#[derive(Debug, Clone)]
pub struct ErrorTensor {
    approaches: Vec<String>,
    series: Vec<String>,
    kinds: Vec<SeriesKind>,
    horizons: usize,
    benchmark: usize,
    /// `errors[j][i][h]`, origins in ascending order.
    errors: Vec<Vec<Vec<Vec<f64>>>>,
    origins: Vec<Vec<BTreeSet<usize>>>,
}

impl ErrorTensor {
    pub fn new(
        approaches: Vec<String>,
        series: Vec<String>,
        kinds: Vec<SeriesKind>,
        horizons: usize,
        benchmark: &str,
    ) -> Result<Self> {
        let benchmark = approaches
            .iter()
            .position(|a| a == benchmark)
            .ok_or_else(|| Error::Missing(format!("benchmark approach '{benchmark}'")))?;
        if kinds.len() != series.len() {
            return Err(Error::Dimension("series kinds and ids differ in length".into()));
        }
        let empty = vec![vec![Vec::new(); horizons]; series.len()];
        Ok(Self {
            errors: vec![empty; approaches.len()],
            origins: vec![vec![BTreeSet::new(); horizons]; approaches.len()],
            approaches,
            series,
            kinds,
            horizons,
            benchmark,
        })
    }

    /// Records the error column of approach `j` at `origin` for horizon `h` (0-based).
    fn push(&mut self, j: usize, origin: usize, h: usize, errors: impl Iterator<Item = f64>) {
        for (i, e) in errors.enumerate() {
            self.errors[j][i][h].push(e);
        }
        self.origins[j][h].insert(origin);
    }

    pub fn approaches(&self) -> &[String] {
        &self.approaches
    }

    pub fn benchmark(&self) -> &str {
        &self.approaches[self.benchmark]
    }

    pub fn series(&self) -> &[String] {
        &self.series
    }

    pub fn kinds(&self) -> &[SeriesKind] {
        &self.kinds
    }

    pub fn horizons(&self) -> usize {
        self.horizons
    }

    /// Errors of approach `j`, series `i`, horizon `h` (1-based).
    pub fn errors(&self, j: usize, i: usize, h: usize) -> &[f64] {
        &self.errors[j][i][h - 1]
    }

    /// Number of benchmark origins evaluated at horizon `h` (1-based).
    pub fn q(&self, h: usize) -> usize {
        self.origins[self.benchmark][h - 1].len()
    }

    pub fn q_all(&self) -> Vec<usize> {
        (1..=self.horizons).map(|h| self.q(h)).collect()
    }

    /// Multiplies the errors of series `i` by `c` (all approaches).
    pub fn scale_series(&mut self, i: usize, c: f64) {
        for per_app in &mut self.errors {
            for cell in &mut per_app[i] {
                for e in cell.iter_mut() {
                    *e *= c;
                }
            }
        }
    }

    fn cells(&self, hs: &HorizonSet, group: Group) -> Result<Vec<(usize, usize)>> {
        if let Some(&h) = hs.horizons.iter().find(|&&h| h > self.horizons) {
            return Err(Error::InvalidArgument(format!(
                "horizon {h} beyond the {} evaluated",
                self.horizons
            )));
        }
        let mut cells = Vec::new();
        for (i, &kind) in self.kinds.iter().enumerate() {
            if group.admits(kind) {
                for &h in &hs.horizons {
                    cells.push((i, h));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "group '{}' has no series",
                group.name()
            )));
        }
        Ok(cells)
    }

    /// `instances x approaches` matrix of per-cell metric values.
    pub fn score_matrix(&self, metric: Metric, hs: &HorizonSet, group: Group) -> Result<DMatrix<f64>> {
        let cells = self.cells(hs, group)?;
        let mut out = DMatrix::zeros(cells.len(), self.approaches.len());
        for (r, &(i, h)) in cells.iter().enumerate() {
            for j in 0..self.approaches.len() {
                out[(r, j)] = metric.of(self.errors(j, i, h)).map_err(|_| {
                    Error::Missing(format!(
                        "no errors for approach '{}', series '{}', horizon {h}",
                        self.approaches[j], self.series[i]
                    ))
                })?;
            }
        }
        Ok(out)
    }
}

/// Builds the tensor from forecasts keyed by `(origin, approach)`.
///
/// `actuals` is `T x n` in hierarchy order. Origin `t` forecasts target
/// observation `t + h - 1` for horizon `h`; cells past the end of the data
/// are dropped.
pub fn build_error_tensor(
    actuals: &DMatrix<f64>,
    h: &Hierarchy,
    runs: &[(usize, String, ForecastSet)],
    benchmark: &str,
) -> Result<ErrorTensor> {
    if actuals.ncols() != h.n() {
        return Err(Error::Dimension(format!(
            "actuals have {} series, hierarchy has {}",
            actuals.ncols(),
            h.n()
        )));
    }
    let mut approaches: Vec<String> = Vec::new();
    for (_, a, _) in runs {
        if !approaches.contains(a) {
            approaches.push(a.clone());
        }
    }
    let horizons = runs.iter().map(|(_, _, f)| f.horizons()).max().unwrap_or(0);
    let mut tensor = ErrorTensor::new(
        approaches.clone(),
        h.series_ids().into_iter().map(String::from).collect(),
        h.series_kinds().to_vec(),
        horizons,
        benchmark,
    )?;
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by_key(|&r| runs[r].0);
    for r in order {
        let (origin, approach, fc) = &runs[r];
        if fc.values.nrows() != h.n() {
            return Err(Error::Dimension(format!(
                "forecasts of '{approach}' at origin {origin} have {} rows",
                fc.values.nrows()
            )));
        }
        let j = approaches.iter().position(|a| a == approach).expect("collected above");
        for hz in 0..fc.horizons() {
            let target = origin + hz;
            if target >= actuals.nrows() {
                continue;
            }
            for i in 0..h.n() {
                let y = actuals[(target, i)];
                if !y.is_finite() {
                    return Err(Error::Missing(format!(
                        "actual for '{}' at observation {target}",
                        tensor.series[i]
                    )));
                }
                if !fc.values[(i, hz)].is_finite() {
                    return Err(Error::Missing(format!(
                        "forecast of '{approach}' for '{}' at origin {origin}, horizon {}",
                        tensor.series[i],
                        hz + 1
                    )));
                }
            }
            let col = (0..h.n()).map(|i| actuals[(target, i)] - fc.values[(i, hz)]);
            tensor.push(j, *origin, hz, col);
        }
    }
    Ok(tensor)
}

/// Geometric mean over the `(series, horizon)` cells of `metric_j / metric_benchmark`,
/// for every approach (in tensor order).
pub fn avg_rel_metric(
    t: &ErrorTensor,
    metric: Metric,
    hs: &HorizonSet,
    group: Group,
) -> Result<Vec<f64>> {
    let scores = t.score_matrix(metric, hs, group)?;
    let b = t.benchmark;
    let cells = t.cells(hs, group)?;
    for (r, &(i, h)) in cells.iter().enumerate() {
        if scores[(r, b)] == 0.0 {
            return Err(Error::Degenerate(format!(
                "benchmark {} is zero for series '{}', horizon {h}",
                metric.name(),
                t.series[i]
            )));
        }
    }
    let n = scores.nrows() as f64;
    Ok((0..scores.ncols())
        .map(|j| {
            let log_sum: f64 = (0..scores.nrows())
                .map(|r| (scores[(r, j)] / scores[(r, b)]).ln())
                .sum();
            (log_sum / n).exp()
        })
        .collect())
}

/// Percentage improvement over the benchmark, `(1 - v) * 100`.
pub fn percentage_improvement(v: f64) -> f64 {
    (1.0 - v) * 100.0
}

/// Ranks within one row (1 = smallest), ties get the average rank.
pub fn average_ranks(row: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; row.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && row[idx[end]] == row[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn mean_ranks(scores: &DMatrix<f64>) -> Result<Vec<f64>> {
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let (n, k) = scores.shape();
    let mut sums = vec![0.0; k];
    for r in 0..n {
        let row: Vec<f64> = scores.row(r).iter().copied().collect();
        for (s, rank) in sums.iter_mut().zip(average_ranks(&row)) {
            *s += rank;
        }
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Friedman {
    pub statistic: f64,
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
}

/// Friedman rank test on an `instances x approaches` score matrix
/// (lower score = better rank).
pub fn friedman_test(scores: &DMatrix<f64>) -> Result<Friedman> {
    let (n, k) = scores.shape();
    if k < 2 || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "Friedman test needs at least 2 instances and 2 approaches, got {n} x {k}"
        )));
    }
    let ranks = mean_ranks(scores)?;
    let (nf, kf) = (n as f64, k as f64);
    let centre = (kf + 1.0) / 2.0;
    let ss: f64 = ranks.iter().map(|r| (r - centre).powi(2)).sum();
    let statistic = 12.0 * nf / (kf * (kf + 1.0)) * ss;
    let p_value = if statistic <= 0.0 {
        1.0
    } else {
        ChiSquared::new(kf - 1.0)
            .expect("k >= 2")
            .sf(statistic)
    };
    Ok(Friedman {
        statistic,
        p_value,
        mean_ranks: ranks,
    })
}

const Q_ALPHAS: [f64; 3] = [0.01, 0.05, 0.10];

/// Upper quantiles of the studentized range with infinite degrees of
/// freedom, for k = 2..=20 groups.
const Q_TABLE: [[f64; 19]; 3] = [
    [
        3.642773, 4.120303, 4.402801, 4.602821, 4.757047, 4.882166, 4.987183, 5.077506, 5.156635,
        5.226963, 5.290196, 5.347592, 5.400105, 5.448476, 5.493291, 5.535020, 5.574047, 5.610690,
        5.645215,
    ],
    [
        2.771808, 3.314493, 3.633160, 3.857656, 4.030092, 4.169554, 4.286309, 4.386509, 4.474124,
        4.551864, 4.621655, 4.684920, 4.742732, 4.795924, 4.845154, 4.890951, 4.933745, 4.973892,
        5.011689,
    ],
    [
        2.326174, 2.902380, 3.240446, 3.478281, 3.660721, 3.808098, 3.931349, 4.037023, 4.129346,
        4.211200, 4.284635, 4.351158, 4.411913, 4.467782, 4.519464, 4.567519, 4.612403, 4.654494,
        4.694104,
    ],
];

/// Studentized-range quantile `q_{α,k}` (infinite df) from the embedded table.
pub fn studentized_range_quantile(alpha: f64, k: usize) -> Result<f64> {
    let a = Q_ALPHAS
        .iter()
        .position(|&x| (x - alpha).abs() < 1e-12)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("alpha {alpha} not tabulated (use 0.01, 0.05 or 0.10)"))
        })?;
    if !(2..=20).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "studentized range tabulated for 2..=20 approaches, got {k}"
        )));
    }
    Ok(Q_TABLE[a][k - 2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct McbResult {
    pub mean_ranks: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Interval overlaps the best approach's interval.
    pub best_equivalent: Vec<bool>,
    /// Nemenyi critical distance; intervals are `mean rank ± cd / 2`.
    pub critical_distance: f64,
    pub friedman_significant: bool,
}

/// Multiple comparison with the best via Nemenyi intervals.
pub fn mcb_nemenyi(scores: &DMatrix<f64>, alpha: f64) -> Result<McbResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let (n, k) = scores.shape();
    if n == 0 || k == 0 {
        return Err(Error::InvalidArgument("empty score matrix".into()));
    }
    let ranks = mean_ranks(scores)?;
    let (cd, significant) = if k == 1 {
        (0.0, false)
    } else {
        let q = studentized_range_quantile(alpha, k)?;
        let cd = q * ((k * (k + 1)) as f64 / (12.0 * n as f64)).sqrt();
        let sig = n >= 2 && friedman_test(scores)?.p_value < alpha;
        (cd, sig)
    };
    let best = ranks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(McbResult {
        lower: ranks.iter().map(|r| r - cd / 2.0).collect(),
        upper: ranks.iter().map(|r| r + cd / 2.0).collect(),
        best_equivalent: ranks.iter().map(|r| r - best <= cd).collect(),
        mean_ranks: ranks,
        critical_distance: cd,
        friedman_significant: significant,
    })
}

/// One value of the long-format report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub approach: String,
    pub metric: String,
    pub horizon_set: String,
    pub group: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub metric: Metric,
    pub horizon_set: String,
    pub group: String,
    pub friedman: Friedman,
    pub mcb: McbResult,
}

/// Relative accuracy indices and rank tests per
/// (approach, metric, horizon set, group).
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub approaches: Vec<String>,
    pub benchmark: String,
    pub rows: Vec<ReportRow>,
    pub tests: Vec<TestOutcome>,
}

pub fn accuracy_report(
    t: &ErrorTensor,
    metrics: &[Metric],
    horizon_sets: &[HorizonSet],
    groups: &[Group],
    alpha: f64,
) -> Result<AccuracyReport> {
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for &metric in metrics {
        for hs in horizon_sets {
            for &group in groups {
                let values = avg_rel_metric(t, metric, hs, group)?;
                for (a, v) in t.approaches.iter().zip(values) {
                    rows.push(ReportRow {
                        approach: a.clone(),
                        metric: format!("AvgRel{}", metric.name()),
                        horizon_set: hs.label.clone(),
                        group: group.name().to_string(),
                        value: v,
                    });
                }
                let scores = t.score_matrix(metric, hs, group)?;
                if scores.ncols() >= 2 && scores.nrows() >= 2 {
                    tests.push(TestOutcome {
                        metric,
                        horizon_set: hs.label.clone(),
                        group: group.name().to_string(),
                        friedman: friedman_test(&scores)?,
                        mcb: mcb_nemenyi(&scores, alpha)?,
                    });
                }
            }
        }
    }
    Ok(AccuracyReport {
        approaches: t.approaches.clone(),
        benchmark: t.benchmark().to_string(),
        rows,
        tests,
    })
}

impl AccuracyReport {
    pub fn value(&self, approach: &str, metric: Metric, horizon_set: &str, group: Group) -> Option<f64> {
        let m = format!("AvgRel{}", metric.name());
        self.rows
            .iter()
            .find(|r| {
                r.approach == approach && r.metric == m && r.horizon_set == horizon_set && r.group == group.name()
            })
            .map(|r| r.value)
    }

    /// Long format `approach,metric,horizon_set,group,value`, including the
    /// rank-test outcomes (Friedman rows use approach `*`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("approach,metric,horizon_set,group,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.approach, r.metric, r.horizon_set, r.group, r.value);
        }
        for t in &self.tests {
            let m = t.metric.name();
            let (hs, g) = (&t.horizon_set, &t.group);
            let _ = writeln!(out, "*,Friedman{m},{hs},{g},{}", t.friedman.statistic);
            let _ = writeln!(out, "*,FriedmanP{m},{hs},{g},{}", t.friedman.p_value);
            for (j, a) in self.approaches.iter().enumerate() {
                let _ = writeln!(out, "{a},MeanRank{m},{hs},{g},{}", t.mcb.mean_ranks[j]);
                let _ = writeln!(out, "{a},McbLower{m},{hs},{g},{}", t.mcb.lower[j]);
                let _ = writeln!(out, "{a},McbUpper{m},{hs},{g},{}", t.mcb.upper[j]);
                let _ = writeln!(out, "{a},McbBest{m},{hs},{g},{}", u8::from(t.mcb.best_equivalent[j]));
            }
        }
        out
    }

    /// Aligned text table: one block per (metric, group), approaches as
    /// rows, horizon sets as columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut blocks: Vec<(String, String)> = Vec::new();
        let mut sets: Vec<String> = Vec::new();
        for r in &self.rows {
            let key = (r.metric.clone(), r.group.clone());
            if !blocks.contains(&key) {
                blocks.push(key);
            }
            if !sets.contains(&r.horizon_set) {
                sets.push(r.horizon_set.clone());
            }
        }
        let width = self.approaches.iter().map(String::len).max().unwrap_or(8).max(8);
        for (metric, group) in &blocks {
            let _ = writeln!(out, "{metric} ({group} series), benchmark = {}", self.benchmark);
            let _ = write!(out, "{:<width$}", "approach");
            for s in &sets {
                let _ = write!(out, " {:>10}", format!("h={s}"));
            }
            out.push('\n');
            for a in &self.approaches {
                let _ = write!(out, "{a:<width$}");
                for s in &sets {
                    let v = self.rows.iter().find(|r| {
                        &r.approach == a && &r.metric == metric && &r.group == group && &r.horizon_set == s
                    });
                    match v {
                        Some(r) => {
                            let _ = write!(out, " {:>10.4}", r.value);
                        }
                        None => {
                            let _ = write!(out, " {:>10}", "-");
                        }
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        for t in &self.tests {
            let _ = writeln!(
                out,
                "{} h={} {}: Friedman {:.4} (p = {:.4}), MCB critical distance {:.4}",
                t.metric.name(),
                t.horizon_set,
                t.group,
                t.friedman.statistic,
                t.friedman.p_value,
                t.mcb.critical_distance
            );
        }
        out
    }
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}
