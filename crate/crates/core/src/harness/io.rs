//! CSV ingestion and persistence.
//!
//! Formats:
//! - series matrices (observations, residuals): header of series ids, one
//!   row per time point; an optional leading `t`/`time`/`date`/`period`
//!   column is ignored;
//! - forecast blocks: `series,h1,..,hH`, one row per series in hierarchy
//!   order; one file `origin_<t>.csv` per origin, or a long file with a
//!   leading `origin` column;
//! - weight tables: `series,variance` (diagonal) or a square matrix whose
//!   header lists the series ids.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! persisting and re-reading is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::reconcile::ForecastSet;
use crate::weights::WeightMatrix;

const TIME_COLUMNS: [&str; 4] = ["t", "time", "date", "period"];

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_num(cell: &str, what: impl Fn() -> String) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{}: '{cell}' is not a number", what())))?;
    if v.is_nan() {
        return Err(Error::Parse(format!("{}: NaN value", what())));
    }
    if v.is_infinite() {
        return Err(Error::Parse(format!("{}: infinite value", what())));
    }
    Ok(v)
}

fn records(text: &str, path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("{}: header: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

/// Checks that `ids` are exactly the hierarchy's series (or only its bottom
/// series) in hierarchy order. Returns true for the bottom-only case.
fn check_series_order(h: &Hierarchy, ids: &[String], path: &Path) -> Result<bool> {
    if let Some(id) = ids.iter().find(|id| h.index_of(id).is_none()) {
        return Err(Error::UnknownSeries(format!("{id} (in {})", path.display())));
    }
    let all = h.series_ids();
    if ids.iter().map(String::as_str).eq(all.iter().copied()) {
        return Ok(false);
    }
    if ids.iter().eq(h.bottom_ids().iter()) {
        return Ok(true);
    }
    Err(Error::Parse(format!(
        "{}: series are not in hierarchy order (expected {} series starting '{}')",
        path.display(),
        all.len(),
        all[0]
    )))
}

/// Reads a `T x n` series matrix. A file holding only the bottom series is
/// aggregated to all series.
pub fn read_series_matrix(path: impl AsRef<Path>, h: &Hierarchy) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let (header, rows) = records(&read_text(path)?, path)?;
    let skip = usize::from(
        header
            .first()
            .is_some_and(|c| TIME_COLUMNS.contains(&c.to_ascii_lowercase().as_str()) && h.index_of(c).is_none()),
    );
    let ids: Vec<String> = header[skip..].to_vec();
    let bottom_only = check_series_order(h, &ids, path)?;
    let mut m = DMatrix::zeros(rows.len(), ids.len());
    for (t, rec) in rows.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                t + 2,
                rec.len(),
                header.len()
            )));
        }
        for (i, cell) in rec.iter().skip(skip).enumerate() {
            m[(t, i)] = parse_num(cell, || format!("{}: row {}, series '{}'", path.display(), t + 2, ids[i]))?;
        }
    }
    if !bottom_only {
        return Ok(m);
    }
    let mut full = DMatrix::zeros(rows.len(), h.n());
    for t in 0..rows.len() {
        let b: Vec<f64> = m.row(t).iter().copied().collect();
        for (i, v) in h.aggregate(&b).into_iter().enumerate() {
            full[(t, i)] = v;
        }
    }
    Ok(full)
}

pub fn write_series_matrix(path: impl AsRef<Path>, h: &Hierarchy, m: &DMatrix<f64>) -> Result<()> {
    let mut out = h.series_ids().join(",");
    out.push('\n');
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

pub fn read_observations(path: impl AsRef<Path>, h: &Hierarchy) -> Result<DMatrix<f64>> {
    read_series_matrix(path, h)
}

fn forecast_rows(
    h: &Hierarchy,
    rows: &[&csv::StringRecord],
    first_value: usize,
    path: &Path,
) -> Result<DMatrix<f64>> {
    let ids: Vec<String> = rows.iter().map(|r| r[first_value - 1].to_string()).collect();
    if check_series_order(h, &ids, path)? {
        return Err(Error::Parse(format!(
            "{}: forecasts must cover every series, found bottom series only",
            path.display()
        )));
    }
    let horizons = rows.first().map_or(0, |r| r.len() - first_value);
    let mut values = DMatrix::zeros(rows.len(), horizons);
    for (i, rec) in rows.iter().enumerate() {
        if rec.len() != first_value + horizons {
            return Err(Error::Parse(format!(
                "{}: series '{}' has {} horizons, expected {horizons}",
                path.display(),
                ids[i],
                rec.len() - first_value
            )));
        }
        for (j, cell) in rec.iter().skip(first_value).enumerate() {
            values[(i, j)] = parse_num(cell, || {
                format!("{}: series '{}', horizon {}", path.display(), ids[i], j + 1)
            })?;
        }
    }
    Ok(values)
}

/// Reads one per-origin forecast file.
pub fn read_forecast_set(path: impl AsRef<Path>, h: &Hierarchy, origin: usize, source: &str) -> Result<ForecastSet> {
    let path = path.as_ref();
    let (_, rows) = records(&read_text(path)?, path)?;
    let refs: Vec<&csv::StringRecord> = rows.iter().collect();
    let values = forecast_rows(h, &refs, 1, path)?;
    ForecastSet::new(h, values, origin, source)
}

fn forecast_csv(fs: &ForecastSet, with_origin: bool) -> String {
    let mut out = String::new();
    if !with_origin {
        out.push_str("series");
        for j in 1..=fs.horizons() {
            out.push_str(&format!(",h{j}"));
        }
        out.push('\n');
    }
    for (i, id) in fs.labels.iter().enumerate() {
        if with_origin {
            out.push_str(&format!("{},", fs.origin));
        }
        out.push_str(id);
        for v in fs.values.row(i).iter() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_forecast_set(path: impl AsRef<Path>, fs: &ForecastSet) -> Result<()> {
    write_text(path.as_ref(), &forecast_csv(fs, false))
}

/// Base forecasts keyed by origin.
pub type ForecastStore = BTreeMap<usize, ForecastSet>;

fn origin_of(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("origin_")?.parse().ok()
}

fn origin_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "csv") {
            if let Some(t) = origin_of(&p) {
                out.push((t, p));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Reads base forecasts from a directory of `origin_<t>.csv` files or from
/// a long-format file `origin,series,h1,..,hH`.
pub fn read_forecast_store(path: impl AsRef<Path>, h: &Hierarchy, source: &str) -> Result<ForecastStore> {
    let path = path.as_ref();
    let mut store = ForecastStore::new();
    if path.is_dir() {
        for (t, p) in origin_files(path)? {
            store.insert(t, read_forecast_set(&p, h, t, source)?);
        }
        return Ok(store);
    }
    let (header, rows) = records(&read_text(path)?, path)?;
    if header.first().map(String::as_str) != Some("origin") {
        return Err(Error::Parse(format!(
            "{}: long-format forecasts need a leading 'origin' column",
            path.display()
        )));
    }
    let mut by_origin: BTreeMap<usize, Vec<&csv::StringRecord>> = BTreeMap::new();
    for (r, rec) in rows.iter().enumerate() {
        let t: usize = rec[0]
            .parse()
            .map_err(|_| Error::Parse(format!("{}: row {}: bad origin '{}'", path.display(), r + 2, &rec[0])))?;
        by_origin.entry(t).or_default().push(rec);
    }
    for (t, recs) in by_origin {
        let values = forecast_rows(h, &recs, 2, path)?;
        store.insert(t, ForecastSet::new(h, values, t, source)?);
    }
    Ok(store)
}

pub fn write_forecast_store_long(path: impl AsRef<Path>, store: &ForecastStore) -> Result<()> {
    let mut out = String::from("origin,series");
    let horizons = store.values().next().map_or(0, ForecastSet::horizons);
    for j in 1..=horizons {
        out.push_str(&format!(",h{j}"));
    }
    out.push('\n');
    for fs in store.values() {
        out.push_str(&forecast_csv(fs, true));
    }
    write_text(path.as_ref(), &out)
}

pub fn write_forecast_store_dir(dir: impl AsRef<Path>, store: &ForecastStore) -> Result<()> {
    for (t, fs) in store {
        write_forecast_set(dir.as_ref().join(format!("origin_{t}.csv")), fs)?;
    }
    Ok(())
}

/// In-sample residuals: a single matrix shared by all origins, or one
/// `origin_<t>.csv` matrix per origin.
#[derive(Debug, Clone)]
pub enum ResidualStore {
    Shared(DMatrix<f64>),
    PerOrigin(BTreeMap<usize, DMatrix<f64>>),
}

impl ResidualStore {
    pub fn read(path: impl AsRef<Path>, h: &Hierarchy) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            let mut map = BTreeMap::new();
            for (t, p) in origin_files(path)? {
                map.insert(t, read_series_matrix(&p, h)?);
            }
            Ok(Self::PerOrigin(map))
        } else {
            Ok(Self::Shared(read_series_matrix(path, h)?))
        }
    }

    pub fn get(&self, origin: usize) -> Option<&DMatrix<f64>> {
        match self {
            Self::Shared(m) => Some(m),
            Self::PerOrigin(map) => map.get(&origin),
        }
    }
}

/// Weights keyed by series id, from which method-specific matrices are cut.
#[derive(Debug, Clone)]
pub struct WeightTable {
    pub ids: Vec<String>,
    pub matrix: WeightMatrix,
}

impl WeightTable {
    /// Principal submatrix for `ids`, in that order.
    pub fn select(&self, ids: &[&str]) -> Result<WeightMatrix> {
        let idx = ids
            .iter()
            .map(|id| {
                self.ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::UnknownSeries(format!("{id} (missing from weights)")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.matrix.principal(&idx)
    }
}

pub fn read_weight_table(path: impl AsRef<Path>) -> Result<WeightTable> {
    let path = path.as_ref();
    let (header, rows) = records(&read_text(path)?, path)?;
    if header.len() == 2 && header[0] == "series" {
        let mut ids = Vec::new();
        let mut d = Vec::new();
        for (r, rec) in rows.iter().enumerate() {
            ids.push(rec[0].to_string());
            d.push(parse_num(&rec[1], || format!("{}: row {}, column '{}'", path.display(), r + 2, header[1]))?);
        }
        return Ok(WeightTable {
            ids,
            matrix: WeightMatrix::diagonal(d)?,
        });
    }
    let n = header.len();
    if rows.len() != n {
        return Err(Error::Parse(format!(
            "{}: full weight matrix has {} columns but {} rows",
            path.display(),
            n,
            rows.len()
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    for (r, rec) in rows.iter().enumerate() {
        for (c, cell) in rec.iter().enumerate() {
            m[(r, c)] = parse_num(cell, || format!("{}: row {}, column '{}'", path.display(), r + 2, header[c]))?;
        }
    }
    Ok(WeightTable {
        ids: header,
        matrix: WeightMatrix::full(m)?,
    })
}

/// Reads `series,proportion` rows into one weight per bottom series.
pub fn read_proportions(path: impl AsRef<Path>, h: &Hierarchy) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let (_, rows) = records(&read_text(path)?, path)?;
    let mut p = vec![f64::NAN; h.n_b()];
    for (r, rec) in rows.iter().enumerate() {
        let id = &rec[0];
        let i = h
            .index_of(id)
            .filter(|&i| i >= h.n_a())
            .ok_or_else(|| Error::UnknownSeries(format!("{id} (not a bottom series)")))?;
        p[i - h.n_a()] = parse_num(&rec[1], || format!("{}: row {}", path.display(), r + 2))?;
    }
    if let Some(b) = p.iter().position(|v| v.is_nan()) {
        return Err(Error::Missing(format!("proportion for '{}'", h.bottom_ids()[b])));
    }
    Ok(p)
}

/// Reads every `<runs_dir>/<approach>/origin_<t>.csv`. Approaches come back
/// sorted by name, origins ascending.
pub fn read_runs_dir(dir: impl AsRef<Path>, h: &Hierarchy) -> Result<Vec<(usize, String, ForecastSet)>> {
    let dir = dir.as_ref();
    let mut approaches = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                approaches.push((name.to_string(), p.clone()));
            }
        }
    }
    approaches.sort();
    let mut runs = Vec::new();
    for (name, p) in approaches {
        for (t, f) in origin_files(&p)? {
            runs.push((t, name.clone(), read_forecast_set(&f, h, t, &name)?));
        }
    }
    Ok(runs)
}

/// One stored forecast file read without a hierarchy: origin, approach,
/// series ids and values.
pub type RawRun = (usize, String, Vec<String>, DMatrix<f64>);

/// Like [`read_runs_dir`] but without a hierarchy: raw rows, for audits.
pub fn read_runs_raw(dir: impl AsRef<Path>) -> Result<Vec<RawRun>> {
    let dir = dir.as_ref();
    let mut approaches = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                approaches.push((name.to_string(), p.clone()));
            }
        }
    }
    approaches.sort();
    let mut out = Vec::new();
    for (name, p) in approaches {
        for (t, f) in origin_files(&p)? {
            let (_, rows) = records(&read_text(&f)?, &f)?;
            let ids: Vec<String> = rows.iter().map(|r| r[0].to_string()).collect();
            let horizons = rows.first().map_or(0, |r| r.len() - 1);
            let mut m = DMatrix::zeros(rows.len(), horizons);
            for (i, rec) in rows.iter().enumerate() {
                for (j, cell) in rec.iter().skip(1).enumerate() {
                    m[(i, j)] = parse_num(cell, || format!("{}: series '{}'", f.display(), ids[i]))?;
                }
            }
            out.push((t, name.clone(), ids, m));
        }
    }
    Ok(out)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}
