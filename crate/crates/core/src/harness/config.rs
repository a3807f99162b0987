//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{Group, HorizonSet, Metric};
use crate::reconcile::{MethodKind, MethodSpec};

/// Input and output locations. Relative paths in a config file resolve
/// against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub hierarchy: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    /// Directory of `origin_<t>.csv` files or a long-format file. Without
    /// it the seasonal-average forecasts serve as base forecasts.
    pub base_forecasts: Option<PathBuf>,
    /// One shared residual matrix or a directory of per-origin matrices.
    pub residuals: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub window_length: usize,
    pub horizons: usize,
    /// First origin, i.e. the index of the first forecast target. Defaults
    /// to `window_length`.
    #[serde(default)]
    pub first_origin: Option<usize>,
    /// Last origin. Defaults to the last observation, so horizon 1 always
    /// has an actual.
    #[serde(default)]
    pub last_origin: Option<usize>,
    pub seasonal_period: usize,
    pub methods: Vec<String>,
    #[serde(default)]
    pub nonneg: bool,
    #[serde(default = "default_benchmark")]
    pub benchmark: String,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Estimate variance weights per season rather than once per series.
    #[serde(default = "default_true")]
    pub seasonal_variance: bool,
    #[serde(default)]
    pub var_floor: Option<f64>,
    /// Defaults to every single horizon plus `1:H`.
    #[serde(default)]
    pub horizon_sets: Option<Vec<HorizonSet>>,
    #[serde(default = "default_groups")]
    pub groups: Vec<Group>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_benchmark() -> String {
    "base".into()
}

fn default_parallelism() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_groups() -> Vec<Group> {
    vec![Group::All, Group::Uts, Group::Bts]
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Mse, Metric::Mae]
}

fn default_alpha() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn new(window_length: usize, horizons: usize, seasonal_period: usize, methods: &[&str]) -> Self {
        Self {
            window_length,
            horizons,
            first_origin: None,
            last_origin: None,
            seasonal_period,
            methods: methods.iter().map(|m| m.to_string()).collect(),
            nonneg: false,
            benchmark: default_benchmark(),
            paths: Paths::default(),
            parallelism: default_parallelism(),
            seasonal_variance: true,
            var_floor: None,
            horizon_sets: None,
            groups: default_groups(),
            metrics: default_metrics(),
            alpha: default_alpha(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.hierarchy,
            &mut cfg.paths.observations,
            &mut cfg.paths.base_forecasts,
            &mut cfg.paths.residuals,
            &mut cfg.paths.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Parsed methods in run order: the benchmark first (added when not
    /// listed), then the configured methods without repeats.
    pub fn approaches(&self) -> Result<Vec<MethodSpec>> {
        let mut out: Vec<MethodSpec> = Vec::new();
        let bench: MethodSpec = self.benchmark.parse()?;
        out.push(bench);
        for key in &self.methods {
            let m: MethodSpec = key.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    pub fn horizon_sets(&self) -> Vec<HorizonSet> {
        match &self.horizon_sets {
            Some(v) => v.clone(),
            None => {
                let mut v: Vec<HorizonSet> = (1..=self.horizons)
                    .map(|h| h.to_string().parse().expect("positive horizon"))
                    .collect();
                if self.horizons > 1 {
                    v.push(format!("1:{}", self.horizons).parse().expect("valid range"));
                }
                v
            }
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.seasonal_period == 0 {
            return bad("seasonal_period must be at least 1".into());
        }
        if self.window_length < 2 * self.seasonal_period {
            return bad(format!(
                "window_length {} is shorter than two seasonal periods ({})",
                self.window_length,
                2 * self.seasonal_period
            ));
        }
        if self.horizons == 0 {
            return bad("horizons must be at least 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        if let Some(f) = self.var_floor {
            if !(f > 0.0 && f.is_finite()) {
                return bad(format!("var_floor {f} must be positive"));
            }
        }
        let approaches = self.approaches()?;
        if self.nonneg && approaches[1..].iter().all(|m| m.kind == MethodKind::Base) {
            return bad("nonneg set but only 'base' configured".into());
        }
        for hs in self.horizon_sets() {
            if let Some(&h) = hs.horizons.iter().find(|&&h| h > self.horizons) {
                return bad(format!("horizon set '{}' uses horizon {h} > {}", hs.label, self.horizons));
            }
        }
        Ok(())
    }

    /// First and last origin for `t_len` observations.
    pub fn origin_range(&self, t_len: usize) -> Result<(usize, usize)> {
        let first = self.first_origin.unwrap_or(self.window_length);
        let last = self.last_origin.unwrap_or(t_len.saturating_sub(1));
        if first < self.window_length {
            return Err(Error::InvalidArgument(format!(
                "first origin {first} leaves less than a full window of {} observations",
                self.window_length
            )));
        }
        if t_len == 0 || last >= t_len {
            return Err(Error::InvalidArgument(format!(
                "last origin {last} has no actual ({t_len} observations)"
            )));
        }
        if first > last {
            return Err(Error::InvalidArgument(format!(
                "no origins: first {first} > last {last} ({t_len} observations)"
            )));
        }
        Ok((first, last))
    }
}
