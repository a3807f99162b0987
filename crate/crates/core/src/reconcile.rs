//! Reconciliation methods: bottom-up, top-down with historical proportions,
//! level-conditional coherent reconciliation (exogenous and endogenous),
//! minimum-trace projections, and combinations of reconciled vectors.
//!
//! Every method works column by column: each horizon is an independent
//! problem with its own (optional) weighting.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::solver::{
    projection_matrix, solve_endogenous, solve_equality, solve_nonnegative, EqualitySystem,
    SolveDiagnostics, BOUND_TOL,
};
use crate::weights::{
    shrinkage_covariance, shrinkage_covariance_with_intensity, training_variance_weights,
    unit_weights, CombinationWeights, SeasonalVariances, WeightMatrix, Weighting,
};

/// Tolerance on the sum of combination weights `ω`.
pub const OMEGA_SUM_TOL: f64 = 1e-12;

/// An `n x H` block of forecasts for one origin, rows in hierarchy order.
///
/// Entries may be `NaN` to mark a missing forecast; methods fail with
/// [`Error::Missing`] only when they read such a row.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
    pub origin: usize,
    pub source: String,
}

impl ForecastSet {
    pub fn new(h: &Hierarchy, values: DMatrix<f64>, origin: usize, source: &str) -> Result<Self> {
        if values.nrows() != h.n() {
            return Err(Error::Dimension(format!(
                "forecast block has {} rows, hierarchy has {} series",
                values.nrows(),
                h.n()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::Dimension("forecast block has no horizons".into()));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidArgument("infinite forecast value".into()));
        }
        Ok(Self {
            values,
            labels: h.series_ids().into_iter().map(String::from).collect(),
            origin,
            source: source.to_string(),
        })
    }

    /// One row per series, one entry per horizon.
    pub fn from_rows(h: &Hierarchy, rows: &[Vec<f64>], origin: usize, source: &str) -> Result<Self> {
        let horizons = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != horizons) {
            return Err(Error::Dimension(format!(
                "row {i} has {} horizons, expected {horizons}",
                r.len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), horizons, |i, j| rows[i][j]);
        Self::new(h, values, origin, source)
    }

    /// Coherent set `S b` from bottom forecasts (`n_b x H`).
    pub fn from_bottom(h: &Hierarchy, bottom: &DMatrix<f64>, origin: usize, source: &str) -> Result<Self> {
        if bottom.nrows() != h.n_b() {
            return Err(Error::Dimension(format!(
                "bottom block has {} rows, hierarchy has {} bottom series",
                bottom.nrows(),
                h.n_b()
            )));
        }
        let s = h.s_matrix();
        Self::new(h, &*s * bottom, origin, source)
    }

    pub fn horizons(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    /// Bottom rows of horizon column `j`.
    pub fn bottom(&self, h: &Hierarchy, j: usize) -> DVector<f64> {
        self.values.view((h.n_a(), j), (h.n_b(), 1)).column(0).into_owned()
    }

    /// Level-`l` upper rows of horizon column `j`.
    pub fn level(&self, h: &Hierarchy, l: usize, j: usize) -> Result<DVector<f64>> {
        let r = h.level_range(l)?;
        Ok(self.values.view((r.start, j), (r.len(), 1)).column(0).into_owned())
    }

    /// Copy with the bottom rows taken from `other`.
    pub fn with_bottom_of(&self, h: &Hierarchy, other: &ForecastSet) -> Result<Self> {
        if other.values.shape() != self.values.shape() {
            return Err(Error::Dimension("forecast blocks differ in shape".into()));
        }
        let mut out = self.clone();
        let (n_a, n_b) = (h.n_a(), h.n_b());
        out.values
            .rows_mut(n_a, n_b)
            .copy_from(&other.values.rows(n_a, n_b));
        out.source = format!("{}+{}", self.source, other.source);
        Ok(out)
    }

    fn require_finite(&self, rows: std::ops::Range<usize>, what: &str) -> Result<()> {
        for i in rows {
            for j in 0..self.horizons() {
                if !self.values[(i, j)].is_finite() {
                    return Err(Error::Missing(format!(
                        "{what} forecast for '{}' at horizon {}",
                        self.labels[i],
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Output of a reconciliation method.
#[derive(Debug, Clone)]
pub struct ReconciliationResult {
    pub forecasts: ForecastSet,
    pub method: String,
    /// Coherence residual `max|a - C b|` per horizon.
    pub coherence: Vec<f64>,
    pub diagnostics: Vec<SolveDiagnostics>,
    pub nonneg: bool,
}

impl ReconciliationResult {
    fn from_bottom(
        h: &Hierarchy,
        bottom: DMatrix<f64>,
        origin: usize,
        method: &str,
        diagnostics: Vec<SolveDiagnostics>,
        nonneg: bool,
    ) -> Result<Self> {
        let forecasts = ForecastSet::from_bottom(h, &bottom, origin, method)?;
        Self::from_full(h, forecasts, method, diagnostics, nonneg)
    }

    fn from_full(
        h: &Hierarchy,
        forecasts: ForecastSet,
        method: &str,
        diagnostics: Vec<SolveDiagnostics>,
        nonneg: bool,
    ) -> Result<Self> {
        let coherence = (0..forecasts.horizons())
            .map(|j| h.coherence_residual(forecasts.column(j).as_slice()))
            .collect::<Result<_>>()?;
        Ok(Self {
            forecasts,
            method: method.to_string(),
            coherence,
            diagnostics,
            nonneg,
        })
    }

    /// Smallest bottom forecast over all horizons.
    pub fn min_bottom(&self, h: &Hierarchy) -> f64 {
        self.forecasts
            .values
            .rows(h.n_a(), h.n_b())
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_base(base: &ForecastSet, h: &Hierarchy) -> Result<()> {
    if base.values.nrows() != h.n() {
        return Err(Error::Dimension(format!(
            "forecast block has {} rows, hierarchy has {} series",
            base.values.nrows(),
            h.n()
        )));
    }
    Ok(())
}

fn check_dim(w: &WeightMatrix, expected: usize, what: &str) -> Result<()> {
    if w.dim() != expected {
        return Err(Error::Dimension(format!(
            "{what} weights have size {}, expected {expected}",
            w.dim()
        )));
    }
    Ok(())
}

/// Projects bottoms onto the non-negative orthant (no equality constraints).
fn clip_bottom(bottom: &mut DMatrix<f64>) {
    for v in bottom.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn bottom_block(base: &ForecastSet, h: &Hierarchy) -> DMatrix<f64> {
    base.values.rows(h.n_a(), h.n_b()).into_owned()
}

/// `S b̂`: upper base forecasts are ignored.
pub fn bottom_up(base: &ForecastSet, h: &Hierarchy) -> Result<ReconciliationResult> {
    check_base(base, h)?;
    base.require_finite(h.n_a()..h.n(), "bottom")?;
    let b = bottom_block(base, h);
    ReconciliationResult::from_bottom(h, b, base.origin, "bu", vec![SolveDiagnostics::default(); base.horizons()], false)
}

/// Bottom-up in non-negative mode: negative bottom forecasts are set to zero
/// (the closest non-negative bottoms under unit weights).
pub fn bottom_up_nonneg(base: &ForecastSet, h: &Hierarchy) -> Result<ReconciliationResult> {
    check_base(base, h)?;
    base.require_finite(h.n_a()..h.n(), "bottom")?;
    let mut b = bottom_block(base, h);
    clip_bottom(&mut b);
    ReconciliationResult::from_bottom(h, b, base.origin, "bu", vec![SolveDiagnostics::default(); base.horizons()], true)
}

/// Top-down with historical proportions computed as a ratio of averages
/// within each seasonal stratum: `p_i^s = mean_s(b_i) / mean_s(a_1)`.
///
/// `bottom_history` holds one training series per bottom series and
/// `total_history` the total over the same window.
pub fn top_down_hp(
    base: &ForecastSet,
    h: &Hierarchy,
    bottom_history: &[Vec<f64>],
    total_history: &[f64],
    seasonal_period: usize,
) -> Result<ReconciliationResult> {
    check_base(base, h)?;
    base.require_finite(0..1, "top-level")?;
    if bottom_history.len() != h.n_b() {
        return Err(Error::Dimension(format!(
            "{} bottom histories for {} bottom series",
            bottom_history.len(),
            h.n_b()
        )));
    }
    if seasonal_period == 0 {
        return Err(Error::InvalidArgument("seasonal period must be positive".into()));
    }
    let len = total_history.len();
    if let Some(i) = bottom_history.iter().position(|s| s.len() != len) {
        return Err(Error::Dimension(format!(
            "bottom history {i} has length {}, total has {len}",
            bottom_history[i].len()
        )));
    }
    let m = seasonal_period;
    let stratum_mean = |x: &[f64], s: usize| -> Option<f64> {
        let obs: Vec<f64> = x.iter().skip(s).step_by(m).copied().collect();
        (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64)
    };
    let mut shares = vec![vec![0.0; h.n_b()]; m];
    for (s, share) in shares.iter_mut().enumerate() {
        let total = stratum_mean(total_history, s)
            .ok_or_else(|| Error::InvalidArgument(format!("stratum {s} has no training observations")))?;
        if total == 0.0 {
            return Err(Error::Degenerate(format!("stratum {s} has zero average total")));
        }
        for (i, hist) in bottom_history.iter().enumerate() {
            share[i] = stratum_mean(hist, s).unwrap_or(0.0) / total;
        }
    }
    let horizons = base.horizons();
    let a1 = base.values.row(0);
    let b = DMatrix::from_fn(h.n_b(), horizons, |i, j| shares[(len + j) % m][i] * a1[j]);
    ReconciliationResult::from_bottom(h, b, base.origin, "td-hp", vec![SolveDiagnostics::default(); horizons], false)
}

fn exogenous(
    base: &ForecastSet,
    h: &Hierarchy,
    l: usize,
    wb: &Weighting,
    nonneg: bool,
) -> Result<ReconciliationResult> {
    check_base(base, h)?;
    let range = h.level_range(l)?;
    base.require_finite(range.clone(), "level")?;
    base.require_finite(h.n_a()..h.n(), "bottom")?;
    let c_l = h.level_matrix(l)?;
    let bounds: Vec<usize> = (0..h.n_b()).collect();
    let horizons = base.horizons();
    let mut bottom = DMatrix::zeros(h.n_b(), horizons);
    let mut diags = Vec::with_capacity(horizons);
    for j in 0..horizons {
        let w = wb.for_horizon(j)?;
        check_dim(w, h.n_b(), "bottom")?;
        let sys = EqualitySystem::new(c_l.clone(), base.level(h, l, j)?, w.clone(), base.bottom(h, j))?;
        let sol = if nonneg {
            solve_nonnegative(&sys, &bounds)?
        } else {
            solve_equality(&sys)?
        };
        bottom.set_column(j, &sol.x);
        diags.push(sol.diagnostics);
    }
    ReconciliationResult::from_bottom(h, bottom, base.origin, &format!("lcc-exo:{l}"), diags, nonneg)
}

/// Level-`l` conditional coherent reconciliation with the level-`l` base
/// forecasts held fixed: `b̃ = b̂ + W_b C_l' (C_l W_b C_l')⁻¹ (â_l - C_l b̂)`.
pub fn lcc_exogenous(base: &ForecastSet, h: &Hierarchy, l: usize, wb: &Weighting) -> Result<ReconciliationResult> {
    exogenous(base, h, l, wb, false)
}

/// [`lcc_exogenous`] with the bottom forecasts constrained non-negative.
pub fn lcc_exogenous_nonneg(
    base: &ForecastSet,
    h: &Hierarchy,
    l: usize,
    wb: &Weighting,
) -> Result<ReconciliationResult> {
    exogenous(base, h, l, wb, true)
}

/// Combination-weight form `b̃ = P_l â_l + (I - P_l C_l) b̂`.
pub fn lcc_exogenous_gl(base: &ForecastSet, h: &Hierarchy, p: &CombinationWeights) -> Result<ReconciliationResult> {
    check_base(base, h)?;
    let l = p.level();
    let range = h.level_range(l)?;
    if p.blocks().len() != range.len() || p.bottom_weights().len() != h.n_b() {
        return Err(Error::Dimension(format!(
            "combination weights do not match level {l} of the hierarchy"
        )));
    }
    base.require_finite(range, "level")?;
    base.require_finite(h.n_a()..h.n(), "bottom")?;
    let members: Vec<Vec<usize>> = h
        .elementary_hierarchies(l)?
        .into_iter()
        .map(|e| e.bottom_indices)
        .collect();
    let horizons = base.horizons();
    let mut bottom = bottom_block(base, h);
    let mut diags = Vec::with_capacity(horizons);
    for j in 0..horizons {
        let a = base.level(h, l, j)?;
        let mut worst: f64 = 0.0;
        for (k, (block, m)) in p.blocks().iter().zip(&members).enumerate() {
            let gap = a[k] - m.iter().map(|&b| base.values[(h.n_a() + b, j)]).sum::<f64>();
            for (&w, &b) in block.iter().zip(m) {
                bottom[(b, j)] += w * gap;
            }
            let agg: f64 = m.iter().map(|&b| bottom[(b, j)]).sum();
            worst = worst.max((agg - a[k]).abs());
        }
        diags.push(SolveDiagnostics {
            kkt_residual: worst,
            iterations: 1,
            ..Default::default()
        });
    }
    ReconciliationResult::from_bottom(h, bottom, base.origin, &format!("lcc-exo:{l}"), diags, false)
}

/// Augmented matrix `A_l = [0, C_l; P_l, I]` mapping `(ã_l, b̃)` back to
/// `(C_l b̃, P_l ã_l + b̃)`. Exposed for validating the closed-form inverse.
pub fn augmented_matrix(h: &Hierarchy, p: &CombinationWeights) -> Result<DMatrix<f64>> {
    let c = h.level_matrix(p.level())?;
    let (n_l, n_b) = c.shape();
    let mut a = DMatrix::zeros(n_l + n_b, n_l + n_b);
    a.view_mut((0, n_l), (n_l, n_b)).copy_from(&c);
    a.view_mut((n_l, 0), (n_b, n_l)).copy_from(&p.matrix());
    a.view_mut((n_l, n_l), (n_b, n_b)).fill_with_identity();
    Ok(a)
}

/// Closed-form inverse `[-I, C_l; P_l, I - P_l C_l]` of [`augmented_matrix`].
pub fn augmented_inverse(h: &Hierarchy, p: &CombinationWeights) -> Result<DMatrix<f64>> {
    let c = h.level_matrix(p.level())?;
    let pm = p.matrix();
    let (n_l, n_b) = c.shape();
    let mut inv = DMatrix::zeros(n_l + n_b, n_l + n_b);
    inv.view_mut((0, 0), (n_l, n_l)).fill_with_identity();
    inv.view_mut((0, 0), (n_l, n_l)).neg_mut();
    inv.view_mut((0, n_l), (n_l, n_b)).copy_from(&c);
    inv.view_mut((n_l, 0), (n_b, n_l)).copy_from(&pm);
    let lower = DMatrix::identity(n_b, n_b) - &pm * &c;
    inv.view_mut((n_l, n_l), (n_b, n_b)).copy_from(&lower);
    Ok(inv)
}

/// `G^{(l)}`: the bottom rows `[P_l, I - P_l C_l]` of the inverse, spread
/// over all `n` series (zero columns outside level `l` and the bottoms), so
/// that `b̃ = G^{(l)} ŷ`.
pub fn combination_map(h: &Hierarchy, p: &CombinationWeights) -> Result<DMatrix<f64>> {
    let inv = augmented_inverse(h, p)?;
    let range = h.level_range(p.level())?;
    let n_l = range.len();
    let mut g = DMatrix::zeros(h.n_b(), h.n());
    for (k, i) in range.enumerate() {
        g.column_mut(i).copy_from(&inv.view((n_l, k), (h.n_b(), 1)));
    }
    g.columns_mut(h.n_a(), h.n_b())
        .copy_from(&inv.view((n_l, n_l), (h.n_b(), h.n_b())));
    Ok(g)
}

fn endogenous(
    base: &ForecastSet,
    h: &Hierarchy,
    l: usize,
    wl: &Weighting,
    nonneg: bool,
) -> Result<ReconciliationResult> {
    check_base(base, h)?;
    let range = h.level_range(l)?;
    let n_l = range.len();
    base.require_finite(range.clone(), "level")?;
    base.require_finite(h.n_a()..h.n(), "bottom")?;
    let u = h.level_constraint_matrix(l)?;
    let bounds: Vec<usize> = (n_l..n_l + h.n_b()).collect();
    let horizons = base.horizons();
    let mut bottom = DMatrix::zeros(h.n_b(), horizons);
    let mut diags = Vec::with_capacity(horizons);
    for j in 0..horizons {
        let w = wl.for_horizon(j)?;
        check_dim(w, n_l + h.n_b(), "level")?;
        let mut yl = DVector::zeros(n_l + h.n_b());
        yl.rows_mut(0, n_l).copy_from(&base.level(h, l, j)?);
        yl.rows_mut(n_l, h.n_b()).copy_from(&base.bottom(h, j));
        let sol = if nonneg {
            let sys = EqualitySystem::new(u.clone(), DVector::zeros(n_l), w.clone(), yl)?;
            solve_nonnegative(&sys, &bounds)?
        } else {
            solve_endogenous(&yl, &u, w)?
        };
        bottom.set_column(j, &sol.x.rows(n_l, h.n_b()));
        diags.push(sol.diagnostics);
    }
    ReconciliationResult::from_bottom(h, bottom, base.origin, &format!("lcc-endo:{l}"), diags, nonneg)
}

/// Endogenous level-`l` reconciliation: level-`l` and bottom forecasts are
/// revised jointly by the projection `M_l ŷ_l`; `wl` has size `n_l + n_b`
/// (level-`l` series first).
pub fn lcc_endogenous(base: &ForecastSet, h: &Hierarchy, l: usize, wl: &Weighting) -> Result<ReconciliationResult> {
    endogenous(base, h, l, wl, false)
}

pub fn lcc_endogenous_nonneg(
    base: &ForecastSet,
    h: &Hierarchy,
    l: usize,
    wl: &Weighting,
) -> Result<ReconciliationResult> {
    endogenous(base, h, l, wl, true)
}

/// Diagonal `W_l` from per-series variances over all `n` series.
pub fn level_weights(h: &Hierarchy, l: usize, variances: &[f64]) -> Result<WeightMatrix> {
    if variances.len() != h.n() {
        return Err(Error::Dimension(format!(
            "{} variances for {} series",
            variances.len(),
            h.n()
        )));
    }
    let mut d: Vec<f64> = variances[h.level_range(l)?].to_vec();
    d.extend_from_slice(&variances[h.n_a()..]);
    WeightMatrix::diagonal(d)
}

fn min_trace(base: &ForecastSet, h: &Hierarchy, w: &Weighting, nonneg: bool, name: &str) -> Result<ReconciliationResult> {
    check_base(base, h)?;
    base.require_finite(0..h.n(), "base")?;
    let horizons = base.horizons();
    let (n_a, n_b) = (h.n_a(), h.n_b());
    let shared = match w {
        Weighting::Constant(w) => {
            check_dim(w, h.n(), "full")?;
            Some(projection_matrix(h, w)?)
        }
        Weighting::PerHorizon(_) => None,
    };
    let bounds: Vec<usize> = (n_a..n_a + n_b).collect();
    let mut u: Option<DMatrix<f64>> = None;
    let mut bottom = DMatrix::zeros(n_b, horizons);
    let mut diags = Vec::with_capacity(horizons);
    for j in 0..horizons {
        let wj = w.for_horizon(j)?;
        let local;
        let proj = match &shared {
            Some(p) => p,
            None => {
                check_dim(wj, h.n(), "full")?;
                local = projection_matrix(h, wj)?;
                &local
            }
        };
        let yhat = base.column(j);
        let mut b = &proj.g * &yhat;
        let mut diag = SolveDiagnostics {
            iterations: 1,
            ..Default::default()
        };
        if nonneg && b.iter().any(|&v| v < -BOUND_TOL) {
            let u = u.get_or_insert_with(|| h.constraint_matrix());
            let sys = EqualitySystem::new(u.clone(), DVector::zeros(n_a), wj.clone(), yhat.clone())?;
            let sol = solve_nonnegative(&sys, &bounds)?;
            b = sol.x.rows(n_a, n_b).into_owned();
            diag = sol.diagnostics;
        } else {
            let full = h.aggregate(b.as_slice());
            let d = DVector::from_vec(full) - &yhat;
            diag.objective = d.dot(&wj.solve_vec(&d)).max(0.0);
        }
        bottom.set_column(j, &b);
        diags.push(diag);
    }
    ReconciliationResult::from_bottom(h, bottom, base.origin, name, diags, nonneg)
}

/// Minimum-trace reconciliation `S (S'W⁻¹S)⁻¹ S'W⁻¹ ŷ` with `W` over all
/// series: identity gives OLS, a diagonal gives wls, a shrunk covariance shr.
pub fn mint(base: &ForecastSet, h: &Hierarchy, w: &Weighting) -> Result<ReconciliationResult> {
    min_trace(base, h, w, false, "mint")
}

/// [`mint`] with non-negative bottoms; the projection is used unchanged when
/// it already has no negative bottom.
pub fn mint_nonneg(base: &ForecastSet, h: &Hierarchy, w: &Weighting) -> Result<ReconciliationResult> {
    min_trace(base, h, w, true, "mint")
}

/// Convex combination `Σ ω_k ỹ_k` of reconciled results.
pub fn ccc_combine(h: &Hierarchy, members: &[&ReconciliationResult], omega: &[f64]) -> Result<ReconciliationResult> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("no members to combine".into()))?;
    if members.len() != omega.len() {
        return Err(Error::Dimension(format!(
            "{} members, {} weights",
            members.len(),
            omega.len()
        )));
    }
    if let Some(w) = omega.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::InvalidArgument(format!("combination weight {w} outside [0, 1]")));
    }
    let sum: f64 = omega.iter().sum();
    if (sum - 1.0).abs() > OMEGA_SUM_TOL {
        return Err(Error::InvalidArgument(format!("combination weights sum to {sum}")));
    }
    let shape = first.forecasts.values.shape();
    if let Some(m) = members.iter().find(|m| m.forecasts.values.shape() != shape) {
        return Err(Error::Dimension(format!(
            "member '{}' has shape {:?}, expected {:?}",
            m.method,
            m.forecasts.values.shape(),
            shape
        )));
    }
    let mut values = DMatrix::zeros(shape.0, shape.1);
    for (m, &w) in members.iter().zip(omega) {
        values += w * &m.forecasts.values;
    }
    let name = format!(
        "combine({})",
        members.iter().map(|m| m.method.as_str()).collect::<Vec<_>>().join(",")
    );
    let forecasts = ForecastSet::new(h, values, first.forecasts.origin, &name)?;
    let diags = (0..shape.1)
        .map(|j| SolveDiagnostics {
            kkt_residual: members
                .iter()
                .map(|m| m.diagnostics.get(j).map_or(0.0, |d| d.kkt_residual))
                .fold(0.0, f64::max),
            iterations: members.len(),
            ..Default::default()
        })
        .collect();
    let nonneg = members.iter().all(|m| m.nonneg);
    ReconciliationResult::from_full(h, forecasts, &name, diags, nonneg)
}

fn exogenous_members(base: &ForecastSet, h: &Hierarchy, wb: &Weighting, nonneg: bool) -> Result<Vec<ReconciliationResult>> {
    (1..=h.num_levels())
        .map(|l| exogenous(base, h, l, wb, nonneg))
        .collect()
}

fn equal_combine(h: &Hierarchy, members: &[ReconciliationResult], name: &str) -> Result<ReconciliationResult> {
    let refs: Vec<&ReconciliationResult> = members.iter().collect();
    let omega = vec![1.0 / members.len() as f64; members.len()];
    let mut out = ccc_combine(h, &refs, &omega)?;
    out.method = name.to_string();
    out.forecasts.source = name.to_string();
    Ok(out)
}

/// Average of the `L` exogenous level-conditional vectors.
pub fn lcc_average(base: &ForecastSet, h: &Hierarchy, wb: &Weighting, nonneg: bool) -> Result<ReconciliationResult> {
    let members = exogenous_members(base, h, wb, nonneg)?;
    equal_combine(h, &members, "lcc")
}

/// Average of the `L` exogenous vectors and bottom-up.
pub fn ccc(base: &ForecastSet, h: &Hierarchy, wb: &Weighting, nonneg: bool) -> Result<ReconciliationResult> {
    let mut members = exogenous_members(base, h, wb, nonneg)?;
    members.push(if nonneg {
        bottom_up_nonneg(base, h)?
    } else {
        bottom_up(base, h)?
    });
    equal_combine(h, &members, "ccc")
}

/// Pooled scheme: level-conditional members with external upper forecasts
/// and seasonal-average bottoms, plus bottom-up of the external bottoms.
pub fn ccc_hollyman(
    base_ets: &ForecastSet,
    base_sa: &ForecastSet,
    h: &Hierarchy,
    wb: &Weighting,
    nonneg: bool,
) -> Result<ReconciliationResult> {
    check_base(base_ets, h)?;
    check_base(base_sa, h)?;
    let hybrid = base_ets.with_bottom_of(h, base_sa)?;
    let mut members = exogenous_members(&hybrid, h, wb, nonneg)?;
    members.push(if nonneg {
        bottom_up_nonneg(base_ets, h)?
    } else {
        bottom_up(base_ets, h)?
    });
    equal_combine(h, &members, "ccc-h")
}

/// Elementwise mean of two reconciled results.
pub fn average_methods(h: &Hierarchy, a: &ReconciliationResult, b: &ReconciliationResult) -> Result<ReconciliationResult> {
    if a.forecasts.labels != b.forecasts.labels {
        return Err(Error::Dimension("results cover different series".into()));
    }
    let mut out = ccc_combine(h, &[a, b], &[0.5, 0.5])?;
    out.method = format!("avg:{}+{}", a.method, b.method);
    out.forecasts.source = out.method.clone();
    Ok(out)
}

/// A reconciliation method from the registry, e.g. `lcc-exo:2`, `wls@sa`
/// or `avg:wls+wls@sa`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSpec {
    pub kind: MethodKind,
    /// Use seasonal-average bottom base forecasts instead of the external ones.
    pub sa: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodKind {
    /// Unreconciled external base forecasts.
    Base,
    Bu,
    TdHp,
    Ols,
    Wls,
    Shr,
    LccExo(usize),
    LccEndo(usize),
    Lcc,
    Ccc,
    CccH,
    Avg(Box<MethodSpec>, Box<MethodSpec>),
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(key: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown method key '{key}'"));
        let key = key.trim();
        if let Some(rest) = key.strip_prefix("avg:") {
            let (a, b) = rest.split_once('+').ok_or_else(bad)?;
            return Ok(Self {
                kind: MethodKind::Avg(Box::new(a.parse()?), Box::new(b.parse()?)),
                sa: false,
            });
        }
        let (name, sa) = match key.strip_suffix("@sa") {
            Some(n) => (n, true),
            None => (key, false),
        };
        let level = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|&l| l >= 1)
                .ok_or_else(|| Error::InvalidArgument(format!("bad level in method key '{key}'")))
        };
        let kind = match name {
            "base" => MethodKind::Base,
            "bu" => MethodKind::Bu,
            "td-hp" => MethodKind::TdHp,
            "ols" => MethodKind::Ols,
            "wls" => MethodKind::Wls,
            "shr" => MethodKind::Shr,
            "lcc" => MethodKind::Lcc,
            "ccc" => MethodKind::Ccc,
            "ccc-h" => MethodKind::CccH,
            _ => {
                if let Some(l) = name.strip_prefix("lcc-exo:") {
                    MethodKind::LccExo(level(l)?)
                } else if let Some(l) = name.strip_prefix("lcc-endo:") {
                    MethodKind::LccEndo(level(l)?)
                } else {
                    return Err(bad());
                }
            }
        };
        if sa && matches!(kind, MethodKind::CccH | MethodKind::TdHp | MethodKind::Base) {
            return Err(Error::InvalidArgument(format!(
                "method '{name}' has no seasonal-average variant"
            )));
        }
        Ok(Self { kind, sa })
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MethodKind::Base => write!(f, "base")?,
            MethodKind::Bu => write!(f, "bu")?,
            MethodKind::TdHp => write!(f, "td-hp")?,
            MethodKind::Ols => write!(f, "ols")?,
            MethodKind::Wls => write!(f, "wls")?,
            MethodKind::Shr => write!(f, "shr")?,
            MethodKind::LccExo(l) => write!(f, "lcc-exo:{l}")?,
            MethodKind::LccEndo(l) => write!(f, "lcc-endo:{l}")?,
            MethodKind::Lcc => write!(f, "lcc")?,
            MethodKind::Ccc => write!(f, "ccc")?,
            MethodKind::CccH => write!(f, "ccc-h")?,
            MethodKind::Avg(a, b) => write!(f, "avg:{a}+{b}")?,
        }
        if self.sa {
            write!(f, "@sa")?;
        }
        Ok(())
    }
}

impl MethodSpec {
    /// Whether the method reads training histories, residuals or the
    /// seasonal-average forecasts.
    pub fn needs_sa(&self) -> bool {
        match &self.kind {
            MethodKind::CccH => true,
            MethodKind::Avg(a, b) => a.needs_sa() || b.needs_sa(),
            _ => self.sa,
        }
    }
}

/// Everything a registry method may need for one origin.
///
/// Without `history`, bottom and level weights default to unit weights;
/// `weights` overrides the weighting of whichever method is run and must
/// have that method's size (`n_b`, `n_l + n_b`, or `n`).
#[derive(Debug, Clone, Copy)]
pub struct MethodInputs<'a> {
    pub hierarchy: &'a Hierarchy,
    pub base: &'a ForecastSet,
    /// Seasonal-average base forecasts (all rows; only bottoms are read).
    pub sa: Option<&'a ForecastSet>,
    /// Training window of every series, hierarchy order.
    pub history: Option<&'a [Vec<f64>]>,
    /// In-sample residuals (`T x n`) for wls and shr.
    pub residuals: Option<&'a DMatrix<f64>>,
    pub weights: Option<&'a WeightMatrix>,
    pub seasonal_period: usize,
    pub seasonal_variance: bool,
    pub var_floor: Option<f64>,
    pub nonneg: bool,
}

impl<'a> MethodInputs<'a> {
    pub fn new(hierarchy: &'a Hierarchy, base: &'a ForecastSet) -> Self {
        Self {
            hierarchy,
            base,
            sa: None,
            history: None,
            residuals: None,
            weights: None,
            seasonal_period: 1,
            seasonal_variance: false,
            var_floor: None,
            nonneg: false,
        }
    }

    fn variances(&self) -> Result<Option<SeasonalVariances>> {
        self.history
            .map(|hist| {
                training_variance_weights(hist, self.seasonal_period, self.seasonal_variance, self.var_floor)
            })
            .transpose()
    }

    fn bottom_weighting(&self) -> Result<Weighting> {
        let h = self.hierarchy;
        if let Some(w) = self.weights {
            return Ok(Weighting::Constant(w.clone()));
        }
        match self.variances()? {
            None => Ok(unit_weights(h.n_b())?.into()),
            Some(v) => {
                let idx: Vec<usize> = (h.n_a()..h.n()).collect();
                per_horizon(&v, &idx, self.base.horizons())
            }
        }
    }

    fn level_weighting(&self, l: usize) -> Result<Weighting> {
        let h = self.hierarchy;
        if let Some(w) = self.weights {
            return Ok(Weighting::Constant(w.clone()));
        }
        let mut idx: Vec<usize> = h.level_range(l)?.collect();
        idx.extend(h.n_a()..h.n());
        match self.variances()? {
            None => Ok(unit_weights(idx.len())?.into()),
            Some(v) => per_horizon(&v, &idx, self.base.horizons()),
        }
    }

    fn full_weighting(&self, kind: &MethodKind) -> Result<Weighting> {
        if let Some(w) = self.weights {
            return Ok(Weighting::Constant(w.clone()));
        }
        let n = self.hierarchy.n();
        match kind {
            MethodKind::Ols => Ok(unit_weights(n)?.into()),
            _ => {
                let r = self
                    .residuals
                    .ok_or_else(|| Error::Missing(format!("in-sample residuals for {}", kind_name(kind))))?;
                if r.ncols() != n {
                    return Err(Error::Dimension(format!(
                        "residuals have {} columns, hierarchy has {n} series",
                        r.ncols()
                    )));
                }
                let w = if *kind == MethodKind::Wls {
                    shrinkage_covariance_with_intensity(r, 1.0)?
                } else {
                    shrinkage_covariance(r)?
                };
                Ok(w.into())
            }
        }
    }
}

fn kind_name(kind: &MethodKind) -> String {
    MethodSpec {
        kind: kind.clone(),
        sa: false,
    }
    .to_string()
}

fn per_horizon(v: &SeasonalVariances, idx: &[usize], horizons: usize) -> Result<Weighting> {
    let pick = |h: usize| -> Result<WeightMatrix> {
        let all = v.variances(h);
        WeightMatrix::diagonal(idx.iter().map(|&i| all[i]).collect())
    };
    if v.period() == 1 {
        return Ok(Weighting::Constant(pick(1)?));
    }
    Ok(Weighting::PerHorizon((1..=horizons).map(pick).collect::<Result<_>>()?))
}

/// Runs a registry method.
pub fn reconcile(method: &MethodSpec, inputs: &MethodInputs<'_>) -> Result<ReconciliationResult> {
    let h = inputs.hierarchy;
    let substituted;
    let base = if method.sa {
        let sa = inputs
            .sa
            .ok_or_else(|| Error::Missing("seasonal-average base forecasts".into()))?;
        substituted = inputs.base.with_bottom_of(h, sa)?;
        &substituted
    } else {
        inputs.base
    };
    let nonneg = inputs.nonneg;
    let mut out = match &method.kind {
        MethodKind::Base => {
            let diags = vec![SolveDiagnostics::default(); base.horizons()];
            ReconciliationResult::from_full(h, base.clone(), "base", diags, false)?
        }
        MethodKind::Bu if nonneg => bottom_up_nonneg(base, h)?,
        MethodKind::Bu => bottom_up(base, h)?,
        MethodKind::TdHp => {
            let hist = inputs
                .history
                .ok_or_else(|| Error::Missing("training history for td-hp".into()))?;
            let mut r = top_down_hp(base, h, &hist[h.n_a()..], &hist[0], inputs.seasonal_period)?;
            if nonneg && r.min_bottom(h) < 0.0 {
                let mut b = r.forecasts.values.rows(h.n_a(), h.n_b()).into_owned();
                clip_bottom(&mut b);
                r = ReconciliationResult::from_bottom(h, b, base.origin, "td-hp", r.diagnostics, true)?;
            }
            r.nonneg = nonneg;
            r
        }
        kind @ (MethodKind::Ols | MethodKind::Wls | MethodKind::Shr) => {
            let w = inputs.full_weighting(kind)?;
            min_trace(base, h, &w, nonneg, &kind_name(kind))?
        }
        MethodKind::LccExo(l) => exogenous(base, h, *l, &inputs.bottom_weighting()?, nonneg)?,
        MethodKind::LccEndo(l) => endogenous(base, h, *l, &inputs.level_weighting(*l)?, nonneg)?,
        MethodKind::Lcc => lcc_average(base, h, &inputs.bottom_weighting()?, nonneg)?,
        MethodKind::Ccc => ccc(base, h, &inputs.bottom_weighting()?, nonneg)?,
        MethodKind::CccH => {
            let sa = inputs
                .sa
                .ok_or_else(|| Error::Missing("seasonal-average base forecasts for ccc-h".into()))?;
            ccc_hollyman(base, sa, h, &inputs.bottom_weighting()?, nonneg)?
        }
        MethodKind::Avg(a, b) => {
            let ra = reconcile(a, inputs)?;
            let rb = reconcile(b, inputs)?;
            average_methods(h, &ra, &rb)?
        }
    };
    out.method = method.to_string();
    out.forecasts.source = out.method.clone();
    Ok(out)
}
