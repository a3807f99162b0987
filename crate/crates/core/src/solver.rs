//! Equality-constrained weighted least squares and its non-negative variant.
//!
//! Every problem has the form
//!
//! ```text
//! minimize (x - x̂)' W⁻¹ (x - x̂)   subject to   A x = t   [and x_i >= 0, i in I]
//! ```
//!
//! The equality solution is `x = x̂ + W A' (A W A')⁻¹ (t - A x̂)`, computed
//! through a Cholesky factorization of `A W A'`. Multipliers are reported
//! with the convention `∇f(x) = A'ν + μ` where `f` is the objective above
//! and `μ >= 0` are the bound multipliers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::linalg::{max_abs, spd_factor, symmetrize};
use crate::weights::WeightMatrix;

/// Bound violations up to this size are accepted as feasible.
pub const BOUND_TOL: f64 = 1e-10;

/// Equality-constrained problem `min (x - prior)' W⁻¹ (x - prior)` s.t. `A x = target`.
#[derive(Debug, Clone)]
pub struct EqualitySystem {
    pub a: DMatrix<f64>,
    pub target: DVector<f64>,
    pub w: WeightMatrix,
    pub prior: DVector<f64>,
}

impl EqualitySystem {
    pub fn new(
        a: DMatrix<f64>,
        target: DVector<f64>,
        w: WeightMatrix,
        prior: DVector<f64>,
    ) -> Result<Self> {
        let (m, k) = a.shape();
        if target.len() != m {
            return Err(Error::Dimension(format!(
                "constraint matrix has {m} rows, target has {}",
                target.len()
            )));
        }
        if prior.len() != k || w.dim() != k {
            return Err(Error::Dimension(format!(
                "constraint matrix has {k} columns, prior has {}, weights have {}",
                prior.len(),
                w.dim()
            )));
        }
        if m > k {
            return Err(Error::RankDeficient(format!("{m} constraints on {k} variables")));
        }
        if prior.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite forecast value".into()));
        }
        Ok(Self {
            a,
            target,
            w,
            prior,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.a.ncols()
    }

    /// `(x - prior)' W⁻¹ (x - prior)`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.prior;
        d.dot(&self.w.solve_vec(&d)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveDiagnostics {
    /// Largest of the stationarity, primal feasibility and complementary
    /// slackness residuals.
    pub kkt_residual: f64,
    pub active_set_size: usize,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Equality multipliers `ν`.
    pub multipliers: DVector<f64>,
    /// Variables held at zero, with their bound multipliers `μ_i >= 0`.
    pub active_bounds: Vec<(usize, f64)>,
    pub diagnostics: SolveDiagnostics,
}

/// Detailed KKT residuals of a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual: f64,
}

impl Solution {
    /// Recomputes the KKT residuals of this solution against `sys`, with
    /// bounds on `nonneg`.
    pub fn kkt(&self, sys: &EqualitySystem, nonneg: &[usize]) -> KktReport {
        let grad = 2.0 * sys.w.solve_vec(&(&self.x - &sys.prior));
        let mut rhs = sys.a.transpose() * &self.multipliers;
        for &(i, mu) in &self.active_bounds {
            rhs[i] += mu;
        }
        let stationarity = max_abs((grad - rhs).iter().copied());
        let eq = max_abs((&sys.a * &self.x - &sys.target).iter().copied());
        let bound = nonneg
            .iter()
            .map(|&i| (-self.x[i]).max(0.0))
            .fold(0.0, f64::max);
        let complementarity = max_abs(self.active_bounds.iter().map(|&(i, mu)| mu * self.x[i]));
        let dual = self
            .active_bounds
            .iter()
            .map(|&(_, mu)| (-mu).max(0.0))
            .fold(0.0, f64::max);
        KktReport {
            stationarity,
            primal: eq.max(bound),
            complementarity,
            dual,
        }
    }
}

/// Solves the equality system; errors with [`Error::RankDeficient`] when
/// `A W A'` cannot be factorized.
pub fn solve_equality(sys: &EqualitySystem) -> Result<Solution> {
    let wat = sys.w.mul_mat(&sys.a.transpose());
    let mut m = &sys.a * &wat;
    symmetrize(&mut m);
    let chol = spd_factor(&m).ok_or_else(|| {
        Error::RankDeficient(format!(
            "A W A' ({}x{}) is singular",
            m.nrows(),
            m.ncols()
        ))
    })?;
    let resid = &sys.target - &sys.a * &sys.prior;
    let mu = chol.solve(&resid);
    let x = &sys.prior + &wat * &mu;
    let multipliers = 2.0 * mu;
    let mut sol = Solution {
        x,
        multipliers,
        active_bounds: Vec::new(),
        diagnostics: SolveDiagnostics {
            iterations: 1,
            ..Default::default()
        },
    };
    let kkt = sol.kkt(sys, &[]);
    sol.diagnostics.kkt_residual = kkt.stationarity.max(kkt.primal);
    sol.diagnostics.objective = sys.objective(&sol.x);
    Ok(sol)
}

/// Projection `M ŷ` with `M = I - W U' (U W U')⁻¹ U`, i.e. the equality
/// solution with zero target. `u` is `[I | -C]` for the subsystem.
pub fn solve_endogenous(yhat: &DVector<f64>, u: &DMatrix<f64>, w: &WeightMatrix) -> Result<Solution> {
    if u.ncols() != yhat.len() || w.dim() != yhat.len() {
        return Err(Error::Dimension(format!(
            "constraints have {} columns, forecasts {} entries, weights size {}",
            u.ncols(),
            yhat.len(),
            w.dim()
        )));
    }
    let sys = EqualitySystem::new(u.clone(), DVector::zeros(u.nrows()), w.clone(), yhat.clone())?;
    solve_equality(&sys)
}

/// Equality solve with additional bounds `x_i >= 0` for `i` in `nonneg`.
///
/// Dual active-set method (Goldfarb–Idnani) started from the equality
/// solution: violated bounds are added lowest index first, blocking bounds
/// dropped, and the final active set is re-solved as an equality system.
/// When the equality solution is already feasible it is returned unchanged.
pub fn solve_nonnegative(sys: &EqualitySystem, nonneg: &[usize]) -> Result<Solution> {
    let k = sys.num_vars();
    if let Some(&i) = nonneg.iter().find(|&&i| i >= k) {
        return Err(Error::Dimension(format!("bound index {i} out of range for {k} variables")));
    }
    let mut bounded: Vec<usize> = nonneg.to_vec();
    bounded.sort_unstable();
    bounded.dedup();

    let base = solve_equality(sys)?;
    if bounded.iter().all(|&i| base.x[i] >= -BOUND_TOL) {
        let mut sol = base;
        let kkt = sol.kkt(sys, &bounded);
        sol.diagnostics.kkt_residual = kkt.stationarity.max(kkt.primal);
        return Ok(sol);
    }

    let m = sys.a.nrows();
    let cap = 50 * k;
    let mut x = base.x.clone();
    // Active bounds and their multipliers in the ½-scaled problem.
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    'outer: while let Some(p) = bounded.iter().copied().find(|&i| x[i] < -BOUND_TOL) {
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > cap {
                return Err(Error::NonConvergence(cap));
            }
            // N = [A' | e_active]; W-metric projections of e_p.
            let q = m + active.len();
            let mut n_mat = DMatrix::zeros(k, q);
            n_mat.columns_mut(0, m).copy_from(&sys.a.transpose());
            for (c, &i) in active.iter().enumerate() {
                n_mat[(i, m + c)] = 1.0;
            }
            let wn = sys.w.mul_mat(&n_mat);
            let mut ntwn = n_mat.transpose() * &wn;
            symmetrize(&mut ntwn);
            let chol = spd_factor(&ntwn)
                .ok_or_else(|| Error::RankDeficient("active constraint set is degenerate".into()))?;
            let wnp = wn.row(p).transpose(); // (N'W e_p) since W symmetric
            let mut e_p = DVector::zeros(k);
            e_p[p] = 1.0;
            let w_ep = sys.w.mul_vec(&e_p);
            let r = chol.solve(&wnp);
            let z = &w_ep - &wn * &r;
            let curv = z[p];

            // Partial step: largest move keeping active bound multipliers >= 0.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (c, &uj) in u.iter().enumerate() {
                let rj = r[m + c];
                if rj > 1e-14 {
                    let t = uj / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(c);
                    }
                }
            }
            let degenerate = curv <= 1e-12 * w_ep[p];
            if degenerate {
                let Some(c) = drop else {
                    return Err(Error::Infeasible(format!(
                        "bound on variable {p} cannot be satisfied together with the equality constraints"
                    )));
                };
                for (j, uj) in u.iter_mut().enumerate() {
                    *uj -= t1 * r[m + j];
                }
                u_p += t1;
                active.remove(c);
                u.remove(c);
                continue;
            }
            let t2 = -x[p] / curv;
            let t = t1.min(t2);
            x += t * &z;
            for (j, uj) in u.iter_mut().enumerate() {
                *uj -= t * r[m + j];
            }
            u_p += t;
            if t2 <= t1 {
                x[p] = 0.0;
                active.push(p);
                u.push(u_p);
                continue 'outer;
            }
            let c = drop.expect("partial step has a blocking constraint");
            active.remove(c);
            u.remove(c);
        }
    }

    polish(sys, &bounded, active, iterations)
}

/// Re-solves with the active bounds as equalities and recovers multipliers.
fn polish(
    sys: &EqualitySystem,
    bounded: &[usize],
    mut active: Vec<usize>,
    iterations: usize,
) -> Result<Solution> {
    active.sort_unstable();
    let (m, k) = sys.a.shape();
    let q = m + active.len();
    let mut a = DMatrix::zeros(q, k);
    a.rows_mut(0, m).copy_from(&sys.a);
    for (c, &i) in active.iter().enumerate() {
        a[(m + c, i)] = 1.0;
    }
    let mut target = DVector::zeros(q);
    target.rows_mut(0, m).copy_from(&sys.target);
    let aug = EqualitySystem {
        a,
        target,
        w: sys.w.clone(),
        prior: sys.prior.clone(),
    };
    let inner = solve_equality(&aug)?;
    let mut x = inner.x;
    for &i in &active {
        x[i] = 0.0;
    }
    let mut sol = Solution {
        x,
        multipliers: inner.multipliers.rows(0, m).into_owned(),
        active_bounds: active
            .iter()
            .enumerate()
            .map(|(c, &i)| (i, inner.multipliers[m + c]))
            .collect(),
        diagnostics: SolveDiagnostics {
            active_set_size: active.len(),
            iterations,
            ..Default::default()
        },
    };
    let kkt = sol.kkt(sys, bounded);
    sol.diagnostics.kkt_residual = kkt
        .stationarity
        .max(kkt.primal)
        .max(kkt.complementarity)
        .max(kkt.dual);
    sol.diagnostics.objective = sys.objective(&sol.x);
    Ok(sol)
}

/// MinT-type projection for weights `W` over all `n` series.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `G = (S'W⁻¹S)⁻¹ S'W⁻¹` (n_b x n): base forecasts to reconciled bottoms.
    pub g: DMatrix<f64>,
    /// `S G` (n x n): base forecasts to the full reconciled vector.
    pub full: DMatrix<f64>,
}

pub fn projection_matrix(h: &Hierarchy, w: &WeightMatrix) -> Result<Projection> {
    if w.dim() != h.n() {
        return Err(Error::Dimension(format!(
            "weight matrix of size {} for {} series",
            w.dim(),
            h.n()
        )));
    }
    let s = h.s_matrix();
    let wis = w.solve_mat(&s);
    let mut sws = s.transpose() * &wis;
    symmetrize(&mut sws);
    let chol = spd_factor(&sws)
        .ok_or_else(|| Error::NotPositiveDefinite("S' W⁻¹ S is singular".into()))?;
    let g = chol.solve(&wis.transpose());
    let full = &*s * &g;
    Ok(Projection { g, full })
}
