//! Acceptance suite: one PASS/FAIL line per primary criterion.

mod common;

use std::time::{Duration, Instant};

use common::*;
use hrecon::evaluate::{avg_rel_metric, build_error_tensor, friedman_test, mcb_nemenyi, Group, HorizonSet, Metric};
use hrecon::harness::{persist_results, run_experiment, ExperimentConfig, RunStatus};
use hrecon::hierarchy::{build_hierarchy, Hierarchy};
use hrecon::reconcile::*;
use hrecon::solver::{solve_equality, solve_nonnegative, EqualitySystem};
use hrecon::synthetic::{self, rng};
use hrecon::weights::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn diag(v: &[f64]) -> Weighting {
    WeightMatrix::diagonal(v.to_vec()).unwrap().into()
}

fn draws(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

fn random_spd(r: &mut ChaCha8Rng, n: usize) -> WeightMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(n, n) * (0.5 + n as f64 * 0.1);
    WeightMatrix::full((&m + m.transpose()) * 0.5).unwrap()
}

fn random_balanced(r: &mut ChaCha8Rng, max_levels: usize, max_bottom: usize) -> Hierarchy {
    let levels = r.gen_range(1..=max_levels);
    build_hierarchy(&synthetic::random_tree_spec(r, levels, 4, max_bottom)).unwrap()
}

/// Fig. 1, exogenous: the L1CC and L2CC scalar formulas.
fn toy_exogenous() -> Outcome {
    let h = fig1();
    let mut r = rng(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s2 = draws(&mut r, 5, 0.1, 10.0);
        let y = draws(&mut r, 8, -50.0, 50.0);
        let (t, x, yy, b) = (y[0], y[1], y[2], &y[3..]);
        let total: f64 = s2.iter().sum();
        let sum_b: f64 = b.iter().sum();
        let l1: Vec<f64> = (0..5).map(|i| b[i] + s2[i] / total * (t - sum_b)).collect();
        let sx = s2[0] + s2[1];
        let sy = s2[2] + s2[3] + s2[4];
        let l2: Vec<f64> = (0..5)
            .map(|i| {
                if i < 2 {
                    b[i] + s2[i] / sx * (x - b[0] - b[1])
                } else {
                    b[i] + s2[i] / sy * (yy - b[2] - b[3] - b[4])
                }
            })
            .collect();
        for (l, oracle) in [(1, l1), (2, l2)] {
            let out = lcc_exogenous(&single(&h, &y), &h, l, &diag(&s2)).unwrap();
            worst = worst.max(max_diff(&out.forecasts.row_slice_all()[3..], &oracle));
            worst = worst.max(max_diff(&out.forecasts.row_slice_all(), &h.aggregate(&oracle)));
        }
    }
    let secs = start.elapsed();
    check(
        worst <= 1e-10 && secs < Duration::from_secs(5),
        format!("max deviation {worst:.2e} over 1000 draws x 2 levels (tol 1e-10), {:.2}s (limit 5s)", secs.as_secs_f64()),
    )
}

trait AllRows {
    fn row_slice_all(&self) -> Vec<f64>;
}

impl AllRows for ForecastSet {
    fn row_slice_all(&self) -> Vec<f64> {
        self.column(0).iter().copied().collect()
    }
}

/// Endogenous: the three-series scalar formulas and the Fig. 1 l = 1, 2
/// combination formulas.
fn toy_endogenous() -> Outcome {
    let mut r = rng(202);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let h3 = three_series();
    let h5 = fig1();
    for _ in 0..1000 {
        // T = X + Y.
        let s = draws(&mut r, 3, 0.1, 10.0);
        let y = draws(&mut r, 3, -50.0, 50.0);
        let tot = s[0] + s[1] + s[2];
        let d = y[0] - y[1] - y[2];
        let oracle = [y[0] - s[0] / tot * d, y[1] + s[1] / tot * d, y[2] + s[2] / tot * d];
        let out = lcc_endogenous(&single(&h3, &y), &h3, 1, &diag(&s)).unwrap();
        worst = worst.max(max_diff(&out.forecasts.row_slice_all(), &oracle));

        // Fig. 1, l = 1: weights (T, A..E).
        let y = draws(&mut r, 8, -50.0, 50.0);
        let (t, x, yy, b) = (y[0], y[1], y[2], &y[3..]);
        let s1 = draws(&mut r, 6, 0.1, 10.0);
        let tot: f64 = s1.iter().sum();
        let rest = |i: usize| -> f64 { (0..5).filter(|&k| k != i).map(|k| b[k]).sum() };
        let b1: Vec<f64> = (0..5)
            .map(|i| (tot - s1[i + 1]) / tot * b[i] + s1[i + 1] / tot * (t - rest(i)))
            .collect();
        let t1 = (tot - s1[0]) / tot * t + s1[0] / tot * b.iter().sum::<f64>();
        let out = lcc_endogenous(&single(&h5, &y), &h5, 1, &diag(&s1)).unwrap();
        let got = out.forecasts.row_slice_all();
        worst = worst.max(max_diff(&got[3..], &b1)).max((got[0] - t1).abs());

        // Fig. 1, l = 2: weights (X, Y, A..E).
        let s2 = draws(&mut r, 7, 0.1, 10.0);
        let (vx, vy) = (s2[0], s2[1]);
        let (va, vb, vc, vd, ve) = (s2[2], s2[3], s2[4], s2[5], s2[6]);
        let dx = vx + va + vb;
        let dy = vy + vc + vd + ve;
        let (a_, b_, c_, d_, e_) = (b[0], b[1], b[2], b[3], b[4]);
        let x2 = (va + vb) / dx * x + vx / dx * (a_ + b_);
        let y2 = (vc + vd + ve) / dy * yy + vy / dy * (c_ + d_ + e_);
        let b2 = [
            (vx + vb) / dx * a_ + va / dx * (x - b_),
            (vx + va) / dx * b_ + vb / dx * (x - a_),
            (vy + vd + ve) / dy * c_ + vc / dy * (yy - d_ - e_),
            (vy + vc + ve) / dy * d_ + vd / dy * (yy - c_ - e_),
            (vy + vc + vd) / dy * e_ + ve / dy * (yy - c_ - d_),
        ];
        let out = lcc_endogenous(&single(&h5, &y), &h5, 2, &diag(&s2)).unwrap();
        let got = out.forecasts.row_slice_all();
        worst = worst
            .max(max_diff(&got[3..], &b2))
            .max((got[1] - x2).abs())
            .max((got[2] - y2).abs());
    }
    let secs = start.elapsed();
    check(
        worst <= 1e-10 && secs < Duration::from_secs(5),
        format!(
            "max deviation {worst:.2e} over 1000 draws x 3 systems (tol 1e-10), {:.2}s (limit 5s)",
            secs.as_secs_f64()
        ),
    )
}

/// Proportion weights as a diagonal covariance versus the combination form.
fn proportions_bridge() -> Outcome {
    let mut r = rng(303);
    let mut worst: f64 = 0.0;
    let mut systems = 0;
    let mut max_levels = 0;
    let mut max_nb = 0;
    for _ in 0..200 {
        let h = random_balanced(&mut r, 4, 40);
        max_levels = max_levels.max(h.num_levels());
        max_nb = max_nb.max(h.n_b());
        let base = synthetic::random_forecasts(&mut r, &h, 2, 0.0, 50.0);
        for l in 1..=h.num_levels() {
            let p = synthetic::random_proportions(&mut r, &h, l).unwrap();
            let a = lcc_exogenous(&base, &h, l, &weights_from_proportions(&p).unwrap().into()).unwrap();
            let b = lcc_exogenous_gl(&base, &h, &p).unwrap();
            worst = worst.max(mat_diff(&a.forecasts.values, &b.forecasts.values));
            // The solution is invariant to rescaling W_b; a scale away from 1
            // keeps C W_b C' off the identity.
            let c = r.gen_range(0.01..100.0);
            let scaled: Vec<f64> = p.bottom_weights().iter().map(|v| v * c).collect();
            let s = lcc_exogenous(&base, &h, l, &diag(&scaled)).unwrap();
            worst = worst.max(mat_diff(&s.forecasts.values, &b.forecasts.values));
            systems += 1;
        }
    }
    check(
        worst <= 1e-10,
        format!("max deviation {worst:.2e} on {systems} systems, L <= {max_levels}, n_b <= {max_nb} (tol 1e-10)"),
    )
}

/// Augmented matrix inverse and the level-1 combination map.
fn augmented_inverse_closed_form() -> Outcome {
    let mut r = rng(404);
    let mut worst_inv: f64 = 0.0;
    let mut worst_gs: f64 = 0.0;
    let mut pattern = true;
    for k in 0..300 {
        let h = if k % 3 == 0 { fig1() } else { random_balanced(&mut r, 3, 30) };
        let nb = h.n_b();
        let p = synthetic::random_proportions(&mut r, &h, 1).unwrap();
        let pv = p.bottom_weights();
        let a1 = augmented_matrix(&h, &p).unwrap();
        let numeric = a1.clone().lu().try_inverse().unwrap();
        let mut closed = DMatrix::zeros(nb + 1, nb + 1);
        closed[(0, 0)] = -1.0;
        for j in 0..nb {
            closed[(0, j + 1)] = 1.0;
            closed[(j + 1, 0)] = pv[j];
            for i in 0..nb {
                closed[(i + 1, j + 1)] = f64::from(u8::from(i == j)) - pv[i];
            }
        }
        worst_inv = worst_inv.max(mat_diff(&numeric, &closed));
        worst_inv = worst_inv.max(mat_diff(&augmented_inverse(&h, &p).unwrap(), &closed));
        let g = combination_map(&h, &p).unwrap();
        // Only the total and the bottoms carry weight.
        pattern &= g.shape() == (nb, h.n());
        for j in 1..h.n_a() {
            pattern &= g.column(j).iter().all(|&v| v == 0.0);
        }
        let gs = &g * h.s_matrix().as_ref();
        worst_gs = worst_gs.max(mat_diff(&gs, &DMatrix::identity(nb, nb)));
    }
    check(
        worst_inv <= 1e-12 && worst_gs <= 1e-12 && pattern,
        format!(
            "inverse deviation {worst_inv:.2e}, |G S - I| {worst_gs:.2e} (tol 1e-12), zero pattern {}",
            if pattern { "exact" } else { "violated" }
        ),
    )
}

/// Applying the exogenous reconciliation twice equals applying it once.
fn idempotency() -> Outcome {
    let mut r = rng(505);
    let mut worst: f64 = 0.0;
    let mut worst_matrix: f64 = 0.0;
    for k in 0..500 {
        let h = random_balanced(&mut r, 3, 30);
        let l = r.gen_range(1..=h.num_levels());
        let w = if k % 2 == 0 {
            WeightMatrix::diagonal(synthetic::random_variances(&mut r, h.n_b())).unwrap()
        } else {
            random_spd(&mut r, h.n_b())
        };
        let base = synthetic::random_forecasts(&mut r, &h, 1, 0.0, 50.0);
        let wl: Weighting = w.clone().into();
        let once = lcc_exogenous(&base, &h, l, &wl).unwrap();
        let twice = lcc_exogenous(&once.forecasts, &h, l, &wl).unwrap();
        worst = worst.max(mat_diff(&once.forecasts.values, &twice.forecasts.values) / (1.0 + base.values.amax()));
        // The operator on [a_l; b] itself.
        let c = h.level_matrix(l).unwrap();
        let wd = w.to_dense();
        let lmat = &wd * c.transpose() * (&c * &wd * c.transpose()).lu().try_inverse().unwrap();
        let (nl, nb) = (c.nrows(), c.ncols());
        let mut m = DMatrix::zeros(nl + nb, nl + nb);
        m.view_mut((0, 0), (nl, nl)).fill_with_identity();
        m.view_mut((nl, 0), (nb, nl)).copy_from(&lmat);
        m.view_mut((nl, nl), (nb, nb)).copy_from(&(DMatrix::identity(nb, nb) - &lmat * &c));
        worst_matrix = worst_matrix.max(mat_diff(&(&m * &m), &m));
    }
    check(
        worst <= 1e-11 && worst_matrix <= 1e-11,
        format!("applied twice vs once {worst:.2e}, |M M - M| {worst_matrix:.2e} on 500 systems (tol 1e-11)"),
    )
}

fn registry_inputs(h: &Hierarchy, r: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, DMatrix<f64>) {
    let b = DMatrix::from_fn(36, h.n_b(), |_, _| r.gen_range(1.0..20.0));
    let y = synthetic::aggregate_panel(h, &b);
    let history: Vec<Vec<f64>> = y.column_iter().map(|c| c.iter().copied().collect()).collect();
    let res = DMatrix::from_fn(36, h.n(), |_, _| r.gen_range(-1.0..1.0));
    (history, res)
}

fn registry_keys(h: &Hierarchy, linear_only: bool) -> Vec<String> {
    let mut keys: Vec<String> = ["bu", "ols", "wls", "shr", "lcc", "ccc", "wls@sa", "avg:wls+ccc"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if !linear_only {
        keys.extend(["td-hp", "ccc-h", "lcc@sa", "avg:lcc+ccc-h"].iter().map(|s| s.to_string()));
    }
    for l in 1..=h.num_levels() {
        keys.push(format!("lcc-exo:{l}"));
        keys.push(format!("lcc-endo:{l}"));
    }
    keys
}

/// Every registry method is coherent; coherent inputs are fixed points of
/// the linear methods.
fn coherence() -> Outcome {
    let mut r = rng(606);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_fixed: f64 = 0.0;
    let mut runs = 0;
    for _ in 0..150 {
        let h = random_balanced(&mut r, 3, 30);
        let (history, res) = registry_inputs(&h, &mut r);
        let base = synthetic::random_forecasts(&mut r, &h, 3, 10.0, 50.0);
        let sa = synthetic::random_forecasts(&mut r, &h, 3, 10.0, 5.0);
        let coherent = synthetic::coherent_forecasts(&mut r, &h, 3, 50.0);
        for nonneg in [false, true] {
            for key in registry_keys(&h, false) {
                let spec: MethodSpec = key.parse().unwrap();
                let mut inputs = MethodInputs::new(&h, &base);
                inputs.sa = Some(&sa);
                inputs.history = Some(&history);
                inputs.residuals = Some(&res);
                inputs.seasonal_period = 12;
                inputs.nonneg = nonneg;
                let out = match reconcile(&spec, &inputs) {
                    Ok(o) => o,
                    // Non-negative solves may be infeasible for negative upper targets.
                    Err(e) if nonneg && e.is_numerical() => continue,
                    Err(e) => panic!("{key}: {e}"),
                };
                let scale = 1.0 + base.values.amax();
                worst_ratio = worst_ratio.max(out.coherence.iter().fold(0.0, |a: f64, &c| a.max(c)) / (1e-8 * scale));
                runs += 1;
            }
        }
        for key in registry_keys(&h, true) {
            if key.contains("@sa") {
                continue;
            }
            let spec: MethodSpec = key.parse().unwrap();
            let mut inputs = MethodInputs::new(&h, &coherent);
            inputs.history = Some(&history);
            inputs.residuals = Some(&res);
            inputs.seasonal_period = 12;
            let out = reconcile(&spec, &inputs).unwrap();
            worst_fixed = worst_fixed.max(mat_diff(&out.forecasts.values, &coherent.values) / (1.0 + coherent.values.amax()));
        }
    }
    check(
        worst_ratio <= 1.0 && worst_fixed <= 1e-11,
        format!(
            "{runs} reconciliations: worst coherence residual {worst_ratio:.2e} x tolerance; fixed-point deviation {worst_fixed:.2e} (tol 1e-11)"
        ),
    )
}

/// Non-negative solves on instances forced to hit a bound.
fn nonnegativity() -> Outcome {
    let mut r = rng(707);
    let mut worst_min = f64::INFINITY;
    let mut worst_stat: f64 = 0.0;
    let mut worst_primal: f64 = 0.0;
    let mut worst_comp: f64 = 0.0;
    let mut worst_dual: f64 = 0.0;
    let mut monotone = true;
    let mut forced = 0;
    for k in 0..500 {
        let h = loop {
            let h = random_balanced(&mut r, 3, 30);
            if h.n_b() >= 2 {
                break h;
            }
        };
        // The negative bottom needs a sibling in its level-l block, or the
        // fixed level-l target pins it.
        let shared = |l: usize| -> Vec<usize> {
            h.elementary_hierarchies(l)
                .unwrap()
                .into_iter()
                .filter(|e| e.bottom_indices.len() >= 2)
                .flat_map(|e| e.bottom_indices)
                .collect()
        };
        let mut l = r.gen_range(1..=h.num_levels());
        if shared(l).is_empty() {
            l = 1;
        }
        let candidates = shared(l);
        let mut b: Vec<f64> = draws(&mut r, h.n_b(), 0.0, 10.0);
        let neg = candidates[r.gen_range(0..candidates.len())];
        b[neg] = -r.gen_range(20.0..60.0);
        let abs_b: Vec<f64> = b.iter().map(|v| v.abs()).collect();
        let mut y = h.aggregate(&abs_b);
        for v in y.iter_mut().take(h.n_a()) {
            *v *= r.gen_range(0.9..1.1);
        }
        y[h.n_a()..].copy_from_slice(&b);
        let base = single(&h, &y);
        // A near-certain negative bottom absorbs almost none of the gap.
        let mut vb = synthetic::random_variances(&mut r, h.n_b());
        vb[neg] = 1e-4;
        let mut vn = synthetic::random_variances(&mut r, h.n());
        vn[h.n_a() + neg] = 1e-4;
        let w = WeightMatrix::diagonal(vb).unwrap();
        let (unc, con) = match k % 3 {
            0 => (
                lcc_exogenous(&base, &h, l, &w.clone().into()).unwrap(),
                lcc_exogenous_nonneg(&base, &h, l, &w.clone().into()).unwrap(),
            ),
            1 => {
                let wn: Weighting = WeightMatrix::diagonal(vn).unwrap().into();
                (mint(&base, &h, &wn).unwrap(), mint_nonneg(&base, &h, &wn).unwrap())
            }
            _ => {
                let wl: Weighting = level_weights(&h, l, &vn).unwrap().into();
                (lcc_endogenous(&base, &h, l, &wl).unwrap(), lcc_endogenous_nonneg(&base, &h, l, &wl).unwrap())
            }
        };
        if unc.min_bottom(&h) < 0.0 {
            forced += 1;
        }
        worst_min = worst_min.min(con.min_bottom(&h));
        let (du, dc) = (&unc.diagnostics[0], &con.diagnostics[0]);
        monotone &= dc.objective >= du.objective - 1e-9 * (1.0 + du.objective);

        // KKT residuals straight from the kernel on the exogenous system.
        let c = h.level_matrix(l).unwrap();
        let target = DVector::from_iterator(c.nrows(), h.level_range(l).unwrap().map(|i| y[i]));
        let sys = EqualitySystem::new(c, target, w, DVector::from_column_slice(&b)).unwrap();
        let all: Vec<usize> = (0..h.n_b()).collect();
        let eq = solve_equality(&sys).unwrap();
        let nn = solve_nonnegative(&sys, &all).unwrap();
        let kkt = nn.kkt(&sys, &all);
        worst_stat = worst_stat.max(kkt.stationarity / (1.0 + nn.diagnostics.objective));
        worst_primal = worst_primal.max(kkt.primal);
        worst_comp = worst_comp.max(kkt.complementarity);
        worst_dual = worst_dual.max(kkt.dual);
        monotone &= nn.diagnostics.objective >= eq.diagnostics.objective - 1e-9 * (1.0 + eq.diagnostics.objective);
    }
    let pass = worst_min >= -1e-9
        && worst_stat <= 1e-7
        && worst_primal <= 1e-8
        && worst_comp <= 1e-8
        && worst_dual <= 1e-8
        && monotone
        && forced == 500;
    check(
        pass,
        format!(
            "{forced}/500 forced active; min bottom {worst_min:.2e} (>= -1e-9); stationarity {worst_stat:.2e}/(1+obj) (1e-7); primal {worst_primal:.2e}, complementarity {worst_comp:.2e}, dual {worst_dual:.2e} (1e-8); objective monotone: {monotone}"
        ),
    )
}

/// The CCC top forecast is the mean of the direct, middle and bottom sums.
fn ccc_top_identity() -> Outcome {
    let h = fig1();
    let mut r = rng(808);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let y = draws(&mut r, 8, -50.0, 50.0);
        let s2 = draws(&mut r, 5, 0.1, 10.0);
        let out = ccc(&single(&h, &y), &h, &diag(&s2), false).unwrap();
        let oracle = (y[0] + (y[1] + y[2]) + y[3..].iter().sum::<f64>()) / 3.0;
        worst = worst.max((out.forecasts.values[(0, 0)] - oracle).abs());
    }
    check(worst <= 1e-12, format!("max deviation {worst:.2e} over 1000 draws (tol 1e-12)"))
}

fn metric_suite() -> Outcome {
    let h = three_series();
    let mut notes = Vec::new();
    let mut pass = true;
    let hs: HorizonSet = "1".parse().unwrap();
    // Actuals zero; errors equal minus the forecasts.
    let actuals = DMatrix::zeros(3, 3);
    let fs = |rows: [f64; 3], t: usize, name: &str| {
        (t, name.to_string(), ForecastSet::from_rows(&h, &rows.map(|v| vec![v]), t, name).unwrap())
    };
    let runs = vec![
        fs([1.0, 2.0, 1.0], 0, "bench"),
        fs([1.0, 1.0, 2.0], 0, "m"),
    ];
    let t = build_error_tensor(&actuals, &h, &runs, "bench").unwrap();
    let v = avg_rel_metric(&t, Metric::Mse, &hs, Group::Bts).unwrap();
    let ok = v[0] == 1.0 && (v[1] - 1.0).abs() <= 1e-12;
    pass &= ok;
    notes.push(format!("self {} ratios(0.25,4) {:.3e}", v[0], (v[1] - 1.0).abs()));

    let mut r = rng(909);
    let hf = fig1();
    let y = DMatrix::from_fn(14, hf.n(), |_, _| r.gen_range(0.0..10.0));
    let mut runs = Vec::new();
    for o in 2..12 {
        for name in ["base", "a", "b", "c"] {
            let f = synthetic::random_forecasts(&mut r, &hf, 3, 5.0, 5.0);
            runs.push((o, name.to_string(), ForecastSet { origin: o, ..f }));
        }
    }
    let t = build_error_tensor(&y, &hf, &runs, "base").unwrap();
    let mut self_dev: f64 = 0.0;
    let mut scale_dev: f64 = 0.0;
    let mut width_dev: f64 = 0.0;
    for metric in [Metric::Mse, Metric::Mae] {
        for label in ["1", "2", "3", "1:3"] {
            let hs: HorizonSet = label.parse().unwrap();
            for g in [Group::All, Group::Uts, Group::Bts] {
                let base = avg_rel_metric(&t, metric, &hs, g).unwrap();
                self_dev = self_dev.max((base[0] - 1.0).abs());
                for c in [1e-3, 1e3] {
                    let mut scaled = t.clone();
                    for i in 0..hf.n() {
                        scaled.scale_series(i, c);
                    }
                    let mut one = t.clone();
                    one.scale_series(4, c);
                    for other in [scaled, one] {
                        let v = avg_rel_metric(&other, metric, &hs, g).unwrap();
                        scale_dev = scale_dev.max(max_diff(&v, &base));
                    }
                }
                let mcb = mcb_nemenyi(&t.score_matrix(metric, &hs, g).unwrap(), 0.05).unwrap();
                for j in 0..4 {
                    width_dev = width_dev.max((mcb.upper[j] - mcb.lower[j] - mcb.critical_distance).abs());
                }
            }
        }
    }
    pass &= self_dev <= 1e-12 && scale_dev <= 1e-12 && width_dev <= 1e-12;
    let same = DMatrix::from_fn(20, 4, |i, _| (i * i) as f64 + 0.5);
    let fr = friedman_test(&same).unwrap();
    pass &= fr.statistic == 0.0;
    notes.push(format!(
        "self-benchmark {self_dev:.1e}; scale c in (1e-3, 1e3) {scale_dev:.1e}; Friedman on identical columns {}; MCB width spread {width_dev:.1e}",
        fr.statistic
    ));
    check(pass, notes.join("; ") + " (tol 1e-12)")
}

fn negativity_experiment(nonneg: bool) -> (usize, usize, f64, usize) {
    let h = synthetic::two_level_hierarchy(4, 6).unwrap();
    let y = synthetic::intermittent_panel(&h, 60, 2021);
    let store = synthetic::noisy_base_forecasts(&h, &y, 24, 59, 2, 0.8, 2021);
    let mut cfg = ExperimentConfig::new(24, 2, 12, &["lcc-exo:1"]);
    cfg.nonneg = nonneg;
    // Sparse 0/1 series have constant seasons over a two-year window.
    cfg.seasonal_variance = false;
    cfg.var_floor = Some(1e-2);
    let out = run_experiment(&cfg, &h, &y, Some(&store), None).unwrap();
    let cells: Vec<_> = out.records.iter().filter(|r| r.method == "lcc-exo:1").collect();
    let negatives = cells.iter().map(|r| r.negative_count).sum();
    let min = cells.iter().map(|r| r.min_bottom).fold(f64::INFINITY, f64::min);
    let failed = cells.iter().filter(|r| r.status != RunStatus::Ok).count();
    let base_neg = store
        .values()
        .map(|f| hrecon::harness::count_negative(f, &h))
        .sum();
    (negatives, failed, min, base_neg)
}

fn negativity_reproduction() -> Outcome {
    let (neg_u, fail_u, min_u, base_neg) = negativity_experiment(false);
    let (neg_c, fail_c, min_c, _) = negativity_experiment(true);
    let repeat = negativity_experiment(false);
    let deterministic = repeat.0 == neg_u && repeat.2.to_bits() == min_u.to_bits();
    let pass = base_neg > 0 && neg_u > 0 && fail_u == 0 && neg_c == 0 && fail_c == 0 && min_c >= -1e-9 && deterministic;
    check(
        pass,
        format!(
            "{base_neg} negative base bottoms; unconstrained L1CC: {neg_u} negative reconciled bottoms (min {min_u:.3}); nonneg: {neg_c} (min {min_c:.2e}), {fail_c} failed cells; deterministic: {deterministic}"
        ),
    )
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let h = synthetic::two_level_hierarchy(7, 6).unwrap();
    let y = synthetic::seasonal_panel(&h, 72, 12, 50);
    let store = synthetic::noisy_base_forecasts(&h, &y, 24, 71, 6, 1.0, 50);
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get().max(4));
    let mut outputs = Vec::new();
    for p in [1, workers] {
        let mut cfg = ExperimentConfig::new(
            24,
            6,
            12,
            &["bu", "ols", "wls", "shr", "lcc-exo:1", "lcc-endo:2", "lcc", "ccc", "ccc-h", "avg:lcc+wls@sa"],
        );
        cfg.parallelism = p;
        let out = run_experiment(&cfg, &h, &y, Some(&store), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        persist_results(dir.path(), &out).unwrap();
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        outputs.push((read("report.csv"), read("report.txt"), read("runs.csv")));
    }
    let secs = start.elapsed();
    let same = outputs[0] == outputs[1];
    check(
        h.n() == 50 && same && secs < Duration::from_secs(60),
        format!(
            "{} series, 1 vs {workers} workers: reports {}; {:.1}s (limit 60s)",
            h.n(),
            if same { "byte-identical" } else { "DIFFER" },
            secs.as_secs_f64()
        ),
    )
}

#[test]
fn acceptance() {
    // Start on a fresh line after the test harness prefix.
    println!();
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        ("toy-oracle equivalence (exogenous)", toy_exogenous),
        ("toy-oracle equivalence (endogenous)", toy_endogenous),
        ("proportion weights bridge", proportions_bridge),
        ("augmented-matrix construction", augmented_inverse_closed_form),
        ("idempotency", idempotency),
        ("coherence", coherence),
        ("non-negativity", nonnegativity),
        ("CCC combination identity", ccc_top_identity),
        ("metric suite", metric_suite),
        ("negativity reproduction", negativity_reproduction),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let out = f();
        println!("{} {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        if !out.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
