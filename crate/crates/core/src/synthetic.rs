//! Seeded synthetic hierarchies, panels and base forecasts for tests,
//! benchmarks and demonstrations.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::harness::ForecastStore;
use crate::hierarchy::{build_hierarchy, Hierarchy, HierarchySpec};
use crate::reconcile::ForecastSet;
use crate::weights::CombinationWeights;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Total `T`, `groups` middle nodes `G<i>`, each with `per_group` bottoms
/// `B<i>_<k>`.
pub fn two_level_hierarchy(groups: usize, per_group: usize) -> Result<Hierarchy> {
    let mids: Vec<String> = (0..groups).map(|i| format!("G{i}")).collect();
    let mut bottom = Vec::new();
    let mut edges: Vec<(String, String)> = mids.iter().map(|m| ("T".to_string(), m.clone())).collect();
    for (i, m) in mids.iter().enumerate() {
        for k in 0..per_group {
            let b = format!("B{i}_{k}");
            edges.push((m.clone(), b.clone()));
            bottom.push(b);
        }
    }
    build_hierarchy(&HierarchySpec::from_edges(vec![vec!["T".into()], mids], bottom, edges))
}

/// A random tree with `upper_levels` levels above the bottom, every node
/// having `1..=max_children` children, and at most `max_bottom` bottoms.
/// Nodes with a single child yield duplicate series.
pub fn random_tree_spec<R: Rng>(rng: &mut R, upper_levels: usize, max_children: usize, max_bottom: usize) -> HierarchySpec {
    assert!(upper_levels >= 1 && max_children >= 1 && max_bottom >= 1);
    loop {
        let mut levels: Vec<Vec<String>> = vec![vec!["L1_0".into()]];
        let mut edges = Vec::new();
        let mut bottom = Vec::new();
        for l in 1..=upper_levels {
            let mut next = Vec::new();
            for parent in &levels[l - 1] {
                for _ in 0..rng.gen_range(1..=max_children) {
                    let id = if l == upper_levels {
                        format!("b{}", bottom.len() + next.len())
                    } else {
                        format!("L{}_{}", l + 1, next.len())
                    };
                    edges.push((parent.clone(), id.clone()));
                    next.push(id);
                }
            }
            if l == upper_levels {
                bottom = next;
            } else {
                levels.push(next);
            }
        }
        if bottom.len() <= max_bottom {
            return HierarchySpec::from_edges(levels, bottom, edges);
        }
    }
}

/// Random forecasts: every entry uniform on `[-scale, scale]` plus `offset`.
pub fn random_forecasts<R: Rng>(rng: &mut R, h: &Hierarchy, horizons: usize, offset: f64, scale: f64) -> ForecastSet {
    let v = DMatrix::from_fn(h.n(), horizons, |_, _| offset + rng.gen_range(-scale..=scale));
    ForecastSet::new(h, v, 0, "random").expect("matching dimensions")
}

/// Coherent forecasts from random bottoms.
pub fn coherent_forecasts<R: Rng>(rng: &mut R, h: &Hierarchy, horizons: usize, scale: f64) -> ForecastSet {
    let b = DMatrix::from_fn(h.n_b(), horizons, |_, _| rng.gen_range(-scale..=scale));
    ForecastSet::from_bottom(h, &b, 0, "coherent").expect("matching dimensions")
}

/// Random strictly positive variances.
pub fn random_variances<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.1..10.0)).collect()
}

/// Random level-`l` combination weights, each in `(0, 1)` and summing to
/// one within every block.
pub fn random_proportions<R: Rng>(rng: &mut R, h: &Hierarchy, l: usize) -> Result<CombinationWeights> {
    let ranges = h
        .elementary_hierarchies(l)?
        .into_iter()
        .map(|e| e.bottom_indices.len())
        .collect::<Vec<_>>();
    let blocks = ranges
        .into_iter()
        .map(|k| {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let mut p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            // Push the rounding error into the last entry.
            let head: f64 = p[..k - 1].iter().sum();
            p[k - 1] = 1.0 - head;
            p
        })
        .collect();
    CombinationWeights::new(h, l, blocks)
}

/// A `T x n` panel: positive seasonal bottoms with Gaussian noise,
/// aggregated up the hierarchy.
pub fn seasonal_panel(h: &Hierarchy, t_len: usize, period: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid sd");
    let mut b = DMatrix::zeros(t_len, h.n_b());
    for i in 0..h.n_b() {
        let level = r.gen_range(20.0..60.0);
        let amp = r.gen_range(2.0..8.0);
        let phase = r.gen_range(0.0..std::f64::consts::TAU);
        for t in 0..t_len {
            let season = (std::f64::consts::TAU * t as f64 / period.max(1) as f64 + phase).sin();
            b[(t, i)] = level + amp * season + 2.0 * noise.sample(&mut r);
        }
    }
    aggregate_panel(h, &b)
}

/// A `T x n` panel whose bottoms are small counts, mostly zero or one, as
/// in sparse disaggregated data.
pub fn intermittent_panel(h: &Hierarchy, t_len: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let b = DMatrix::from_fn(t_len, h.n_b(), |_, _| {
        let u: f64 = r.gen();
        if u < 0.5 {
            0.0
        } else if u < 0.85 {
            1.0
        } else {
            r.gen_range(2..6) as f64
        }
    });
    aggregate_panel(h, &b)
}

/// Aggregates a `T x n_b` bottom panel to `T x n`.
pub fn aggregate_panel(h: &Hierarchy, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(bottom.nrows(), h.n());
    for t in 0..bottom.nrows() {
        let row: Vec<f64> = bottom.row(t).iter().copied().collect();
        for (i, v) in h.aggregate(&row).into_iter().enumerate() {
            y[(t, i)] = v;
        }
    }
    y
}

/// Base forecasts for origins `first..=last`: actuals (or the last
/// observation beyond the data) plus Gaussian noise with standard deviation
/// `sd * (1 + |actual|)^0.5`, independently per series, so the set is
/// incoherent and, for near-zero series, sometimes negative.
pub fn noisy_base_forecasts(
    h: &Hierarchy,
    y: &DMatrix<f64>,
    first: usize,
    last: usize,
    horizons: usize,
    sd: f64,
    seed: u64,
) -> ForecastStore {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid sd");
    let mut store = ForecastStore::new();
    for t in first..=last {
        let v = DMatrix::from_fn(h.n(), horizons, |i, j| {
            let a = y[((t + j).min(y.nrows() - 1), i)];
            a + sd * (1.0 + a.abs()).sqrt() * noise.sample(&mut r)
        });
        store.insert(t, ForecastSet::new(h, v, t, "base").expect("matching dimensions"));
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        let h = two_level_hierarchy(3, 4).unwrap();
        assert_eq!(h.n(), 16);
        assert_eq!(seasonal_panel(&h, 30, 12, 7), seasonal_panel(&h, 30, 12, 7));
        assert_ne!(seasonal_panel(&h, 30, 12, 7), seasonal_panel(&h, 30, 12, 8));
        let y = intermittent_panel(&h, 30, 1);
        assert!(h.is_coherent(y.row(5).transpose().as_slice()).unwrap());
    }

    #[test]
    fn random_trees_build() {
        let mut r = rng(3);
        for _ in 0..50 {
            let spec = random_tree_spec(&mut r, 3, 3, 40);
            let h = build_hierarchy(&spec).unwrap();
            assert!(h.n_b() <= 40);
            for l in 1..=h.num_levels() {
                random_proportions(&mut r, &h, l).unwrap();
            }
        }
    }
}
