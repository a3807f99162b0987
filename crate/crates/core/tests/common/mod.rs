//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use hrecon::hierarchy::{build_hierarchy, Hierarchy, HierarchySpec};
use hrecon::reconcile::ForecastSet;
use nalgebra::{DMatrix, DVector};

pub fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn edges(v: &[(&str, &str)]) -> Vec<(String, String)> {
    v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// T; X = A + B, Y = C + D + E.
pub fn fig1() -> Hierarchy {
    build_hierarchy(&HierarchySpec::from_edges(
        vec![ids(&["T"]), ids(&["X", "Y"])],
        ids(&["A", "B", "C", "D", "E"]),
        edges(&[
            ("T", "X"),
            ("T", "Y"),
            ("X", "A"),
            ("X", "B"),
            ("Y", "C"),
            ("Y", "D"),
            ("Y", "E"),
        ]),
    ))
    .unwrap()
}

/// T = X + Y.
pub fn three_series() -> Hierarchy {
    build_hierarchy(&HierarchySpec::from_edges(
        vec![ids(&["T"])],
        ids(&["X", "Y"]),
        edges(&[("T", "X"), ("T", "Y")]),
    ))
    .unwrap()
}

pub fn single(h: &Hierarchy, y: &[f64]) -> ForecastSet {
    ForecastSet::from_rows(h, &y.iter().map(|&v| vec![v]).collect::<Vec<_>>(), 0, "test").unwrap()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mat_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Bottoms reconciled on level `l` by the textbook formula
/// `b̂ + W C'(C W C')⁻¹(â - C b̂)` with a dense LU inverse.
pub fn exogenous_oracle(h: &Hierarchy, l: usize, w: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let c = h.level_matrix(l).unwrap();
    let r = h.level_range(l).unwrap();
    let a = DVector::from_iterator(r.len(), r.clone().map(|i| y[i]));
    let b = DVector::from_iterator(h.n_b(), y[h.n_a()..].iter().copied());
    let cwc = &c * w * c.transpose();
    let inv = cwc.lu().try_inverse().unwrap();
    let out = &b + w * c.transpose() * inv * (a - &c * &b);
    h.aggregate(out.as_slice())
}

/// `M_l ŷ_l` with `M_l = I - W U (U'WU)⁻¹ U'`, `U' = [I | -C_l]`, dense LU.
pub fn endogenous_oracle(h: &Hierarchy, l: usize, w: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let c = h.level_matrix(l).unwrap();
    let r = h.level_range(l).unwrap();
    let (nl, nb) = (r.len(), h.n_b());
    let mut ut = DMatrix::zeros(nl, nl + nb);
    for i in 0..nl {
        ut[(i, i)] = 1.0;
        for j in 0..nb {
            ut[(i, nl + j)] = -c[(i, j)];
        }
    }
    let yl = DVector::from_iterator(nl + nb, r.clone().map(|i| y[i]).chain(y[h.n_a()..].iter().copied()));
    let u = ut.transpose();
    let inv = (&ut * w * &u).lu().try_inverse().unwrap();
    let out = &yl - w * &u * inv * &ut * &yl;
    h.aggregate(&out.as_slice()[nl..])
}
