//! Forecast reconciliation for hierarchical and grouped time series.
//!
//! The crate covers the level-conditional coherent (LCC) family with
//! exogenous and endogenous constraints, bottom-up, top-down with historical
//! proportions, minimum-trace (OLS / wls / shrinkage) reconciliation,
//! combination and averaging of reconciled vectors, non-negative variants,
//! and a rolling-origin evaluation harness with relative accuracy indices
//! and rank tests.
//!
//! ```
//! use hrecon::hierarchy::{build_hierarchy, HierarchySpec};
//! use hrecon::reconcile::{lcc_exogenous, ForecastSet};
//! use hrecon::weights::unit_weights;
//!
//! let spec = HierarchySpec::from_edges(
//!     vec![vec!["T".into()]],
//!     vec!["A".into(), "B".into()],
//!     vec![("T".into(), "A".into()), ("T".into(), "B".into())],
//! );
//! let h = build_hierarchy(&spec).unwrap();
//! let base = ForecastSet::from_rows(&h, &[vec![10.0], vec![4.0], vec![4.0]], 0, "demo").unwrap();
//! let rec = lcc_exogenous(&base, &h, 1, &unit_weights(2).unwrap().into()).unwrap();
//! assert_eq!(rec.forecasts.row(1), vec![5.0]);
//! ```

pub mod error;
pub mod evaluate;
pub mod harness;
pub mod hierarchy;
mod linalg;
pub mod reconcile;
pub mod solver;
pub mod synthetic;
pub mod weights;

pub use error::{Error, Result};
