//! Rolling-origin experiments: configuration, base-forecast generation,
//! CSV ingestion and persistence.

pub mod config;
pub mod experiment;
pub mod io;
pub mod seasonal;

pub use config::{ExperimentConfig, Paths};
pub use experiment::{count_negative, persist_results, run_experiment, ExperimentOutput, RunRecord, RunStatus, NEGATIVITY_TOL};
pub use io::{read_forecast_store, read_observations, ForecastStore, ResidualStore};
pub use seasonal::seasonal_average_forecast;
