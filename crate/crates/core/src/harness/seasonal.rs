//! Seasonal-average base forecasts.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Forecasts for horizons `1..=horizons` from the end of `training`: the
/// mean of the training observations in the same season as the target.
///
/// Observation `k` of the window is in stratum `k mod m`, so horizon `h`
/// reads stratum `(len + h - 1) mod m`.
pub fn seasonal_average_forecast(training: &[f64], period: usize, horizons: usize) -> Result<Vec<f64>> {
    let means = stratum_means(training, period)?;
    Ok((0..horizons).map(|j| means[(training.len() + j) % period]).collect())
}

fn stratum_means(training: &[f64], period: usize) -> Result<Vec<f64>> {
    if period == 0 {
        return Err(Error::InvalidArgument("seasonal period must be at least 1".into()));
    }
    if let Some(k) = training.iter().position(|v| !v.is_finite()) {
        return Err(Error::Missing(format!("training observation {k} is not finite")));
    }
    (0..period)
        .map(|s| {
            let (sum, count) = training
                .iter()
                .skip(s)
                .step_by(period)
                .fold((0.0, 0usize), |(a, c), v| (a + v, c + 1));
            if count == 0 {
                Err(Error::InvalidArgument(format!(
                    "season {s} has no training observation (window {} < period {period})",
                    training.len()
                )))
            } else {
                Ok(sum / count as f64)
            }
        })
        .collect()
}

/// Deviations of each training column from its seasonal means (`T x n` in,
/// `T x n` out). Stands in for in-sample residuals when none are supplied.
pub fn seasonal_deviations(training: &DMatrix<f64>, period: usize) -> Result<DMatrix<f64>> {
    let mut out = training.clone();
    for (i, col) in training.column_iter().enumerate() {
        let x: Vec<f64> = col.iter().copied().collect();
        let means = stratum_means(&x, period)?;
        for (k, v) in x.iter().enumerate() {
            out[(k, i)] = v - means[k % period];
        }
    }
    Ok(out)
}
