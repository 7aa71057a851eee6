//! Per-channel linear de-trending and normalization.
//!
//! A window is mapped to `z_k[t] = (x_k[t] - intercept_k - slope_k * t) / sigma_k`
//! where the line is the OLS fit over `t = 0..n-1` (index origin at the window
//! start) and `sigma_k` is the population standard deviation of the de-trended
//! values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChannelVector, CHANNELS, CHANNEL_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub intercept: [f64; CHANNEL_COUNT],
    pub slope: [f64; CHANNEL_COUNT],
    pub sigma: [f64; CHANNEL_COUNT],
}

/// Relative size below which a de-trended standard deviation counts as zero.
const DEGENERATE_RTOL: f64 = 1e-12;

/// OLS line over index `0..n-1`; returns `(intercept, slope)`.
pub(crate) fn ols_line(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let x_mean = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, x) in values.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (x - x_mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (x_mean - slope * t_mean, slope)
}

pub fn fit_standardization(window: &[ChannelVector]) -> Result<StandardizationParams> {
    if window.len() < 3 {
        return Err(Error::Length {
            needed: 3,
            got: window.len(),
        });
    }
    let mut params = StandardizationParams {
        intercept: [0.0; CHANNEL_COUNT],
        slope: [0.0; CHANNEL_COUNT],
        sigma: [0.0; CHANNEL_COUNT],
    };
    let n = window.len() as f64;
    let mut column = Vec::with_capacity(window.len());
    for k in 0..CHANNEL_COUNT {
        column.clear();
        column.extend(window.iter().map(|v| v.values[k]));
        let (intercept, slope) = ols_line(&column);
        let ss: f64 = column
            .iter()
            .enumerate()
            .map(|(t, x)| {
                let r = x - intercept - slope * t as f64;
                r * r
            })
            .sum();
        let sigma = (ss / n).sqrt();
        let scale = column.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        if !(sigma > DEGENERATE_RTOL * scale) {
            return Err(Error::DegenerateChannel {
                channel: CHANNELS[k].to_string(),
            });
        }
        params.intercept[k] = intercept;
        params.slope[k] = slope;
        params.sigma[k] = sigma;
    }
    Ok(params)
}

impl StandardizationParams {
    /// Standardizes a single vector located at window index `index`.
    pub fn standardize_at(&self, values: &[f64; CHANNEL_COUNT], index: usize) -> [f64; CHANNEL_COUNT] {
        let t = index as f64;
        std::array::from_fn(|k| (values[k] - self.intercept[k] - self.slope[k] * t) / self.sigma[k])
    }

    pub fn de_standardize_at(&self, z: &[f64; CHANNEL_COUNT], index: usize) -> [f64; CHANNEL_COUNT] {
        let t = index as f64;
        std::array::from_fn(|k| z[k] * self.sigma[k] + self.intercept[k] + self.slope[k] * t)
    }

    /// Standardizes `series`, whose first element sits at window index `start_index`.
    pub fn standardize(&self, series: &[ChannelVector], start_index: usize) -> Vec<ChannelVector> {
        series
            .iter()
            .enumerate()
            .map(|(i, v)| ChannelVector {
                timestamp: v.timestamp,
                values: self.standardize_at(&v.values, start_index + i),
            })
            .collect()
    }

    pub fn de_standardize(&self, series: &[ChannelVector], start_index: usize) -> Vec<ChannelVector> {
        series
            .iter()
            .enumerate()
            .map(|(i, v)| ChannelVector {
                timestamp: v.timestamp,
                values: self.de_standardize_at(&v.values, start_index + i),
            })
            .collect()
    }
}

/// Standardizes a window with parameters fitted on that same window.
pub fn fit_standardize(
    window: &[ChannelVector],
) -> Result<(StandardizationParams, Vec<ChannelVector>)> {
    let params = fit_standardization(window)?;
    let z = params.standardize(window, 0);
    Ok((params, z))
}

/// Pearson correlation matrix of the channels over a window.
pub fn correlation_matrix(series: &[ChannelVector]) -> Result<[[f64; CHANNEL_COUNT]; CHANNEL_COUNT]> {
    if series.len() < 2 {
        return Err(Error::Length {
            needed: 2,
            got: series.len(),
        });
    }
    let n = series.len() as f64;
    let mut mean = [0.0; CHANNEL_COUNT];
    for v in series {
        for k in 0..CHANNEL_COUNT {
            mean[k] += v.values[k] / n;
        }
    }
    let mut cov = [[0.0; CHANNEL_COUNT]; CHANNEL_COUNT];
    for v in series {
        for i in 0..CHANNEL_COUNT {
            for j in 0..CHANNEL_COUNT {
                cov[i][j] += (v.values[i] - mean[i]) * (v.values[j] - mean[j]);
            }
        }
    }
    let mut corr = [[0.0; CHANNEL_COUNT]; CHANNEL_COUNT];
    for i in 0..CHANNEL_COUNT {
        for j in 0..CHANNEL_COUNT {
            let d = (cov[i][i] * cov[j][j]).sqrt();
            corr[i][j] = if d > 0.0 { cov[i][j] / d } else { f64::NAN };
        }
    }
    Ok(corr)
}
