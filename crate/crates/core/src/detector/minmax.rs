//! Univariate min-max baseline: a channel is flagged when the range of a
//! sliding window exceeds `k` standard deviations of the whole data set.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::ingest::{ChannelVector, CHANNEL_COUNT};

/// Per-channel `k` for V, I, sin, F.
pub const DEFAULT_MINMAX_K: [f64; CHANNEL_COUNT] = [3.0, 4.0, 4.0, 6.0];

pub const DEFAULT_MINMAX_WINDOW_S: f64 = 10.0;

/// `max(window) - min(window) > k * sigma_full`.
pub fn minmax_detect(window: &[f64], sigma_full: f64, k: f64) -> Result<bool> {
    if window.is_empty() {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(hi - lo > k * sigma_full)
}

/// Slides a `window_len` window over `series` and flags each channel.
///
/// Entry `i` of the result covers samples `i ..= i + window_len - 1`.
/// `sigma_full` is the population standard deviation of each channel over
/// the whole series.
pub fn minmax_scan(
    series: &[ChannelVector],
    window_len: usize,
    k: &[f64; CHANNEL_COUNT],
) -> Result<Vec<[bool; CHANNEL_COUNT]>> {
    if window_len == 0 || series.len() < window_len {
        return Err(Error::Length {
            needed: window_len.max(1),
            got: series.len(),
        });
    }
    let n = series.len() as f64;
    let sigma: [f64; CHANNEL_COUNT] = std::array::from_fn(|c| {
        let mean = series.iter().map(|s| s.values[c]).sum::<f64>() / n;
        (series.iter().map(|s| (s.values[c] - mean).powi(2)).sum::<f64>() / n).sqrt()
    });

    let mut out = vec![[false; CHANNEL_COUNT]; series.len() - window_len + 1];
    for c in 0..CHANNEL_COUNT {
        let mut maxq: VecDeque<usize> = VecDeque::new();
        let mut minq: VecDeque<usize> = VecDeque::new();
        for (i, s) in series.iter().enumerate() {
            let v = s.values[c];
            while maxq.back().is_some_and(|&j| series[j].values[c] <= v) {
                maxq.pop_back();
            }
            maxq.push_back(i);
            while minq.back().is_some_and(|&j| series[j].values[c] >= v) {
                minq.pop_back();
            }
            minq.push_back(i);
            if i + 1 < window_len {
                continue;
            }
            let start = i + 1 - window_len;
            while maxq.front().is_some_and(|&j| j < start) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&j| j < start) {
                minq.pop_front();
            }
            let range = series[maxq[0]].values[c] - series[minq[0]].values[c];
            out[start][c] = range > k[c] * sigma[c];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::default_start;

    #[test]
    fn examples() {
        assert!(!minmax_detect(&[2.0; 20], 1.0, 0.1).unwrap());
        assert!(!minmax_detect(&[0.0, 3.0], 1.0, 3.0).unwrap());
        assert!(minmax_detect(&[0.0, 3.0001], 1.0, 3.0).unwrap());
        assert!(matches!(minmax_detect(&[], 1.0, 3.0), Err(Error::Length { .. })));
    }

    #[test]
    fn scan_matches_direct() {
        let series: Vec<ChannelVector> = (0..60)
            .map(|i| {
                let x = ((i * 37) % 11) as f64;
                ChannelVector::new(default_start(), [x, -x, if i == 30 { 50.0 } else { 0.0 }, 1.0])
            })
            .collect();
        let k = [1.0, 2.0, 3.0, 1.0];
        let flags = minmax_scan(&series, 7, &k).unwrap();
        assert_eq!(flags.len(), 54);
        for c in 0..4 {
            let all: Vec<f64> = series.iter().map(|s| s.values[c]).collect();
            let mean = all.iter().sum::<f64>() / 60.0;
            let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0).sqrt();
            for (i, f) in flags.iter().enumerate() {
                assert_eq!(f[c], minmax_detect(&all[i..i + 7], sd, k[c]).unwrap());
            }
        }
        assert!(flags[24][2] && flags[30][2] && !flags[31][2]);
    }
}
