//! The 18 classification features of an event's score window.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::AnomalyClass;

pub const FEATURE_COUNT: usize = 18;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "max_dist",
    "avg_dist",
    "count_above_T",
    "decile_1",
    "decile_2",
    "decile_3",
    "decile_4",
    "decile_5",
    "decile_6",
    "decile_7",
    "decile_8",
    "decile_9",
    "argmax_index",
    "osc_25",
    "osc_50",
    "osc_75",
    "return_index",
    "index_diff",
];

/// Levels of the oscillation counts, as fractions of the window maximum.
pub const OSC_LEVELS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub max_dist: f64,
    pub avg_dist: f64,
    pub count_above_t: usize,
    pub deciles: [f64; 9],
    pub argmax_index: usize,
    pub osc_25: usize,
    pub osc_50: usize,
    pub osc_75: usize,
    /// First index after which every score is at or below the threshold;
    /// the window length if the last score is still above it.
    pub return_index: usize,
    pub index_diff: i64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        let mut a = [0.0; FEATURE_COUNT];
        a[0] = self.max_dist;
        a[1] = self.avg_dist;
        a[2] = self.count_above_t as f64;
        a[3..12].copy_from_slice(&self.deciles);
        a[12] = self.argmax_index as f64;
        a[13] = self.osc_25 as f64;
        a[14] = self.osc_50 as f64;
        a[15] = self.osc_75 as f64;
        a[16] = self.return_index as f64;
        a[17] = self.index_diff as f64;
        a
    }

    /// Inverse of [`to_array`](Self::to_array); count features must be
    /// non-negative integers.
    pub fn from_array(a: &[f64; FEATURE_COUNT]) -> Result<Self> {
        let count = |i: usize| -> Result<usize> {
            let v = a[i];
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::Validation(format!(
                    "feature `{}` must be a non-negative integer, got {v}",
                    FEATURE_NAMES[i]
                )))
            }
        };
        if a[17].fract() != 0.0 || !a[17].is_finite() {
            return Err(Error::Validation("feature `index_diff` must be an integer".into()));
        }
        let mut deciles = [0.0; 9];
        deciles.copy_from_slice(&a[3..12]);
        Ok(Self {
            max_dist: a[0],
            avg_dist: a[1],
            count_above_t: count(2)?,
            deciles,
            argmax_index: count(12)?,
            osc_25: count(13)?,
            osc_50: count(14)?,
            osc_75: count(15)?,
            return_index: count(16)?,
            index_diff: a[17] as i64,
        })
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// at position `(n - 1) * q`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Sign changes of `x / max - level` along the window; zero counts as
/// non-negative.
fn crossings(scores: &[f64], max: f64, level: f64) -> usize {
    if max <= 0.0 {
        return 0;
    }
    scores
        .windows(2)
        .filter(|w| (w[0] / max >= level) != (w[1] / max >= level))
        .count()
}

pub fn extract_features(scores: &[f64], threshold: f64) -> Result<FeatureVector> {
    if scores.is_empty() {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("score window has non-finite values".into()));
    }
    let count_above_t = scores.iter().filter(|&&s| s > threshold).count();
    if count_above_t == 0 {
        return Err(Error::NotAnEvent { threshold });
    }
    let n = scores.len();
    // First maximum wins.
    let (argmax_index, max_dist) = scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
    let avg_dist = scores.iter().sum::<f64>() / n as f64;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let deciles = std::array::from_fn(|i| quantile_sorted(&sorted, (i + 1) as f64 / 10.0));
    let return_index = scores
        .iter()
        .rposition(|&s| s > threshold)
        .map_or(0, |i| i + 1);
    let [osc_25, osc_50, osc_75] = OSC_LEVELS.map(|l| crossings(scores, max_dist, l));
    Ok(FeatureVector {
        max_dist,
        avg_dist,
        count_above_t,
        deciles,
        argmax_index,
        osc_25,
        osc_50,
        osc_75,
        return_index,
        index_diff: return_index as i64 - argmax_index as i64,
    })
}

/// One row of the feature export.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub event_id: u64,
    pub label: Option<AnomalyClass>,
    pub features: FeatureVector,
}

pub fn feature_csv_header() -> String {
    let mut h = FEATURE_NAMES.join(",");
    h.push_str(",event_id,label");
    h
}

pub fn write_feature_csv<W: Write>(mut out: W, rows: &[FeatureRow]) -> std::io::Result<()> {
    writeln!(out, "{}", feature_csv_header())?;
    for r in rows {
        let f = &r.features;
        write!(out, "{},{},{}", f.max_dist, f.avg_dist, f.count_above_t)?;
        for d in &f.deciles {
            write!(out, ",{d}")?;
        }
        writeln!(
            out,
            ",{},{},{},{},{},{},{},{}",
            f.argmax_index,
            f.osc_25,
            f.osc_50,
            f.osc_75,
            f.return_index,
            f.index_diff,
            r.event_id,
            r.label.map_or("", |l| l.name())
        )?;
    }
    Ok(())
}

pub fn read_feature_csv<R: BufRead>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty feature file".into()))?
        .map_err(|e| Error::Format(e.to_string()))?;
    if header.trim_end() != feature_csv_header() {
        return Err(Error::Format(format!("unexpected feature header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Row { row, message };
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != FEATURE_COUNT + 2 {
            return Err(err(format!(
                "expected {} columns, got {}",
                FEATURE_COUNT + 2,
                cols.len()
            )));
        }
        let mut a = [0.0; FEATURE_COUNT];
        for (j, c) in cols[..FEATURE_COUNT].iter().enumerate() {
            a[j] = c
                .parse()
                .map_err(|_| err(format!("bad value `{c}` for {}", FEATURE_NAMES[j])))?;
        }
        let features = FeatureVector::from_array(&a).map_err(|e| err(e.to_string()))?;
        let event_id = cols[FEATURE_COUNT]
            .parse()
            .map_err(|_| err(format!("bad event id `{}`", cols[FEATURE_COUNT])))?;
        let label = match cols[FEATURE_COUNT + 1] {
            "" => None,
            s => Some(s.parse().map_err(|e: Error| err(e.to_string()))?),
        };
        rows.push(FeatureRow {
            event_id,
            label,
            features,
        });
    }
    Ok(rows)
}
