//! Data-driven selection of the training length and lag depth.
//!
//! - Retraining error (D1): fit a ground-truth VAR on a segment of length
//!   `tau`, simulate `tau` worth of data from it, refit, and measure the
//!   average absolute per-element coefficient difference.
//! - Drift (D2): the same distance between models fitted on consecutive,
//!   non-overlapping windows `[t, t+tau)` and `[t+tau, t+2tau)`.
//! - Lag depth: the retraining protocol for a list of `(p, tau)` pairs.
//!
//! Every replicate draws from its own seed derived from the experiment seed,
//! so reports do not depend on how replicates are scheduled across threads.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ChannelVector;
use crate::linalg;
use crate::preprocess::fit_standardize;
use crate::var::{fit_var, VarModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "D1_retrain")]
    D1Retrain,
    #[serde(rename = "D2_drift")]
    D2Drift,
    #[serde(rename = "D1_lag_depth")]
    D1LagDepth,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::D1Retrain => "D1_retrain",
            Metric::D2Drift => "D2_drift",
            Metric::D1LagDepth => "D1_lag_depth",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauDistribution {
    pub tau_minutes: f64,
    pub p: usize,
    pub values: Vec<f64>,
}

impl TauDistribution {
    pub fn median(&self) -> f64 {
        median(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metric: Metric,
    pub seed: u64,
    /// Entries per distribution. `None` for drift reports, where the number
    /// of window pairs depends on `tau`.
    pub replicate_count: Option<usize>,
    pub distributions: Vec<TauDistribution>,
}

impl ExperimentReport {
    pub fn medians(&self) -> Vec<f64> {
        self.distributions.iter().map(TauDistribution::median).collect()
    }

    /// CSV with columns `metric,tau_minutes,p,replicate,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "metric,tau_minutes,p,replicate,value")?;
        for d in &self.distributions {
            for (r, v) in d.values.iter().enumerate() {
                writeln!(out, "{},{},{},{},{}", self.metric, d.tau_minutes, d.p, r, v)?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// `sum_ij |A_ij - B_ij| / K^2`.
pub fn matrix_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::Arity {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let k = a.nrows() as f64;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / (k * k))
}

/// Mean of [`matrix_distance`] over corresponding lag matrices.
pub fn model_distance(a: &VarModel, b: &VarModel) -> Result<f64> {
    if a.order() != b.order() {
        return Err(Error::Arity {
            expected: a.order(),
            got: b.order(),
        });
    }
    let total = a
        .coefficients()
        .iter()
        .zip(b.coefficients())
        .map(|(x, y)| matrix_distance(x, y))
        .sum::<Result<f64>>()?;
    Ok(total / a.order() as f64)
}

/// Random stable VAR(p) with zero intercept.
///
/// Lag matrices `R_i` have i.i.d. uniform[-1, 1] entries and are rescaled to
/// `A_i = s^i R_i` with `s = 0.95 / rho`, `rho` the companion spectral radius
/// of the `R_i`; for `p = 1` this is `A = 0.95 R / rho(R)`. The noise
/// covariance is `D + 0.1 v v'` with `D_ii ~ uniform[0.5, 1.5]`,
/// `v ~ N(0, I)`, normalized to unit trace.
pub fn random_stable_model<R: Rng>(k: usize, p: usize, rng: &mut R) -> VarModel {
    loop {
        let raw: Vec<DMatrix<f64>> = (0..p)
            .map(|_| DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let rho = linalg::spectral_radius(&linalg::companion(&raw));
        if !(rho > 1e-6) {
            continue;
        }
        let s = 0.95 / rho;
        let coefs: Vec<DMatrix<f64>> = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| r * s.powi(i as i32 + 1))
            .collect();
        let d = DVector::from_fn(k, |_, _| rng.random_range(0.5..1.5));
        let v: DVector<f64> = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
        let mut sigma: DMatrix<f64> = DMatrix::from_diagonal(&d) + &v * v.transpose() * 0.1;
        let trace = sigma.trace();
        sigma /= trace;
        linalg::symmetrize(&mut sigma);
        if let Ok(m) = VarModel::new(DVector::zeros(k), coefs, sigma) {
            return m;
        }
    }
}

/// Where retraining experiments take their ground-truth models from.
#[derive(Debug, Clone, Copy)]
pub enum GroundTruth<'a> {
    /// Fit on standardized segments of an ambient series, one segment per replicate.
    Series(&'a [ChannelVector]),
    /// One [`random_stable_model`] of dimension `dim` per replicate.
    RandomStable { dim: usize },
    /// The same model for every replicate.
    Fixed(&'a VarModel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabConfig {
    /// Model resolution; converts `tau` minutes into samples.
    pub resolution_s: f64,
    /// Multiplier applied to the ground-truth noise covariance before
    /// simulating. Zero gives noiseless data.
    pub noise_scale: f64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            resolution_s: 0.5,
            noise_scale: 1.0,
        }
    }
}

impl LabConfig {
    pub fn tau_points(&self, tau_minutes: f64) -> Result<usize> {
        let pts = (tau_minutes * 60.0 / self.resolution_s).round();
        if !(pts >= 1.0) {
            return Err(Error::Config(format!("tau {tau_minutes} min is empty")));
        }
        Ok(pts as usize)
    }
}

/// SplitMix64 finalizer over the experiment seed and two stream indices.
pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn segment_start(n: usize, len: usize, replicates: usize, r: usize) -> usize {
    if replicates * len <= n {
        r * len
    } else if replicates == 1 {
        0
    } else {
        ((n - len) as f64 * r as f64 / (replicates - 1) as f64).round() as usize
    }
}

fn ground_truth(
    source: &GroundTruth<'_>,
    p: usize,
    len: usize,
    replicates: usize,
    r: usize,
    seed: u64,
) -> Result<VarModel> {
    match *source {
        GroundTruth::Series(series) => {
            if series.len() < len {
                return Err(Error::Length {
                    needed: len,
                    got: series.len(),
                });
            }
            let start = segment_start(series.len(), len, replicates, r);
            let (_, z) = fit_standardize(&series[start..start + len])?;
            fit_var(&z, p)
        }
        GroundTruth::RandomStable { dim } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA11CE, r as u64));
            Ok(random_stable_model(dim, p, &mut rng))
        }
        GroundTruth::Fixed(m) => {
            if m.order() != p {
                return Err(Error::Arity {
                    expected: p,
                    got: m.order(),
                });
            }
            Ok(m.clone())
        }
    }
}

fn with_noise_scale(m: VarModel, scale: f64) -> Result<VarModel> {
    if scale == 1.0 {
        return Ok(m);
    }
    VarModel::new(
        m.intercept().clone(),
        m.coefficients().to_vec(),
        m.sigma() * scale,
    )
}

/// One retraining trial: ground truth -> simulate `len` points -> refit -> D1.
pub fn retrain_once(
    source: &GroundTruth<'_>,
    p: usize,
    len: usize,
    replicates: usize,
    replicate: usize,
    seed: u64,
    sim_seed: u64,
    cfg: &LabConfig,
) -> Result<f64> {
    let truth = ground_truth(source, p, len, replicates, replicate, seed)?;
    let truth = with_noise_scale(truth, cfg.noise_scale)?;
    let sim = truth.simulate(len, sim_seed)?;
    let refit = fit_var(&sim, p)?;
    model_distance(&refit, &truth)
}

fn run_pairs(
    metric: Metric,
    source: &GroundTruth<'_>,
    pairs: &[(usize, f64)],
    replicates: usize,
    seed: u64,
    cfg: &LabConfig,
) -> Result<ExperimentReport> {
    if replicates == 0 {
        return Err(Error::Config("replicates must be >= 1".into()));
    }
    let lens = pairs
        .iter()
        .map(|&(_, tau)| cfg.tau_points(tau))
        .collect::<Result<Vec<_>>>()?;
    if let GroundTruth::Series(s) = source {
        let needed = lens.iter().copied().max().unwrap_or(0);
        if s.len() < needed {
            return Err(Error::Length {
                needed,
                got: s.len(),
            });
        }
    }
    let jobs: Vec<(usize, usize)> = (0..pairs.len())
        .flat_map(|i| (0..replicates).map(move |r| (i, r)))
        .collect();
    let values = jobs
        .par_iter()
        .map(|&(i, r)| {
            let sim_seed = derive_seed(seed, i as u64 + 1, r as u64);
            retrain_once(source, pairs[i].0, lens[i], replicates, r, seed, sim_seed, cfg)
        })
        .collect::<Result<Vec<f64>>>()?;
    let distributions = pairs
        .iter()
        .zip(values.chunks(replicates))
        .map(|(&(p, tau), chunk)| TauDistribution {
            tau_minutes: tau,
            p,
            values: chunk.to_vec(),
        })
        .collect();
    Ok(ExperimentReport {
        metric,
        seed,
        replicate_count: Some(replicates),
        distributions,
    })
}

/// VAR(1) retraining error over a grid of training lengths.
pub fn retrain_error_experiment(
    source: &GroundTruth<'_>,
    tau_grid: &[f64],
    replicates: usize,
    seed: u64,
    cfg: &LabConfig,
) -> Result<ExperimentReport> {
    let pairs: Vec<(usize, f64)> = tau_grid.iter().map(|&t| (1, t)).collect();
    run_pairs(Metric::D1Retrain, source, &pairs, replicates, seed, cfg)
}

/// Retraining error per `(p, tau)` pair.
pub fn lag_depth_experiment(
    source: &GroundTruth<'_>,
    pairs: &[(usize, f64)],
    replicates: usize,
    seed: u64,
    cfg: &LabConfig,
) -> Result<ExperimentReport> {
    run_pairs(Metric::D1LagDepth, source, pairs, replicates, seed, cfg)
}

/// D2 between VAR(1) fits on consecutive windows tiling `series`.
pub fn drift_experiment(
    series: &[ChannelVector],
    tau_grid: &[f64],
    cfg: &LabConfig,
) -> Result<ExperimentReport> {
    let mut distributions = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let len = cfg.tau_points(tau)?;
        let pairs = series.len() / (2 * len);
        if pairs == 0 {
            return Err(Error::Length {
                needed: 2 * len,
                got: series.len(),
            });
        }
        let values = (0..pairs)
            .into_par_iter()
            .map(|i| {
                let start = 2 * i * len;
                let fit = |s: &[ChannelVector]| -> Result<VarModel> {
                    let (_, z) = fit_standardize(s)?;
                    fit_var(&z, 1)
                };
                let a = fit(&series[start..start + len])?;
                let b = fit(&series[start + len..start + 2 * len])?;
                model_distance(&a, &b)
            })
            .collect::<Result<Vec<f64>>>()?;
        distributions.push(TauDistribution {
            tau_minutes: tau,
            p: 1,
            values,
        });
    }
    Ok(ExperimentReport {
        metric: Metric::D2Drift,
        seed: 0,
        replicate_count: None,
        distributions,
    })
}
