//! VAR(p) estimation, prediction, forecasting, and simulation.
//!
//! `y_t = c + A_1 y_{t-1} + ... + A_p y_{t-p} + u_t`, `u_t ~ N(0, Sigma)`.
//!
//! Lag arguments are always given in chronological order: for a model of
//! order `p`, `lags[p - 1]` is `y_{t-1}` and `lags[0]` is `y_{t-p}`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative ridge added to `Sigma` before any factorization or inversion.
pub const SIGMA_REGULARIZATION: f64 = 1e-8;

/// Steps simulated and discarded before [`VarModel::simulate`] output starts.
pub const BURN_IN: usize = 200;

/// Columns whose QR pivot falls below this (after unit-norm scaling) make
/// the design rank deficient.
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VarModelRecord", try_from = "VarModelRecord")]
pub struct VarModel {
    intercept: DVector<f64>,
    coefs: Vec<DMatrix<f64>>,
    sigma: DMatrix<f64>,
    trained_on: usize,
}

impl VarModel {
    pub fn new(
        intercept: DVector<f64>,
        coefs: Vec<DMatrix<f64>>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let k = intercept.len();
        if k == 0 || coefs.is_empty() {
            return Err(Error::Validation("VAR model needs K >= 1 and p >= 1".into()));
        }
        if coefs.iter().any(|a| a.shape() != (k, k)) || sigma.shape() != (k, k) {
            return Err(Error::Arity {
                expected: k,
                got: coefs
                    .iter()
                    .map(|a| a.nrows())
                    .find(|&r| r != k)
                    .unwrap_or(sigma.nrows()),
            });
        }
        let finite = intercept.iter().all(|v| v.is_finite())
            && coefs.iter().all(|a| a.iter().all(|v| v.is_finite()))
            && sigma.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("VAR model has non-finite entries".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-12 * sigma.amax().max(1.0) {
            return Err(Error::Validation(format!(
                "noise covariance is not symmetric (max deviation {asym:e})"
            )));
        }
        let mut sigma = sigma;
        linalg::symmetrize(&mut sigma);
        Ok(Self {
            intercept,
            coefs,
            sigma,
            trained_on: 0,
        })
    }

    /// Builds a model from row-major slices.
    pub fn from_rows(intercept: &[f64], coefs: &[&[f64]], sigma: &[f64]) -> Result<Self> {
        let k = intercept.len();
        let mat = |s: &[f64]| -> Result<DMatrix<f64>> {
            if s.len() != k * k {
                return Err(Error::Arity {
                    expected: k * k,
                    got: s.len(),
                });
            }
            Ok(DMatrix::from_row_slice(k, k, s))
        };
        let coefs = coefs.iter().map(|a| mat(a)).collect::<Result<Vec<_>>>()?;
        Self::new(DVector::from_column_slice(intercept), coefs, mat(sigma)?)
    }

    pub fn order(&self) -> usize {
        self.coefs.len()
    }

    pub fn dim(&self) -> usize {
        self.intercept.len()
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    /// `A_1 .. A_p`.
    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coefs
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Number of regression rows the model was estimated from (0 if built by hand).
    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    /// `Sigma + eps * trace(Sigma) / K * I`.
    pub fn regularized_sigma(&self) -> DMatrix<f64> {
        let k = self.dim();
        let ridge = SIGMA_REGULARIZATION * self.sigma.trace() / k as f64;
        &self.sigma + DMatrix::<f64>::identity(k, k) * ridge
    }

    pub fn companion_spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&linalg::companion(&self.coefs))
    }

    pub fn is_stable(&self) -> bool {
        self.companion_spectral_radius() < 1.0
    }

    /// `(I - sum A_i)^-1 c`.
    pub fn stationary_mean(&self) -> Result<DVector<f64>> {
        let k = self.dim();
        let mut m = DMatrix::<f64>::identity(k, k);
        for a in &self.coefs {
            m -= a;
        }
        m.lu()
            .solve(&self.intercept)
            .ok_or_else(|| Error::Numeric("I - sum(A_i) is singular".into()))
    }

    /// Stationary covariance `Gamma(0)` of a stable model.
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>> {
        self.ensure_stable()?;
        let k = self.dim();
        let f = linalg::companion(&self.coefs);
        let mut q = DMatrix::zeros(f.nrows(), f.nrows());
        q.view_mut((0, 0), (k, k)).copy_from(&self.sigma);
        let g = linalg::discrete_lyapunov(&f, &q)?;
        Ok(g.view((0, 0), (k, k)).into_owned())
    }

    fn ensure_stable(&self) -> Result<()> {
        let rho = self.companion_spectral_radius();
        if rho < 1.0 {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "unstable VAR model: companion spectral radius {rho:.6} >= 1"
            )))
        }
    }

    fn check_lags<S: AsRef<[f64]>>(&self, lags: &[S]) -> Result<()> {
        if lags.len() != self.order() {
            return Err(Error::Arity {
                expected: self.order(),
                got: lags.len(),
            });
        }
        if let Some(bad) = lags.iter().find(|l| l.as_ref().len() != self.dim()) {
            return Err(Error::Arity {
                expected: self.dim(),
                got: bad.as_ref().len(),
            });
        }
        Ok(())
    }

    fn predict_unchecked<S: AsRef<[f64]>>(&self, lags: &[S]) -> Vec<f64> {
        let p = self.order();
        let k = self.dim();
        let mut out: Vec<f64> = self.intercept.iter().copied().collect();
        for (i, a) in self.coefs.iter().enumerate() {
            let y = lags[p - 1 - i].as_ref();
            for c in 0..k {
                let yc = y[c];
                if yc == 0.0 {
                    continue;
                }
                let col = a.column(c);
                for r in 0..k {
                    out[r] += col[r] * yc;
                }
            }
        }
        out
    }

    /// One-step prediction `c + sum A_i y_{t-i}`.
    pub fn predict_one<S: AsRef<[f64]>>(&self, lags: &[S]) -> Result<Vec<f64>> {
        self.check_lags(lags)?;
        Ok(self.predict_unchecked(lags))
    }

    /// Iterated `q`-step forecast; each forecast is fed back as the newest lag.
    pub fn forecast<S: AsRef<[f64]>>(&self, lags: &[S], q: usize) -> Result<Vec<Vec<f64>>> {
        self.check_lags(lags)?;
        if q == 0 {
            return Err(Error::Validation("forecast horizon must be >= 1".into()));
        }
        let mut window: Vec<Vec<f64>> = lags.iter().map(|l| l.as_ref().to_vec()).collect();
        let mut out = Vec::with_capacity(q);
        for _ in 0..q {
            let next = self.predict_unchecked(&window);
            window.remove(0);
            window.push(next.clone());
            out.push(next);
        }
        Ok(out)
    }

    /// `prediction - observed`.
    pub fn residual<S: AsRef<[f64]>>(&self, lags: &[S], observed: &[f64]) -> Result<Vec<f64>> {
        if observed.len() != self.dim() {
            return Err(Error::Arity {
                expected: self.dim(),
                got: observed.len(),
            });
        }
        let mut r = self.predict_one(lags)?;
        for (ri, o) in r.iter_mut().zip(observed) {
            *ri -= o;
        }
        Ok(r)
    }

    /// Simulates `n` points with Gaussian noise drawn through the Cholesky
    /// factor of the regularized `Sigma`.
    ///
    /// Noisy models start at the stationary mean and discard [`BURN_IN`]
    /// steps. A model with `Sigma = 0` is deterministic: it starts from a unit
    /// Gaussian displacement around its fixed point and keeps the transient,
    /// which is the only signal it produces.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.ensure_stable()?;
        let k = self.dim();
        let p = self.order();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = self.stationary_mean()?;
        let deterministic = self.sigma.iter().all(|&v| v == 0.0);
        let factor = if deterministic {
            None
        } else {
            Some(linalg::cholesky(&self.regularized_sigma())?.l())
        };

        let mut window: Vec<Vec<f64>> = (0..p)
            .map(|_| {
                mean.iter()
                    .map(|m| {
                        if deterministic {
                            m + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                        } else {
                            *m
                        }
                    })
                    .collect()
            })
            .collect();
        let burn_in = if deterministic { 0 } else { BURN_IN };
        let mut out = Vec::with_capacity(n);
        let mut z = vec![0.0; k];
        for step in 0..burn_in + n {
            let mut next = self.predict_unchecked(&window);
            if let Some(l) = &factor {
                z.iter_mut()
                    .for_each(|zi| *zi = StandardNormal.sample(&mut rng));
                for r in 0..k {
                    let mut acc = 0.0;
                    for c in 0..=r {
                        acc += l[(r, c)] * z[c];
                    }
                    next[r] += acc;
                }
            }
            window.remove(0);
            window.push(next);
            if step >= burn_in {
                out.push(window[p - 1].clone());
            }
        }
        Ok(out)
    }

    /// Renders the model in the line-oriented text format read by
    /// [`VarModel::from_text`]. Matrices are row-major; floats round-trip.
    ///
    /// ```text
    /// var-model v1
    /// p 1
    /// k 4
    /// trained_on 1199
    /// c <k values>
    /// A1 <k*k values>
    /// sigma <k*k values>
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::from("var-model v1\n");
        let _ = writeln!(s, "p {}", self.order());
        let _ = writeln!(s, "k {}", self.dim());
        let _ = writeln!(s, "trained_on {}", self.trained_on);
        let join = |it: &mut dyn Iterator<Item = f64>| {
            it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(s, "c {}", join(&mut self.intercept.iter().copied()));
        for (i, a) in self.coefs.iter().enumerate() {
            let _ = writeln!(s, "A{} {}", i + 1, join(&mut row_major(a).into_iter()));
        }
        let _ = writeln!(s, "sigma {}", join(&mut row_major(&self.sigma).into_iter()));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("var model text: {m}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("var-model v1") {
            return Err(bad("missing `var-model v1` header".into()));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{name}`")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(format!("expected `{name}`, found `{line}`")));
            }
            Ok(parts.map(String::from).collect())
        };
        let scalar = |v: Vec<String>, name: &str| -> Result<usize> {
            v.first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("bad `{name}`")))
        };
        let floats = |v: Vec<String>, len: usize, name: &str| -> Result<Vec<f64>> {
            let out: Vec<f64> = v
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("bad number in `{name}`")))?;
            if out.len() != len {
                return Err(bad(format!("`{name}` has {} values, expected {len}", out.len())));
            }
            Ok(out)
        };
        let p = scalar(field("p")?, "p")?;
        let k = scalar(field("k")?, "k")?;
        let trained_on = scalar(field("trained_on")?, "trained_on")?;
        let c = floats(field("c")?, k, "c")?;
        let mut coefs = Vec::with_capacity(p);
        for i in 1..=p {
            let name = format!("A{i}");
            coefs.push(floats(field(&name)?, k * k, &name)?);
        }
        let sigma = floats(field("sigma")?, k * k, "sigma")?;
        let refs: Vec<&[f64]> = coefs.iter().map(Vec::as_slice).collect();
        let mut model = Self::from_rows(&c, &refs, &sigma)?;
        model.trained_on = trained_on;
        Ok(model)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Least-squares VAR(p) fit with intercept.
///
/// Each equation regresses `y_t` on `[1, y_{t-1}, .., y_{t-p}]` for
/// `t = p..n-1`; `Sigma` is the residual cross-product divided by `n - p`.
/// The design is solved by Householder QR after scaling columns to unit norm.
pub fn fit_var<S: AsRef<[f64]>>(series: &[S], p: usize) -> Result<VarModel> {
    fit_rows(series, p, |_| true)
}

/// [`fit_var`] without the regression rows that touch an excluded point,
/// as target or as lag.
pub fn fit_var_excluding<S: AsRef<[f64]>>(
    series: &[S],
    p: usize,
    exclude: &[bool],
) -> Result<VarModel> {
    if exclude.len() != series.len() {
        return Err(Error::Arity {
            expected: series.len(),
            got: exclude.len(),
        });
    }
    fit_rows(series, p, |t| !exclude[t - p..=t].iter().any(|&e| e))
}

fn fit_rows<S: AsRef<[f64]>>(series: &[S], p: usize, keep: impl Fn(usize) -> bool) -> Result<VarModel> {
    if p == 0 {
        return Err(Error::Validation("lag order must be >= 1".into()));
    }
    let n = series.len();
    let k = series.first().map(|s| s.as_ref().len()).unwrap_or(0);
    if k == 0 {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    if let Some(bad) = series.iter().find(|s| s.as_ref().len() != k) {
        return Err(Error::Arity {
            expected: k,
            got: bad.as_ref().len(),
        });
    }
    if n <= k * p + 1 {
        return Err(Error::Length {
            needed: k * p + 2,
            got: n,
        });
    }
    let targets: Vec<usize> = (p..n).filter(|&t| keep(t)).collect();
    let rows = targets.len();
    let cols = 1 + k * p;
    if rows < cols + 1 {
        return Err(Error::Length {
            needed: cols + 1,
            got: rows,
        });
    }
    let mut x = DMatrix::<f64>::zeros(rows, cols);
    let mut y = DMatrix::<f64>::zeros(rows, k);
    for (r, &t) in targets.iter().enumerate() {
        x[(r, 0)] = 1.0;
        for lag in 1..=p {
            let prev = series[t - lag].as_ref();
            for c in 0..k {
                x[(r, 1 + (lag - 1) * k + c)] = prev[c];
            }
        }
        let cur = series[t].as_ref();
        for c in 0..k {
            y[(r, c)] = cur[c];
        }
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("series contains non-finite values".into()));
    }

    let mut norms = Vec::with_capacity(cols);
    for mut col in x.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::RankDeficient);
        }
        col /= norm;
        norms.push(norm);
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= RANK_RTOL * diag_max) {
        return Err(Error::RankDeficient);
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, cols).into_owned();
    let mut b = r
        .solve_upper_triangular(&top)
        .ok_or(Error::RankDeficient)?;

    let resid = &y - &x * &b;
    for (i, norm) in norms.iter().enumerate() {
        b.row_mut(i).unscale_mut(*norm);
    }

    let intercept = b.row(0).transpose();
    let coefs = (0..p)
        .map(|lag| {
            b.rows(1 + lag * k, k).transpose()
        })
        .collect();
    let mut sigma = resid.transpose() * &resid / rows as f64;
    linalg::symmetrize(&mut sigma);
    let mut model = VarModel::new(intercept, coefs, sigma)?;
    model.trained_on = rows;
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct VarModelRecord {
    p: usize,
    k: usize,
    trained_on: usize,
    intercept: Vec<f64>,
    /// `coefficients[i]` is `A_{i+1}` as a list of rows.
    coefficients: Vec<Vec<Vec<f64>>>,
    sigma: Vec<Vec<f64>>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl From<VarModel> for VarModelRecord {
    fn from(m: VarModel) -> Self {
        Self {
            p: m.order(),
            k: m.dim(),
            trained_on: m.trained_on,
            intercept: m.intercept.iter().copied().collect(),
            coefficients: m.coefs.iter().map(to_rows).collect(),
            sigma: to_rows(&m.sigma),
        }
    }
}

impl TryFrom<VarModelRecord> for VarModel {
    type Error = Error;

    fn try_from(r: VarModelRecord) -> Result<Self> {
        let flat = |rows: &Vec<Vec<f64>>| rows.concat();
        let coefs: Vec<Vec<f64>> = r.coefficients.iter().map(flat).collect();
        if coefs.len() != r.p || r.intercept.len() != r.k {
            return Err(Error::Arity {
                expected: r.p,
                got: coefs.len(),
            });
        }
        let refs: Vec<&[f64]> = coefs.iter().map(Vec::as_slice).collect();
        let mut model = VarModel::from_rows(&r.intercept, &refs, &flat(&r.sigma))?;
        model.trained_on = r.trained_on;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_model(a: f64, c: f64, noise: f64) -> VarModel {
        let mut coef = vec![0.0; 16];
        let mut sigma = vec![0.0; 16];
        for i in 0..4 {
            coef[i * 5] = a;
            sigma[i * 5] = noise;
        }
        VarModel::from_rows(&[c; 4], &[&coef], &sigma).unwrap()
    }

    #[test]
    fn predict_constant_model() {
        let m = diag_model(0.0, 2.5, 1.0);
        let p = m.predict_one(&[[9.0, -3.0, 1.0, 7.0]]).unwrap();
        assert_eq!(p, vec![2.5; 4]);
    }

    #[test]
    fn predict_identity_dynamics() {
        let m = diag_model(1.0, 0.0, 1.0);
        let y = [1.5, -2.0, 0.25, 60.0];
        assert_eq!(m.predict_one(&[y]).unwrap(), y.to_vec());
    }

    #[test]
    fn predict_half_decay() {
        let m = diag_model(0.5, 0.0, 1.0);
        assert_eq!(m.predict_one(&[[2.0; 4]]).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn wrong_lag_count_is_arity_error() {
        let m = diag_model(0.5, 0.0, 1.0);
        let err = m.predict_one(&[[1.0; 4], [1.0; 4]]).unwrap_err();
        assert_eq!(err, Error::Arity { expected: 1, got: 2 });
        assert!(matches!(
            m.predict_one(&[[1.0; 3]]),
            Err(Error::Arity { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn forecast_fixed_point_and_decay() {
        let m = diag_model(1.0, 0.0, 1.0);
        let y = [0.3, 0.1, -0.2, 0.4];
        for f in m.forecast(&[y], 5).unwrap() {
            assert_eq!(f, y.to_vec());
        }
        let m = diag_model(0.5, 0.0, 1.0);
        for (j, f) in m.forecast(&[[1.0; 4]], 6).unwrap().iter().enumerate() {
            let expected = 0.5f64.powi(j as i32 + 1);
            assert!(f.iter().all(|v| (v - expected).abs() < 1e-15));
        }
    }

    #[test]
    fn residual_sign_convention() {
        let m = diag_model(0.0, 0.0, 1.0);
        let r = m.residual(&[[5.0; 4]], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, vec![-1.0, 0.0, 0.0, 0.0]);
        let m = diag_model(0.7, 0.1, 1.0);
        let lags = [[0.2, 0.4, -1.0, 3.0]];
        let pred = m.predict_one(&lags).unwrap();
        assert!(m.residual(&lags, &pred).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_series_is_rank_deficient() {
        let series = vec![[1.0, 2.0, 3.0, 4.0]; 50];
        assert_eq!(fit_var(&series, 1).unwrap_err(), Error::RankDeficient);
    }

    /// A single noiseless trajectory of a diagonal model with equal
    /// eigenvalues is proportional to its start vector, so the lagged
    /// regressors are collinear and the fit must refuse it.
    #[test]
    fn proportional_trajectory_is_rank_deficient() {
        let m = diag_model(0.5, 0.0, 0.0);
        let mut y = vec![vec![1.0, -2.0, 0.5, 3.0]];
        for _ in 1..100 {
            let next = m.predict_one(&[y.last().unwrap()]).unwrap();
            y.push(next);
        }
        assert_eq!(fit_var(&y, 1).unwrap_err(), Error::RankDeficient);
    }

    #[test]
    fn too_short_series() {
        let series = vec![[0.0; 4]; 5];
        assert_eq!(
            fit_var(&series, 1).unwrap_err(),
            Error::Length { needed: 6, got: 5 }
        );
    }

    #[test]
    fn unstable_simulation_rejected() {
        let m = diag_model(1.01, 0.0, 1.0);
        assert!(matches!(m.simulate(10, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn near_zero_noise_simulation_sits_at_mean() {
        let m = diag_model(0.0, 3.0, 1e-24);
        let out = m.simulate(100, 9).unwrap();
        assert!(out.iter().flatten().all(|v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn simulation_is_seeded() {
        let m = diag_model(0.6, 0.2, 0.5);
        assert_eq!(m.simulate(64, 42).unwrap(), m.simulate(64, 42).unwrap());
        assert_ne!(m.simulate(64, 42).unwrap(), m.simulate(64, 43).unwrap());
    }

    #[test]
    fn text_format_round_trip() {
        let m = VarModel::from_rows(
            &[0.1, -0.2],
            &[&[0.5, 0.1, -0.3, 0.25], &[0.01, 0.0, 0.0, -0.02]],
            &[1.0, 0.3, 0.3, 2.0 / 3.0],
        )
        .unwrap();
        let text = m.to_text();
        assert!(text.starts_with("var-model v1\np 2\nk 2\n"));
        assert_eq!(VarModel::from_text(&text).unwrap(), m);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<VarModel>(&json).unwrap(), m);
        assert!(VarModel::from_text("var-model v1\np 1\n").is_err());
    }

    #[test]
    fn asymmetric_sigma_rejected() {
        let err = VarModel::from_rows(&[0.0, 0.0], &[&[0.0; 4]], &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn stationary_moments_scalar() {
        let m = VarModel::from_rows(&[1.0], &[&[0.5]], &[0.75]).unwrap();
        assert!((m.stationary_mean().unwrap()[0] - 2.0).abs() < 1e-12);
        assert!((m.stationary_covariance().unwrap()[(0, 0)] - 1.0).abs() < 1e-12);
    }
}
