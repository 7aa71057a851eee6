use chrono::{DateTime, Utc};
use nalgebra::{DMatrix, DVector};

use super::ResidualScore;
use crate::error::{Error, Result};
use crate::ingest::CHANNEL_COUNT;
use crate::linalg;
use crate::var::VarModel;

/// `sqrt(r' Sigma^-1 r)`. `sigma` must be symmetric positive definite.
pub fn mahalanobis_score(residual: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    Ok(Scorer::new(sigma)?.mahalanobis(residual))
}

/// Per-channel `|r_k - E[r_k | r_-k]| / sqrt(Var[r_k | r_-k])`.
///
/// Computed through the precision matrix `P = Sigma^-1`: the conditional
/// residual is `(P r)_k / P_kk` and the conditional variance is `1 / P_kk`.
pub fn conditional_scores(residual: &[f64], sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(Scorer::new(sigma)?.conditional(residual))
}

/// Scoring with the factorization of one covariance cached.
#[derive(Debug, Clone)]
pub struct Scorer {
    lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    cond_scale: Vec<f64>,
}

impl Scorer {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() || sigma.nrows() == 0 {
            return Err(Error::Validation("covariance must be a non-empty square matrix".into()));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("covariance has non-finite entries".into()));
        }
        let asym = (sigma - sigma.transpose()).amax();
        if asym > 1e-10 * sigma.amax() {
            return Err(Error::Numeric("covariance is not symmetric".into()));
        }
        let chol = linalg::cholesky(sigma)?;
        let mut precision = chol.inverse();
        linalg::symmetrize(&mut precision);
        let cond_scale = (0..precision.nrows())
            .map(|k| {
                let pkk = precision[(k, k)];
                if pkk > 0.0 && pkk.is_finite() {
                    Ok(pkk.sqrt())
                } else {
                    Err(Error::Numeric(format!(
                        "conditional variance of channel {k} is not positive"
                    )))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            lower: chol.l(),
            precision,
            cond_scale,
        })
    }

    /// Scorer for `model`'s regularized noise covariance.
    pub fn for_model(model: &VarModel) -> Result<Self> {
        Self::new(&model.regularized_sigma())
    }

    pub fn dim(&self) -> usize {
        self.cond_scale.len()
    }

    pub fn mahalanobis(&self, residual: &[f64]) -> f64 {
        let r = DVector::from_column_slice(residual);
        let w = self
            .lower
            .solve_lower_triangular(&r)
            .expect("Cholesky factor has a positive diagonal");
        w.norm()
    }

    pub fn conditional(&self, residual: &[f64]) -> Vec<f64> {
        let r = DVector::from_column_slice(residual);
        let pr = &self.precision * r;
        pr.iter()
            .zip(&self.cond_scale)
            .map(|(v, s)| v.abs() / s)
            .collect()
    }

    pub fn score(&self, timestamp: DateTime<Utc>, residual: [f64; CHANNEL_COUNT]) -> ResidualScore {
        let cond = self.conditional(&residual);
        ResidualScore {
            timestamp,
            residual,
            mahalanobis: self.mahalanobis(&residual),
            conditional: [cond[0], cond[1], cond[2], cond[3]],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_covariance() {
        let eye = DMatrix::<f64>::identity(4, 4);
        assert_eq!(mahalanobis_score(&[0.0; 4], &eye).unwrap(), 0.0);
        let m = mahalanobis_score(&[3.0, 4.0, 0.0, 0.0], &eye).unwrap();
        assert!((m - 5.0).abs() < 1e-12);
        let c = conditional_scores(&[3.0, -4.0, 0.0, 0.0], &eye).unwrap();
        for (a, b) in c.iter().zip([3.0, 4.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_diagonal() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 1.0, 1.0]));
        let m = mahalanobis_score(&[2.0, 0.0, 0.0, 0.0], &sigma).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlated_pair_conditional() {
        // Var(r1 | r2) = 1 - rho^2, E[r1 | r2] = rho r2.
        let rho = 0.8;
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let r = [1.0, 1.0];
        let c = conditional_scores(&r, &sigma).unwrap();
        let expected = (1.0 - rho) / (1.0 - rho * rho as f64).sqrt();
        assert!((c[0] - expected).abs() < 1e-12);
        assert!((c[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_covariance() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            mahalanobis_score(&[1.0, 0.0], &singular),
            Err(Error::Numeric(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(Scorer::new(&asym), Err(Error::Numeric(_))));
    }
}
