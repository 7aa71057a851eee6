use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// VAR(p) companion matrix: `[A_1 .. A_p]` on top, identity on the subdiagonal.
pub(crate) fn companion(coefs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let k = coefs[0].nrows();
    let p = coefs.len();
    let mut f = DMatrix::zeros(k * p, k * p);
    for (i, a) in coefs.iter().enumerate() {
        f.view_mut((0, i * k), (k, k)).copy_from(a);
    }
    for i in 1..p {
        f.view_mut((i * k, (i - 1) * k), (k, k))
            .fill_with_identity();
    }
    f
}

pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Stationary covariance `G = F G F' + Q` solved in vectorized form
/// `(I - F (x) F) vec(G) = vec(Q)`.
pub(crate) fn discrete_lyapunov(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let kron = f.kronecker(f);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("Lyapunov system is singular".into()))?;
    let g = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&g + g.transpose()) * 0.5)
}

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numeric("matrix is not symmetric positive definite".into()))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}
