//! Least squares with a ridge fallback, and the residual covariance helpers
//! shared by the regression baselines.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Singular-value ratio under which a design is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;
/// Relative ridge penalty used when the design is rank deficient.
pub const FALLBACK_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// `p × q` coefficients.
    pub coef: DMatrix<f64>,
    /// `q × q` empirical covariance of the training residuals.
    pub resid_cov: DMatrix<f64>,
    pub ridge_fallback: bool,
}

/// Regresses `targets` (`N × q`) on `design` (`N × p`).
pub fn least_squares(design: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Fit> {
    let (n, p) = design.shape();
    if targets.nrows() != n {
        return Err(Error::dims("least squares", n, targets.nrows()));
    }
    if n == 0 {
        return Err(Error::SeriesTooShort { len: 0, span: 1 });
    }
    let svd = design.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = if n >= p { s.min() } else { 0.0 };
    let (coef, ridge_fallback) = if n >= p && smax > 0.0 && smin / smax >= RANK_TOL {
        let c = svd
            .solve(targets, 0.0)
            .map_err(|e| Error::Numerical { iteration: 0, reason: e.to_string() })?;
        (c, false)
    } else {
        log::warn!("rank-deficient design ({n} x {p}); using ridge fallback");
        let gram = design.transpose() * design;
        let scale = (gram.trace() / p as f64).max(1.0);
        (ridge_solve(&gram, &(design.transpose() * targets), FALLBACK_RIDGE * scale, None)?, true)
    };
    let resid = targets - design * &coef;
    let resid_cov = resid.transpose() * &resid / n as f64;
    Ok(Fit {
        coef,
        resid_cov,
        ridge_fallback,
    })
}

/// Solves `(gram + λ·D) β = rhs`, `D` the identity except that entries listed
/// in `unpenalized` get zero.
pub fn ridge_solve(
    gram: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    lambda: f64,
    unpenalized: Option<&[usize]>,
) -> Result<DMatrix<f64>> {
    let mut a = gram.clone();
    for i in 0..a.nrows() {
        if !unpenalized.is_some_and(|u| u.contains(&i)) {
            a[(i, i)] += lambda;
        }
    }
    let chol = a.cholesky().ok_or_else(|| Error::Numerical {
        iteration: 0,
        reason: "ridge system is not positive definite".into(),
    })?;
    Ok(chol.solve(rhs))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}
