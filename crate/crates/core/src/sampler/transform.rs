//! The logistic squashing `κ` and the expansion transform `t_α` acting
//! elementwise on the recurrent weights.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative shrink applied to weights on the support boundary before `κ⁻¹`.
pub const BOUNDARY_SHRINK: f64 = 1e-12;

/// `κ(q) = −a + 2a / (1 + e^{−q})`, evaluated as `a·tanh(q/2)`.
#[inline]
pub fn kappa(q: f64, a: f64) -> f64 {
    a * (0.5 * q).tanh()
}

/// Inverse of [`kappa`]; `v` must lie strictly inside `(−a, a)`.
pub fn kappa_inv(v: f64, a: f64) -> Result<f64> {
    if !(v.abs() < a) {
        return Err(Error::OutOfSupport {
            param: "kappa_inv argument".into(),
            value: v,
            lower: -a,
            upper: a,
        });
    }
    Ok(((a + v) / (a - v)).ln())
}

/// Pulls `v` inside `|v| ≤ a·(1 − BOUNDARY_SHRINK)`; reports whether it moved.
#[inline]
pub fn clamp_interior(v: f64, a: f64) -> (f64, bool) {
    let lim = a * (1.0 - BOUNDARY_SHRINK);
    if v > lim {
        (lim, true)
    } else if v < -lim {
        (-lim, true)
    } else {
        (v, false)
    }
}

/// `ln κ'(q) = ln(2a) − q − 2 ln(1 + e^{−q})`, symmetric in `q`.
#[inline]
pub fn log_dkappa(q: f64, a: f64) -> f64 {
    let z = q.abs();
    (2.0 * a).ln() - z - 2.0 * (-z).exp().ln_1p()
}

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims("t_alpha", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

/// `t_α(W̃) = {κ(w̃_{iℓ} − α_{iℓ})}`.
pub fn t_alpha(w_tilde: &DMatrix<f64>, alpha: &DMatrix<f64>, a: f64) -> Result<DMatrix<f64>> {
    same_shape(w_tilde, alpha)?;
    Ok(w_tilde.zip_map(alpha, |w, al| kappa(w - al, a)))
}

/// Log Jacobian of `t_α` at `W̃`: sum of the per-entry log derivatives.
pub fn log_jacobian_t(w_tilde: &DMatrix<f64>, alpha: &DMatrix<f64>, a: f64) -> Result<f64> {
    same_shape(w_tilde, alpha)?;
    Ok(w_tilde
        .iter()
        .zip(alpha.iter())
        .map(|(w, al)| log_dkappa(w - al, a))
        .sum())
}
