//! Linear DSTM (vector autoregression at the forecast lead) and its quadratic
//! extension with pairwise products of the state (GQN).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::EmbeddedSeries;
use crate::sampler::SamplerData;

use super::regression::least_squares;

/// Current-time input block `X_t` of an embedded series (drops the intercept
/// row and the lagged copies).
pub(crate) fn current_inputs(inputs: &EmbeddedSeries) -> DMatrix<f64> {
    inputs.values.rows(1, inputs.n_x).into_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDstm {
    /// `n_y × n_x`.
    pub a: DMatrix<f64>,
    pub resid_cov: DMatrix<f64>,
    pub ridge_fallback: bool,
}

impl LinearDstm {
    /// Point forecasts for each input column.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.a.ncols() {
            return Err(Error::dims("linear predict", self.a.ncols(), x.nrows()));
        }
        Ok(&self.a * x)
    }
}

/// `Y_{t+lead} = A X_t + ζ`, fitted by least squares on the training pairs.
pub fn fit_linear_dstm(data: &SamplerData) -> Result<LinearDstm> {
    let x = current_inputs(&data.inputs);
    let fit = least_squares(&x.transpose(), &data.responses.transpose())?;
    Ok(LinearDstm {
        a: fit.coef.transpose(),
        resid_cov: fit.resid_cov,
        ridge_fallback: fit.ridge_fallback,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GqnModel {
    /// `n_y × n_x` linear weights.
    pub a: DMatrix<f64>,
    /// One symmetric `n_x × n_x` matrix per response, so the quadratic term
    /// of response `i` is `x′ B_i x`.
    pub b: Vec<DMatrix<f64>>,
    pub resid_cov: DMatrix<f64>,
    pub ridge_fallback: bool,
}

/// Design row `[x_k ; x_k x_l (k ≤ l)]`.
fn quadratic_design(x: &DMatrix<f64>, quadratic: bool) -> DMatrix<f64> {
    let (n_x, n) = x.shape();
    let n_q = if quadratic { n_x * (n_x + 1) / 2 } else { 0 };
    let mut d = DMatrix::zeros(n, n_x + n_q);
    for t in 0..n {
        for k in 0..n_x {
            d[(t, k)] = x[(k, t)];
        }
        if quadratic {
            let mut c = n_x;
            for k in 0..n_x {
                for l in k..n_x {
                    d[(t, c)] = x[(k, t)] * x[(l, t)];
                    c += 1;
                }
            }
        }
    }
    d
}

impl GqnModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.a.ncols() {
            return Err(Error::dims("gqn predict", self.a.ncols(), x.nrows()));
        }
        let mut out = &self.a * x;
        for (t, col) in x.column_iter().enumerate() {
            for (i, b) in self.b.iter().enumerate() {
                out[(i, t)] += (col.transpose() * b * col)[(0, 0)];
            }
        }
        Ok(out)
    }
}

/// GQN fit. With `quadratic = false` the product terms are held at zero and
/// the fit coincides with [`fit_linear_dstm`].
pub fn fit_gqn(data: &SamplerData, quadratic: bool) -> Result<GqnModel> {
    let x = current_inputs(&data.inputs);
    let n_x = x.nrows();
    let design = quadratic_design(&x, quadratic);
    let fit = least_squares(&design, &data.responses.transpose())?;
    let a = fit.coef.rows(0, n_x).transpose();
    let b = (0..data.n_y())
        .map(|i| {
            let mut m = DMatrix::zeros(n_x, n_x);
            if quadratic {
                let mut c = n_x;
                for k in 0..n_x {
                    for l in k..n_x {
                        let v = fit.coef[(c, i)];
                        if k == l {
                            m[(k, k)] = v;
                        } else {
                            m[(k, l)] = v / 2.0;
                            m[(l, k)] = v / 2.0;
                        }
                        c += 1;
                    }
                }
            }
            m
        })
        .collect();
    Ok(GqnModel {
        a,
        b,
        resid_cov: fit.resid_cov,
        ridge_fallback: fit.ridge_fallback,
    })
}

/// Coefficient on the product `x_k x_l` for response `i` (the same for
/// `(k, l)` and `(l, k)`).
pub fn gqn_product_effect(model: &GqnModel, i: usize, k: usize, l: usize) -> f64 {
    if k == l {
        model.b[i][(k, k)]
    } else {
        model.b[i][(k, l)] + model.b[i][(l, k)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar_series(n_y: usize, t: usize, coef: f64, noise: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = DMatrix::zeros(n_y, t);
        for k in 0..n_y {
            y[(k, 0)] = 1.0 + k as f64;
        }
        for s in 1..t {
            for k in 0..n_y {
                let z: f64 = StandardNormal.sample(&mut rng);
                y[(k, s)] = coef * y[(k, s - 1)] + noise * z;
            }
        }
        y
    }

    fn pairs(x: DMatrix<f64>, y: DMatrix<f64>) -> SamplerData {
        SamplerData::new(crate::model::build_embedding(&x, 0, 0).unwrap(), y).unwrap()
    }

    #[test]
    fn noiseless_ar_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(3, 30, |_, _| StandardNormal.sample(&mut rng));
        let fit = fit_linear_dstm(&pairs(x.clone(), &x * 0.5)).unwrap();
        assert!(!fit.ridge_fallback);
        assert!((&fit.a - DMatrix::identity(3, 3) * 0.5).amax() < 1e-8);
        assert!(fit.resid_cov.amax() < 1e-16);
    }

    #[test]
    fn white_noise_gives_near_zero_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DMatrix::from_fn(2, 4000, |_, _| StandardNormal.sample(&mut rng));
        let data = SamplerData::paired(&y, &y, 0, 0, 1, 4000).unwrap();
        let fit = fit_linear_dstm(&data).unwrap();
        assert!(fit.a.amax() < 0.06, "{}", fit.a);
        // closed form: residual covariance is the sample second moment minus the fitted part
        let resp = &data.responses;
        let x = current_inputs(&data.inputs);
        let direct_a = (resp * x.transpose()) * (&x * x.transpose()).try_inverse().unwrap();
        assert!((&direct_a - &fit.a).amax() < 1e-10);
        let r = resp - &direct_a * &x;
        let cov = &r * r.transpose() / resp.ncols() as f64;
        assert!((cov - &fit.resid_cov).amax() < 1e-10);
    }

    #[test]
    fn short_series_uses_ridge() {
        let y = ar_series(5, 4, 0.9, 1.0, 4);
        let data = SamplerData::paired(&y, &y, 0, 0, 1, 4).unwrap();
        assert!(fit_linear_dstm(&data).unwrap().ridge_fallback);
    }

    #[test]
    fn scalar_quadratic_recovery() {
        let x = DMatrix::from_row_slice(1, 6, &[0.9, -0.4, 0.3, 1.2, -1.1, 0.7]);
        let g = fit_gqn(&pairs(x.clone(), x.map(|v| v * v)), true).unwrap();
        assert!(g.a[(0, 0)].abs() < 1e-8);
        assert!((g.b[0][(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn product_effect_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = DMatrix::from_fn(3, 200, |_, _| StandardNormal.sample(&mut rng));
        let data = SamplerData::paired(&y, &y, 0, 0, 1, 200).unwrap();
        let g = fit_gqn(&data, true).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    assert_eq!(gqn_product_effect(&g, i, k, l), gqn_product_effect(&g, i, l, k));
                }
            }
        }
    }

    #[test]
    fn gqn_nests_linear_on_linear_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_row_slice(2, 2, &[0.6, -0.2, 0.1, 0.7]);
        let x = DMatrix::from_fn(2, 40, |_, _| StandardNormal.sample(&mut rng));
        let data = pairs(x.clone(), &a * &x);
        let lin = fit_linear_dstm(&data).unwrap();
        let gqn = fit_gqn(&data, true).unwrap();
        let diff = lin.predict(&x).unwrap() - gqn.predict(&x).unwrap();
        assert!(diff.amax() < 1e-6);
        let zeroed = fit_gqn(&data, false).unwrap();
        assert!((lin.predict(&x).unwrap() - zeroed.predict(&x).unwrap()).amax() < 1e-12);
    }
}
