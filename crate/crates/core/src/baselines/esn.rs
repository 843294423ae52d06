//! Ensemble of quadratic-output echo state networks.
//!
//! Each member draws fixed sparse reservoir weights, runs the same scaled
//! tanh recursion as the Bayesian model, and fits only the output layer by
//! ridge regression on `(1, h, h∘h)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{data_stage_mean, hidden_states, EmbeddedSeries, RnnWeights};
use crate::par::{derive_seed, try_map_indexed, Execution};
use crate::sampler::SamplerData;

use super::regression::ridge_solve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsnConfig {
    pub ensemble_size: usize,
    pub n_h: usize,
    /// Fraction of reservoir entries set to zero.
    pub sparsity: f64,
    pub ridge_penalty: f64,
    pub a_w: f64,
    pub a_u: f64,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        EsnConfig {
            ensemble_size: 20,
            n_h: 50,
            sparsity: 0.9,
            ridge_penalty: 1.0,
            a_w: 0.2,
            a_u: 0.2,
            seed: 7,
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("esn: {m}")));
        if self.ensemble_size == 0 || self.n_h == 0 {
            return bad("ensemble_size and n_h must be positive");
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return bad("sparsity must be in [0, 1)");
        }
        if !(self.ridge_penalty >= 0.0) {
            return bad("ridge_penalty must be non-negative");
        }
        if !(self.a_w > 0.0 && self.a_u > 0.0) {
            return bad("a_w and a_u must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsnMember {
    /// Reservoir and fitted output layer; `delta` is the target spectral
    /// radius of the scaled recurrence.
    pub weights: RnnWeights,
    pub resid_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsnEnsemble {
    pub members: Vec<EsnMember>,
    pub config: EsnConfig,
}

fn sparse_uniform<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize, a: f64, sparsity: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| {
        let keep = rng.random::<f64>() >= sparsity;
        let v = rng.random_range(-a..a);
        if keep {
            v
        } else {
            0.0
        }
    })
}

/// Draws one member's reservoir.
pub fn draw_reservoir(cfg: &EsnConfig, n_in: usize, n_y: usize, seed: u64) -> RnnWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = RnnWeights::zeros(cfg.n_h, n_in, n_y);
    w.w = sparse_uniform(&mut rng, cfg.n_h, cfg.n_h, cfg.a_w, cfg.sparsity);
    w.u = sparse_uniform(&mut rng, cfg.n_h, n_in, cfg.a_u, cfg.sparsity);
    w.delta = rng.random::<f64>();
    w
}

/// `[1; h; h∘h]`, `(2n_h+1) × T`.
fn features(h: &DMatrix<f64>) -> DMatrix<f64> {
    let (n_h, t) = h.shape();
    DMatrix::from_fn(2 * n_h + 1, t, |r, c| match r {
        0 => 1.0,
        r if r <= n_h => h[(r - 1, c)],
        r => h[(r - 1 - n_h, c)].powi(2),
    })
}

fn fit_member(data: &SamplerData, cfg: &EsnConfig, seed: u64) -> Result<EsnMember> {
    let mut w = draw_reservoir(cfg, data.inputs.dim(), data.n_y(), seed);
    let states = hidden_states(&w, &data.inputs)?;
    let f = features(&states.h);
    let gram = &f * f.transpose();
    let rhs = &f * data.responses.transpose();
    let coef = ridge_solve(&gram, &rhs, cfg.ridge_penalty.max(1e-12), Some(&[0]))?;
    let n_h = cfg.n_h;
    w.mu = DVector::from_iterator(data.n_y(), coef.row(0).iter().copied());
    w.v1 = coef.rows(1, n_h).transpose();
    w.v2 = coef.rows(1 + n_h, n_h).transpose();
    let g = data_stage_mean(&w, &states)?;
    let resid = &data.responses - g;
    let resid_cov = &resid * resid.transpose() / data.len() as f64;
    w.sigma2_eps = resid_cov.trace() / data.n_y() as f64;
    Ok(EsnMember { weights: w, resid_cov })
}

pub fn fit_eqesn(data: &SamplerData, cfg: &EsnConfig, exec: Execution) -> Result<EsnEnsemble> {
    cfg.validate()?;
    let members = try_map_indexed(exec, cfg.ensemble_size, |r| {
        fit_member(data, cfg, derive_seed(cfg.seed, r as u64))
    })?;
    Ok(EsnEnsemble {
        members,
        config: cfg.clone(),
    })
}

impl EsnEnsemble {
    /// Member point forecasts (`n_y × T`) over the whole embedded series.
    pub fn member_paths(&self, inputs: &EmbeddedSeries, exec: Execution) -> Result<Vec<DMatrix<f64>>> {
        try_map_indexed(exec, self.members.len(), |r| {
            let w = &self.members[r].weights;
            data_stage_mean(w, &hidden_states(w, inputs)?)
        })
    }

    /// Ensemble-mean point forecast over the whole embedded series.
    pub fn mean_path(&self, inputs: &EmbeddedSeries, exec: Execution) -> Result<DMatrix<f64>> {
        let paths = self.member_paths(inputs, exec)?;
        let n = paths.len() as f64;
        let mut acc = paths[0].clone();
        for p in &paths[1..] {
            acc += p;
        }
        Ok(acc / n)
    }
}
