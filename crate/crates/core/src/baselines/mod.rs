//! Comparison forecasters and embedding selection.
//!
//! All baselines are fitted on the same [`SamplerData`] pairs as the Bayesian
//! model and produce the same [`ForecastDistribution`] through
//! [`mc_forecast`].

mod cv;
mod esn;
mod linear;
pub mod regression;

pub use cv::{cv_embedding, CvScores, VALIDATION_FRACTION};
pub use esn::{draw_reservoir, fit_eqesn, EsnConfig, EsnEnsemble, EsnMember};
pub use linear::{fit_gqn, fit_linear_dstm, gqn_product_effect, GqnModel, LinearDstm};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forecast::ForecastDistribution;
use crate::model::EmbeddedSeries;
use crate::par::{derive_seed, map_indexed, Execution};
#[cfg(doc)]
use crate::sampler::SamplerData;

use regression::psd_sqrt;

#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Linear(LinearDstm),
    Gqn(GqnModel),
    Eqesn(EsnEnsemble),
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Linear(_) => "linear_dstm",
            Baseline::Gqn(_) => "gqn",
            Baseline::Eqesn(_) => "e_qesn",
        }
    }

    /// Point-forecast paths (`n_y × T`, one per member) over every column of
    /// `inputs`, with the residual covariance that goes with each.
    fn paths(&self, inputs: &EmbeddedSeries, exec: Execution) -> Result<Vec<(DMatrix<f64>, &DMatrix<f64>)>> {
        let x = || inputs.values.rows(1, inputs.n_x).into_owned();
        Ok(match self {
            Baseline::Linear(m) => vec![(m.predict(&x())?, &m.resid_cov)],
            Baseline::Gqn(m) => vec![(m.predict(&x())?, &m.resid_cov)],
            Baseline::Eqesn(e) => e
                .member_paths(inputs, exec)?
                .into_iter()
                .zip(&e.members)
                .map(|(p, m)| (p, &m.resid_cov))
                .collect(),
        })
    }

    /// Point forecast at the given response times (ensemble mean for E-QESN).
    pub fn point_forecast(&self, inputs: &EmbeddedSeries, times: &[usize], lead: usize) -> Result<DMatrix<f64>> {
        let cols = input_columns(inputs, times, lead)?;
        let paths = self.paths(inputs, Execution::Sequential)?;
        let n_y = paths[0].0.nrows();
        let mut out = DMatrix::zeros(n_y, cols.len());
        for (p, _) in &paths {
            for (h, &c) in cols.iter().enumerate() {
                let mut col = out.column_mut(h);
                col += p.column(c);
            }
        }
        Ok(out / paths.len() as f64)
    }
}

fn input_columns(inputs: &EmbeddedSeries, times: &[usize], lead: usize) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            t.checked_sub(lead)
                .and_then(|s| inputs.column_of(s))
                .ok_or(Error::InsufficientHistory {
                    needed: t,
                    available: inputs.t0 + inputs.len(),
                })
        })
        .collect()
}

/// Monte Carlo forecast distribution: sample `s` takes member `s mod R`'s
/// point forecast and adds `N(0, Σ_member)` noise.
pub fn mc_forecast(
    model: &Baseline,
    inputs: &EmbeddedSeries,
    times: &[usize],
    lead: usize,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ForecastDistribution> {
    if n_samples == 0 {
        return Err(Error::EmptySamples);
    }
    let cols = input_columns(inputs, times, lead)?;
    let paths = model.paths(inputs, exec)?;
    let roots: Vec<DMatrix<f64>> = paths.iter().map(|(_, c)| psd_sqrt(c)).collect();
    let n_y = paths[0].0.nrows();
    let nh = cols.len();
    let per_sample = map_indexed(exec, n_samples, |s| {
        let r = s % paths.len();
        let (path, _) = &paths[r];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
        let mut out = vec![0.0; n_y * nh];
        for (h, &c) in cols.iter().enumerate() {
            let z = DVector::from_fn(n_y, |_, _| StandardNormal.sample(&mut rng));
            let noise = &roots[r] * z;
            for k in 0..n_y {
                out[k * nh + h] = path[(k, c)] + noise[k];
            }
        }
        out
    });
    ForecastDistribution::from_samples(per_sample.concat(), n_samples, n_y, times.to_vec(), lead)
}
