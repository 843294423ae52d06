//! Posterior predictive forecasts from retained draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forecast::ForecastDistribution;
use crate::model::{data_stage_mean, hidden_states, EmbeddedSeries};
use crate::par::{derive_seed, try_map_indexed, Execution};

use super::chain::Draw;

/// Forecasts responses at raw times `times`, each predicted from the input
/// embedded at `time - lead`. The hidden state is run over the whole of
/// `inputs` for every draw, so `inputs` should cover the training span too.
///
/// Each draw contributes one sample per cell: its data-stage mean plus
/// `N(0, σ²_ε)` noise.
pub fn forecast(
    draws: &[Draw],
    inputs: &EmbeddedSeries,
    times: &[usize],
    lead: usize,
    seed: u64,
    exec: Execution,
) -> Result<ForecastDistribution> {
    if draws.is_empty() {
        return Err(Error::EmptySamples);
    }
    let cols = times
        .iter()
        .map(|&t| {
            t.checked_sub(lead)
                .and_then(|s| inputs.column_of(s))
                .ok_or(Error::InsufficientHistory {
                    needed: t,
                    available: inputs.t0 + inputs.len(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let last = cols.iter().copied().max().unwrap_or(0);
    let prefix = inputs.slice(0, last + 1);
    let n_y = draws[0].weights.n_y();
    let per_draw = try_map_indexed(exec, draws.len(), |d| {
        let w = &draws[d].weights;
        if w.n_y() != n_y {
            return Err(Error::dims("forecast draws", n_y, w.n_y()));
        }
        let states = hidden_states(w, &prefix)?;
        let g = data_stage_mean(w, &states)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, d as u64));
        let sd = w.sigma2_eps.sqrt();
        let mut out = vec![0.0; n_y * cols.len()];
        for k in 0..n_y {
            for (hi, &c) in cols.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[k * cols.len() + hi] = g[(k, c)] + sd * z;
            }
        }
        Ok::<_, Error>(out)
    })?;
    ForecastDistribution::from_samples(
        per_draw.concat(),
        draws.len(),
        n_y,
        times.to_vec(),
        lead,
    )
}
