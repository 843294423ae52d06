//! Chain driver: initialization, burn-in with adaptation, thinning, and
//! independent chains merged in chain order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RnnWeights;
use crate::par::{derive_seed, try_map_indexed, Execution};
use crate::priors::{sample_prior_with, Dims, HyperParams, IndicatorMasks};

use super::kernel::{AcceptanceStats, Sampler, StepOptions, TARGET_ACCEPT};
use super::state::SamplerData;

/// Run-length and tuning settings for the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_h: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub likelihood_weight: f64,
    pub expansion: bool,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_h: 20,
            iterations: 2000,
            burn_in: 1000,
            thin: 1,
            chains: 1,
            seed: 1,
            likelihood_weight: 1.0,
            expansion: true,
            target_accept: TARGET_ACCEPT,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_h == 0 {
            return bad("n_h must be positive");
        }
        if self.thin == 0 {
            return bad("thin must be positive");
        }
        if self.chains == 0 {
            return bad("chains must be positive");
        }
        if self.burn_in >= self.iterations {
            return bad("burn_in must be smaller than iterations");
        }
        if !(0.0..=1.0).contains(&self.likelihood_weight) {
            return bad("likelihood_weight must be in [0, 1]");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must be in (0, 1)");
        }
        Ok(())
    }

    /// Number of retained draws per chain.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn step_options(&self) -> StepOptions {
        StepOptions {
            likelihood_weight: self.likelihood_weight,
            expansion: self.expansion,
            target_accept: self.target_accept,
        }
    }
}

/// Starting point of a chain.
#[derive(Debug, Clone, Default)]
pub enum Init {
    /// A draw from the prior (with `σ²_ε` reset to 1 if it is extreme).
    #[default]
    Prior,
    Given(RnnWeights, IndicatorMasks),
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub chain: usize,
    /// 1-based iteration index within the chain.
    pub iteration: u64,
    pub weights: RnnWeights,
    pub masks: IndicatorMasks,
}

/// Diagnostics recorded for every retained draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub chain: usize,
    pub draw: usize,
    pub iteration: u64,
    pub delta: f64,
    pub sigma2_eps: f64,
    pub log_lik: f64,
    pub acc_w: f64,
    pub acc_alpha: f64,
    pub acc_u: f64,
    pub acc_delta: f64,
    pub included_w: usize,
    pub included_u: usize,
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub draws: Vec<Draw>,
    pub trace: Vec<TraceRow>,
    /// Acceptance counts per chain over the whole run.
    pub stats: Vec<AcceptanceStats>,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dims(&self) -> Option<Dims> {
        self.draws.first().map(|d| Dims {
            n_h: d.weights.n_h(),
            n_in: d.weights.n_in(),
            n_y: d.weights.n_y(),
        })
    }
}

fn initial_state<R: rand::Rng + ?Sized>(
    init: &Init,
    hp: &HyperParams,
    dims: Dims,
    rng: &mut R,
) -> (RnnWeights, IndicatorMasks) {
    match init {
        Init::Given(w, m) => (w.clone(), m.clone()),
        Init::Prior => {
            let (mut w, m) = sample_prior_with(hp, dims, rng);
            if !(1e-6..=1e6).contains(&w.sigma2_eps) {
                w.sigma2_eps = 1.0;
            }
            (w, m)
        }
    }
}

/// Runs one chain; `chain` selects the derived random stream.
pub fn run_chain(
    data: &SamplerData,
    hp: &HyperParams,
    cfg: &SamplerConfig,
    chain: usize,
    init: &Init,
) -> Result<(Vec<Draw>, Vec<TraceRow>, AcceptanceStats)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, chain as u64));
    let dims = Dims {
        n_h: cfg.n_h,
        n_in: data.inputs.dim(),
        n_y: data.n_y(),
    };
    let (w, m) = initial_state(init, hp, dims, &mut rng);
    let mut sampler = Sampler::new(data, hp, w, m, cfg.step_options())?;
    let mut draws = Vec::with_capacity(cfg.retained());
    let mut trace = Vec::with_capacity(cfg.retained());
    for it in 0..cfg.iterations {
        if it == cfg.burn_in {
            sampler.freeze_adaptation();
        }
        sampler.iterate(&mut rng)?;
        if it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 {
            let st = sampler.state();
            let stats = sampler.stats();
            trace.push(TraceRow {
                chain,
                draw: draws.len(),
                iteration: it as u64 + 1,
                delta: st.weights.delta,
                sigma2_eps: st.weights.sigma2_eps,
                log_lik: st.log_likelihood,
                acc_w: stats.w.rate(),
                acc_alpha: stats.alpha.rate(),
                acc_u: stats.u.rate(),
                acc_delta: stats.delta.rate(),
                included_w: st.masks.gamma_w.iter().filter(|&&g| g).count(),
                included_u: st.masks.gamma_u.iter().filter(|&&g| g).count(),
            });
            draws.push(Draw {
                chain,
                iteration: it as u64 + 1,
                weights: st.weights.clone(),
                masks: st.masks.clone(),
            });
        }
    }
    Ok((draws, trace, sampler.stats()))
}

/// Runs `cfg.chains` independent chains and concatenates them in order.
pub fn run_chains(
    data: &SamplerData,
    hp: &HyperParams,
    cfg: &SamplerConfig,
    init: &Init,
    exec: Execution,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    hp.validate()?;
    let runs = try_map_indexed(exec, cfg.chains, |c| run_chain(data, hp, cfg, c, init))?;
    let mut out = PosteriorDraws {
        draws: Vec::new(),
        trace: Vec::new(),
        stats: Vec::new(),
        seed: cfg.seed,
    };
    for (d, t, s) in runs {
        out.draws.extend(d);
        out.trace.extend(t);
        out.stats.push(s);
    }
    Ok(out)
}
