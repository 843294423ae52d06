//! Parameter-expanded Metropolis-within-Gibbs sampler for the recurrent model.
//!
//! The recurrent weights live on `[−a_w, a_w]`; the expansion step moves them
//! through an unconstrained space (`W̃ = α + κ⁻¹(W)`) and back, which lets the
//! chain cross the spike/slab boundary more freely than a plain random walk.

mod chain;
mod io;
mod kernel;
mod predict;
mod state;
pub mod transform;

pub use chain::{run_chain, run_chains, Draw, Init, PosteriorDraws, SamplerConfig, TraceRow};
pub use io::{read_draws, write_draws, write_trace, TRACE_HEADER};
pub use kernel::{
    gaussian_loglik, inclusion_probability, log_likelihood, AcceptanceStats, Counter, Sampler,
    StepOptions, TARGET_ACCEPT,
};
pub use predict::forecast;
pub use state::{ChainState, ExpansionParams, SamplerData};
