//! Bayesian spatio-temporal recurrent network (BAST-RNN) forecasting.
//!
//! The crate is organized by subsystem:
//!
//! - [`model`]: delay embedding, hidden-state recursion, data-stage mean
//! - [`priors`]: spike-and-slab priors and their hyperparameters
//! - [`sampler`]: the parameter-expansion MCMC sampler and posterior forecasts
//! - [`dimred`]: EOF basis reduction for high-dimensional fields
//! - [`lorenz96`]: multiscale Lorenz-96 simulator
//! - [`baselines`]: linear DSTM, GQN and ensemble quadratic ESN forecasters
//! - [`evaluate`]: MSPE, CRPS, interval coverage, region indices
//! - [`pipeline`]: configuration, CSV ingestion, standardization, batch commands
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and runs sequentially otherwise.

pub mod baselines;
pub mod dimred;
pub mod error;
pub mod evaluate;
pub mod forecast;
pub mod lorenz96;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod priors;
pub mod sampler;

pub use error::{Error, Result};
