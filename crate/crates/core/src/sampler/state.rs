use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{build_embedding, EmbeddedSeries, RnnWeights};
use crate::priors::IndicatorMasks;

use super::transform::t_alpha;

/// Standardized training data: embedded inputs and aligned responses.
#[derive(Debug, Clone)]
pub struct SamplerData {
    pub inputs: EmbeddedSeries,
    /// `n_y × T`, column `t` is the response paired with input column `t`.
    pub responses: DMatrix<f64>,
}

impl SamplerData {
    pub fn new(inputs: EmbeddedSeries, responses: DMatrix<f64>) -> Result<Self> {
        if inputs.len() != responses.ncols() {
            return Err(Error::dims("sampler data", inputs.len(), responses.ncols()));
        }
        if inputs.is_empty() {
            return Err(Error::InvalidConfig("no training pairs".into()));
        }
        if responses.iter().chain(inputs.values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sampler data"));
        }
        Ok(SamplerData { inputs, responses })
    }

    /// Pairs the embedding of `raw_inputs` at time `s` with `raw_responses`
    /// at `s + lead`, for every response time below `response_end`.
    ///
    /// ```text
    /// inputs     X_{s-mτ} .. X_{s-τ} X_s
    ///                                 |---- lead ----|
    /// responses                                     Y_{s+lead}
    /// ```
    pub fn paired(
        raw_inputs: &DMatrix<f64>,
        raw_responses: &DMatrix<f64>,
        tau: usize,
        m: usize,
        lead: usize,
        response_end: usize,
    ) -> Result<Self> {
        if raw_inputs.ncols() != raw_responses.ncols() {
            return Err(Error::dims("paired series", raw_inputs.ncols(), raw_responses.ncols()));
        }
        if response_end > raw_responses.ncols() {
            return Err(Error::dims("paired series end", raw_responses.ncols(), response_end));
        }
        let input_end = response_end
            .checked_sub(lead)
            .ok_or(Error::InsufficientHistory { needed: lead, available: response_end })?;
        let inputs = build_embedding(&raw_inputs.columns(0, input_end).into_owned(), tau, m)?;
        let first = inputs.t0 + lead;
        let responses = raw_responses.columns(first, response_end - first).into_owned();
        SamplerData::new(inputs, responses)
    }

    pub fn len(&self) -> usize {
        self.responses.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.ncols() == 0
    }

    pub fn n_y(&self) -> usize {
        self.responses.nrows()
    }
}

/// Expansion parameters of the current iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionParams {
    pub alpha: DMatrix<f64>,
    pub alpha0: DMatrix<f64>,
    pub sigma2_alpha: f64,
}

/// Full sampler state.
///
/// After every complete iteration `t_α(w_tilde) == weights.w` (to 1e-10).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub weights: RnnWeights,
    pub masks: IndicatorMasks,
    pub expansion: ExpansionParams,
    pub w_tilde: DMatrix<f64>,
    pub log_likelihood: f64,
}

impl ChainState {
    /// Max-abs gap between `t_α(W̃)` and the stored `W`.
    pub fn transform_gap(&self, a_w: f64) -> f64 {
        t_alpha(&self.w_tilde, &self.expansion.alpha, a_w)
            .map(|w| (w - &self.weights.w).amax())
            .unwrap_or(f64::INFINITY)
    }
}
