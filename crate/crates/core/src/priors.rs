//! Hyperparameters, prior log-densities and prior sampling for every
//! parameter block.
//!
//! `W` and `U` carry two-component truncated-normal mixtures on `[-a, a]`,
//! `V1`/`V2` two-component Gaussian mixtures, each selected by a Bernoulli
//! indicator (`γ = 1` picks the wide "slab" component). `μ` is Gaussian,
//! `δ ~ Unif(0, 1)` and `σ²_ε ~ IG(α_ε, β_ε)` in shape–scale form
//! (density ∝ x^{-α-1} e^{-β/x}).

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::RnnWeights;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Lorenz,
    Sst,
    Unemployment,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lorenz" => Ok(Profile::Lorenz),
            "sst" => Ok(Profile::Sst),
            "unemployment" => Ok(Profile::Unemployment),
            other => Err(Error::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub sigma2_w0: f64,
    pub sigma2_w1: f64,
    pub a_w: f64,
    pub pi_w: f64,
    pub sigma2_u0: f64,
    pub sigma2_u1: f64,
    pub a_u: f64,
    pub pi_u: f64,
    /// Per-input-column inclusion probabilities; overrides `pi_u` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_u_columns: Option<Vec<f64>>,
    pub sigma2_v10: f64,
    pub sigma2_v11: f64,
    pub pi_v1: f64,
    pub sigma2_v20: f64,
    pub sigma2_v21: f64,
    pub pi_v2: f64,
    pub sigma2_mu: f64,
    pub alpha_eps: f64,
    pub beta_eps: f64,
    pub sigma2_alpha: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            sigma2_w0: 1000.0 * 1000.0,
            sigma2_w1: 0.001,
            a_w: 0.20,
            pi_w: 0.20,
            sigma2_u0: 1000.0 * 1000.0,
            sigma2_u1: 0.0005,
            a_u: 0.20,
            pi_u: 0.025,
            pi_u_columns: None,
            sigma2_v10: 10.0,
            sigma2_v11: 0.01,
            pi_v1: 0.50,
            sigma2_v20: 0.5,
            sigma2_v21: 0.05,
            pi_v2: 0.25,
            sigma2_mu: 100.0,
            alpha_eps: 0.001,
            beta_eps: 0.001,
            sigma2_alpha: 0.10 * 0.10,
        }
    }
}

impl HyperParams {
    /// Checks ranges and the spike/slab ordering.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let variances = [
            ("sigma2_w0", self.sigma2_w0),
            ("sigma2_w1", self.sigma2_w1),
            ("sigma2_u0", self.sigma2_u0),
            ("sigma2_u1", self.sigma2_u1),
            ("sigma2_v10", self.sigma2_v10),
            ("sigma2_v11", self.sigma2_v11),
            ("sigma2_v20", self.sigma2_v20),
            ("sigma2_v21", self.sigma2_v21),
            ("sigma2_mu", self.sigma2_mu),
            ("alpha_eps", self.alpha_eps),
            ("beta_eps", self.beta_eps),
        ];
        for (name, v) in variances {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.sigma2_alpha >= 0.0 && self.sigma2_alpha.is_finite()) {
            return bad(format!("sigma2_alpha must be >= 0, got {}", self.sigma2_alpha));
        }
        if !(self.a_w > 0.0 && self.a_u > 0.0) {
            return bad("a_w and a_u must be positive".into());
        }
        if self.sigma2_w1 >= 0.01 * self.sigma2_w0 {
            return bad("spike variance sigma2_w1 must be below 0.01 * sigma2_w0".into());
        }
        if self.sigma2_u1 >= 0.01 * self.sigma2_u0 {
            return bad("spike variance sigma2_u1 must be below 0.01 * sigma2_u0".into());
        }
        let probs = [
            ("pi_w", self.pi_w),
            ("pi_u", self.pi_u),
            ("pi_v1", self.pi_v1),
            ("pi_v2", self.pi_v2),
        ];
        for (name, p) in probs.into_iter().chain(
            self.pi_u_columns
                .iter()
                .flatten()
                .map(|&p| ("pi_u_columns", p)),
        ) {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {p}"));
            }
        }
        Ok(())
    }

    /// Inclusion probability for input column `col` of `U`.
    pub fn pi_u_at(&self, col: usize) -> f64 {
        self.pi_u_columns
            .as_ref()
            .and_then(|v| v.get(col).copied())
            .unwrap_or(self.pi_u)
    }

    pub fn w_branch(&self, gamma: bool) -> TruncNormal {
        TruncNormal::new(if gamma { self.sigma2_w0 } else { self.sigma2_w1 }, self.a_w)
    }

    pub fn u_branch(&self, gamma: bool) -> TruncNormal {
        TruncNormal::new(if gamma { self.sigma2_u0 } else { self.sigma2_u1 }, self.a_u)
    }

    pub fn v1_variance(&self, gamma: bool) -> f64 {
        if gamma { self.sigma2_v10 } else { self.sigma2_v11 }
    }

    pub fn v2_variance(&self, gamma: bool) -> f64 {
        if gamma { self.sigma2_v20 } else { self.sigma2_v21 }
    }
}

/// Built-in hyperparameters.
///
/// `n_x` and `m` describe the embedded input layout; only the `sst` profile
/// uses them, to raise `π_u` to 0.05 on every lag of the first input
/// variable and on the unlagged copy of the second.
pub fn default_hyperparams(profile: Profile, n_x: usize, m: usize) -> HyperParams {
    let mut hp = HyperParams::default();
    match profile {
        Profile::Lorenz => {}
        Profile::Unemployment => {
            hp.a_w = 0.05;
            hp.a_u = 0.05;
        }
        Profile::Sst => {
            let n_in = (m + 1) * n_x + 1;
            let mut cols = vec![hp.pi_u; n_in];
            if n_x >= 1 {
                for lag in 0..=m {
                    cols[1 + lag * n_x] = 0.05;
                }
            }
            if n_x >= 2 {
                cols[2] = 0.05;
            }
            hp.pi_u_columns = Some(cols);
        }
    }
    hp
}

/// Zero-mean normal truncated to `[-a, a]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormal {
    pub sigma: f64,
    pub a: f64,
    /// `ln(Φ(a/σ) − Φ(−a/σ))`.
    pub log_mass: f64,
}

impl TruncNormal {
    pub fn new(variance: f64, a: f64) -> Self {
        let sigma = variance.sqrt();
        let mass = erf(a / (sigma * SQRT_2));
        TruncNormal {
            sigma,
            a,
            log_mass: mass.ln(),
        }
    }

    /// Log density on the support; `-inf` outside it.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x.abs() > self.a {
            return f64::NEG_INFINITY;
        }
        let z = x / self.sigma;
        -0.5 * z * z - LN_SQRT_2PI - self.sigma.ln() - self.log_mass
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -self.a {
            return 0.0;
        }
        if x >= self.a {
            return 1.0;
        }
        let mass = self.log_mass.exp();
        0.5 + 0.5 * erf(x / (self.sigma * SQRT_2)) / mass
    }

    /// Inverse-CDF draw on the truncated interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mass = self.log_mass.exp();
        let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let x = self.sigma * SQRT_2 * erf_inv(v * mass);
        x.clamp(-self.a, self.a)
    }
}

pub fn ln_normal(x: f64, variance: f64) -> f64 {
    -0.5 * x * x / variance - 0.5 * (2.0 * PI * variance).ln()
}

pub fn ln_bernoulli(gamma: bool, p: f64) -> f64 {
    if gamma { p.ln() } else { (1.0 - p).ln() }
}

/// Shape–scale inverse-gamma log density.
pub fn ln_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Draws from IG(shape, scale) as `scale / Gamma(shape, 1)`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    // Gamma(shape) underflows for tiny shapes; boost by one and correct
    // with U^{1/shape} on the log scale.
    let ln_g = if shape < 1.0 {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("shape > 0").sample(rng);
        let u: f64 = rng.random::<f64>();
        g.ln() + u.max(f64::MIN_POSITIVE).ln() / shape
    } else {
        let g: f64 = Gamma::new(shape, 1.0).expect("shape > 0").sample(rng);
        g.ln()
    };
    (scale.ln() - ln_g).exp()
}

/// Binary inclusion indicators for the four weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMasks {
    pub gamma_w: DMatrix<bool>,
    pub gamma_u: DMatrix<bool>,
    pub gamma_v1: DMatrix<bool>,
    pub gamma_v2: DMatrix<bool>,
}

impl IndicatorMasks {
    pub fn all(n_h: usize, n_in: usize, n_y: usize, value: bool) -> Self {
        IndicatorMasks {
            gamma_w: DMatrix::from_element(n_h, n_h, value),
            gamma_u: DMatrix::from_element(n_h, n_in, value),
            gamma_v1: DMatrix::from_element(n_y, n_h, value),
            gamma_v2: DMatrix::from_element(n_y, n_h, value),
        }
    }
}

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_h: usize,
    pub n_in: usize,
    pub n_y: usize,
}

/// Log prior of one `w` entry under the branch chosen by `gamma`.
pub fn log_prior_w(w: f64, gamma: bool, hp: &HyperParams) -> Result<f64> {
    if w.abs() > hp.a_w || !w.is_finite() {
        return Err(Error::OutOfSupport {
            param: "w".into(),
            value: w,
            lower: -hp.a_w,
            upper: hp.a_w,
        });
    }
    Ok(hp.w_branch(gamma).ln_pdf(w))
}

/// Log prior of one `u` entry in input column `col`.
pub fn log_prior_u(u: f64, gamma: bool, hp: &HyperParams) -> Result<f64> {
    if u.abs() > hp.a_u || !u.is_finite() {
        return Err(Error::OutOfSupport {
            param: "u".into(),
            value: u,
            lower: -hp.a_u,
            upper: hp.a_u,
        });
    }
    Ok(hp.u_branch(gamma).ln_pdf(u))
}

/// Per-block log priors (densities plus indicator Bernoulli mass).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockLogPriors {
    pub w: f64,
    pub u: f64,
    pub v1: f64,
    pub v2: f64,
    pub mu: f64,
    pub delta: f64,
    pub sigma2: f64,
}

impl BlockLogPriors {
    pub fn total(&self) -> f64 {
        self.w + self.u + self.v1 + self.v2 + self.mu + self.delta + self.sigma2
    }
}

fn check_mask_shapes(weights: &RnnWeights, masks: &IndicatorMasks) -> Result<()> {
    let pairs = [
        ("gamma_w", weights.w.shape(), masks.gamma_w.shape()),
        ("gamma_u", weights.u.shape(), masks.gamma_u.shape()),
        ("gamma_v1", weights.v1.shape(), masks.gamma_v1.shape()),
        ("gamma_v2", weights.v2.shape(), masks.gamma_v2.shape()),
    ];
    for (name, a, b) in pairs {
        if a != b {
            return Err(Error::dims(
                if name == "gamma_w" { "gamma_w" } else { "indicator masks" },
                format!("{a:?}"),
                format!("{name} {b:?}"),
            ));
        }
    }
    Ok(())
}

pub fn log_prior_blocks(
    weights: &RnnWeights,
    masks: &IndicatorMasks,
    hp: &HyperParams,
) -> Result<BlockLogPriors> {
    weights.check_shapes()?;
    check_mask_shapes(weights, masks)?;
    let mut out = BlockLogPriors::default();
    for (w, &g) in weights.w.iter().zip(masks.gamma_w.iter()) {
        out.w += log_prior_w(*w, g, hp)? + ln_bernoulli(g, hp.pi_w);
    }
    for c in 0..weights.u.ncols() {
        let pi = hp.pi_u_at(c);
        for r in 0..weights.u.nrows() {
            let g = masks.gamma_u[(r, c)];
            out.u += log_prior_u(weights.u[(r, c)], g, hp)? + ln_bernoulli(g, pi);
        }
    }
    for (v, &g) in weights.v1.iter().zip(masks.gamma_v1.iter()) {
        out.v1 += ln_normal(*v, hp.v1_variance(g)) + ln_bernoulli(g, hp.pi_v1);
    }
    for (v, &g) in weights.v2.iter().zip(masks.gamma_v2.iter()) {
        out.v2 += ln_normal(*v, hp.v2_variance(g)) + ln_bernoulli(g, hp.pi_v2);
    }
    out.mu = weights.mu.iter().map(|&m| ln_normal(m, hp.sigma2_mu)).sum();
    if !(weights.delta > 0.0 && weights.delta < 1.0) {
        return Err(Error::OutOfSupport {
            param: "delta".into(),
            value: weights.delta,
            lower: 0.0,
            upper: 1.0,
        });
    }
    out.delta = 0.0;
    if !(weights.sigma2_eps > 0.0) {
        return Err(Error::OutOfSupport {
            param: "sigma2_eps".into(),
            value: weights.sigma2_eps,
            lower: 0.0,
            upper: f64::INFINITY,
        });
    }
    out.sigma2 = ln_inv_gamma(weights.sigma2_eps, hp.alpha_eps, hp.beta_eps);
    Ok(out)
}

/// Joint log prior of all weights and indicators.
pub fn log_prior_all(weights: &RnnWeights, masks: &IndicatorMasks, hp: &HyperParams) -> Result<f64> {
    Ok(log_prior_blocks(weights, masks, hp)?.total())
}

/// Draws a full parameter set from the prior with a fresh seeded stream.
pub fn sample_prior(hp: &HyperParams, dims: Dims, seed: u64) -> (RnnWeights, IndicatorMasks) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_prior_with(hp, dims, &mut rng)
}

pub fn sample_prior_with<R: Rng + ?Sized>(
    hp: &HyperParams,
    dims: Dims,
    rng: &mut R,
) -> (RnnWeights, IndicatorMasks) {
    let Dims { n_h, n_in, n_y } = dims;
    let mut masks = IndicatorMasks::all(n_h, n_in, n_y, false);
    let mut weights = RnnWeights::zeros(n_h, n_in, n_y);

    let (w_slab, w_spike) = (hp.w_branch(true), hp.w_branch(false));
    for (w, g) in weights.w.iter_mut().zip(masks.gamma_w.iter_mut()) {
        *g = rng.random::<f64>() < hp.pi_w;
        *w = if *g { w_slab } else { w_spike }.sample(rng);
    }
    let (u_slab, u_spike) = (hp.u_branch(true), hp.u_branch(false));
    for c in 0..n_in {
        let pi = hp.pi_u_at(c);
        for r in 0..n_h {
            let g = rng.random::<f64>() < pi;
            masks.gamma_u[(r, c)] = g;
            weights.u[(r, c)] = if g { u_slab } else { u_spike }.sample(rng);
        }
    }
    for (v, g) in weights.v1.iter_mut().zip(masks.gamma_v1.iter_mut()) {
        *g = rng.random::<f64>() < hp.pi_v1;
        let z: f64 = StandardNormal.sample(rng);
        *v = z * hp.v1_variance(*g).sqrt();
    }
    for (v, g) in weights.v2.iter_mut().zip(masks.gamma_v2.iter_mut()) {
        *g = rng.random::<f64>() < hp.pi_v2;
        let z: f64 = StandardNormal.sample(rng);
        *v = z * hp.v2_variance(*g).sqrt();
    }
    weights.mu = DVector::from_fn(n_y, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * hp.sigma2_mu.sqrt()
    });
    // open interval (0, 1)
    weights.delta = loop {
        let d: f64 = rng.random();
        if d > 0.0 {
            break d;
        }
    };
    weights.sigma2_eps = sample_inv_gamma(rng, hp.alpha_eps, hp.beta_eps);
    (weights, masks)
}
