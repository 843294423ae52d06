//! Two-tier (multiscale) Lorenz-96 system on a ring, integrated with
//! forward Euler.
//!
//! Large-scale tendency for `x_k`:
//! `x_{k−1}(x_{k+1} − x_{k−2}) − x_k + F + (h_x/J) Σ_j y_{j,k} + η_k`
//!
//! Small-scale tendency for `y_{j,k}` (ring within group `k`):
//! `(1/ε)[y_{j+1,k}(y_{j−1,k} − y_{j+2,k}) − y_{j,k} + h_y x_k]`
//!
//! Time advances in periods of length `dt`. Each period is integrated with
//! `substeps` forward-Euler steps of `dt / substeps`; with `substeps = 1` this
//! is plain Euler at `dt`, which is unstable at `dt = 0.05` for `F = 10`.
//! `η_k ~ N(0, σ²_η1)` is drawn once per period and held over its substeps,
//! so it contributes `dt·η` per period. Observations are
//! `z_k = x_k + N(0, σ²_η2)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State magnitude treated as numerical blow-up.
pub const BLOW_UP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzConfig {
    /// Number of large-scale variables.
    pub k: usize,
    /// Small-scale variables per large-scale variable.
    pub j: usize,
    pub forcing: f64,
    pub eps: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub sigma2_eta1: f64,
    pub sigma2_eta2: f64,
    /// Period length.
    pub dt: f64,
    /// Euler steps per period.
    pub substeps: usize,
    /// Periods discarded before recording.
    pub burn_in_steps: usize,
    /// Periods between retained outputs.
    pub keep_every: usize,
    pub t_out: usize,
    pub seed: u64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        LorenzConfig {
            k: 18,
            j: 20,
            forcing: 10.0,
            eps: 0.5,
            h_x: -1.0,
            h_y: 1.0,
            sigma2_eta1: 1.0,
            sigma2_eta2: 6.25,
            dt: 0.05,
            substeps: 50,
            burn_in_steps: 2000,
            keep_every: 1,
            t_out: 400,
            seed: 1,
        }
    }
}

impl LorenzConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("lorenz: {m}")));
        if self.k < 1 || self.j < 1 {
            return bad("k and j must be at least 1");
        }
        if !(self.eps > 0.0) || !(self.dt > 0.0) {
            return bad("eps and dt must be positive");
        }
        if !(self.sigma2_eta1 >= 0.0 && self.sigma2_eta2 >= 0.0) {
            return bad("noise variances must be non-negative");
        }
        if self.keep_every == 0 || self.t_out == 0 || self.substeps == 0 {
            return bad("keep_every, substeps and t_out must be positive");
        }
        Ok(())
    }

    /// Same system with both noise variances set to zero.
    pub fn noise_free(&self) -> Self {
        LorenzConfig {
            sigma2_eta1: 0.0,
            sigma2_eta2: 0.0,
            ..self.clone()
        }
    }
}

/// Large-scale `x` (length `k`) and small-scale `y` (length `k·j`, group
/// `k` occupies `y[k·j .. (k+1)·j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LorenzState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LorenzState {
    pub fn zeros(cfg: &LorenzConfig) -> Self {
        LorenzState {
            x: vec![0.0; cfg.k],
            y: vec![0.0; cfg.k * cfg.j],
        }
    }

    fn max_abs(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.y)
            .fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
    }
}

/// Noise-free tendencies of both tiers.
pub fn tendencies(cfg: &LorenzConfig, s: &LorenzState, dx: &mut [f64], dy: &mut [f64]) {
    let (kk, jj) = (cfg.k, cfg.j);
    let x = &s.x;
    let y = &s.y;
    let cx = cfg.h_x / jj as f64;
    for k in 0..kk {
        let km1 = (k + kk - 1) % kk;
        let km2 = (k + kk - 2) % kk;
        let kp1 = (k + 1) % kk;
        let ysum: f64 = y[k * jj..(k + 1) * jj].iter().sum();
        dx[k] = x[km1] * (x[kp1] - x[km2]) - x[k] + cfg.forcing + cx * ysum;
    }
    let inv_eps = 1.0 / cfg.eps;
    for k in 0..kk {
        let g = &y[k * jj..(k + 1) * jj];
        for j in 0..jj {
            let jp1 = (j + 1) % jj;
            let jp2 = (j + 2) % jj;
            let jm1 = (j + jj - 1) % jj;
            dy[k * jj + j] = inv_eps * (g[jp1] * (g[jm1] - g[jp2]) - g[j] + cfg.h_y * x[k]);
        }
    }
}

/// Stateful Euler integrator; owns the process-noise stream.
pub struct Integrator<'c> {
    cfg: &'c LorenzConfig,
    pub state: LorenzState,
    dx: Vec<f64>,
    dy: Vec<f64>,
    eta: Vec<f64>,
    noise: Option<Normal<f64>>,
    steps: usize,
}

impl<'c> Integrator<'c> {
    pub fn new(cfg: &'c LorenzConfig, state: LorenzState) -> Result<Self> {
        cfg.validate()?;
        if state.x.len() != cfg.k || state.y.len() != cfg.k * cfg.j {
            return Err(Error::dims("lorenz state", cfg.k, state.x.len()));
        }
        let noise = (cfg.sigma2_eta1 > 0.0)
            .then(|| Normal::new(0.0, cfg.sigma2_eta1.sqrt()))
            .transpose()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Integrator {
            cfg,
            state,
            dx: vec![0.0; cfg.k],
            dy: vec![0.0; cfg.k * cfg.j],
            eta: vec![0.0; cfg.k],
            noise,
            steps: 0,
        })
    }

    /// Advances one period of length `dt`.
    pub fn step<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if let Some(n) = self.noise {
            for e in self.eta.iter_mut() {
                *e = n.sample(rng);
            }
        }
        let h = self.cfg.dt / self.cfg.substeps as f64;
        for _ in 0..self.cfg.substeps {
            tendencies(self.cfg, &self.state, &mut self.dx, &mut self.dy);
            for ((x, d), e) in self.state.x.iter_mut().zip(&self.dx).zip(&self.eta) {
                *x += h * (d + e);
            }
            for (y, d) in self.state.y.iter_mut().zip(&self.dy) {
                *y += h * d;
            }
        }
        self.steps += 1;
        let m = self.state.max_abs();
        if m > BLOW_UP {
            return Err(Error::BlowUp {
                step: self.steps,
                magnitude: m,
            });
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }
}

/// Integrates `steps` periods from `state` (noise drawn from a stream
/// seeded with `cfg.seed`) and returns every state including the start.
pub fn integrate(cfg: &LorenzConfig, state: LorenzState, steps: usize) -> Result<Vec<LorenzState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut it = Integrator::new(cfg, state)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(it.state.clone());
    for _ in 0..steps {
        it.step(&mut rng)?;
        out.push(it.state.clone());
    }
    Ok(out)
}

/// Initial condition: `x ~ N(F, 1)`, `y ~ N(0, 0.1)`.
pub fn initial_state<R: rand::Rng + ?Sized>(cfg: &LorenzConfig, rng: &mut R) -> LorenzState {
    let sd_y = 0.1f64.sqrt();
    LorenzState {
        x: (0..cfg.k)
            .map(|_| cfg.forcing + Distribution::<f64>::sample(&StandardNormal, rng))
            .collect(),
        y: (0..cfg.k * cfg.j)
            .map(|_| sd_y * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect(),
    }
}

/// Simulated series, one column per retained period.
#[derive(Debug, Clone, PartialEq)]
pub struct LorenzOutput {
    /// `k × T` true large-scale signal.
    pub latent_large: DMatrix<f64>,
    /// `k × T` signal plus observation noise.
    pub observed: DMatrix<f64>,
    /// `k·j × T` small-scale states.
    pub small_scale: DMatrix<f64>,
}

impl LorenzOutput {
    pub fn len(&self) -> usize {
        self.observed.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn columns(&self, start: usize, n: usize) -> LorenzOutput {
        LorenzOutput {
            latent_large: self.latent_large.columns(start, n).into_owned(),
            observed: self.observed.columns(start, n).into_owned(),
            small_scale: self.small_scale.columns(start, n).into_owned(),
        }
    }
}

pub fn simulate(cfg: &LorenzConfig) -> Result<LorenzOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = initial_state(cfg, &mut rng);
    let mut it = Integrator::new(cfg, init)?;
    for _ in 0..cfg.burn_in_steps {
        it.step(&mut rng)?;
    }
    let mut latent = DMatrix::zeros(cfg.k, cfg.t_out);
    let mut small = DMatrix::zeros(cfg.k * cfg.j, cfg.t_out);
    for t in 0..cfg.t_out {
        for _ in 0..cfg.keep_every {
            it.step(&mut rng)?;
        }
        latent.column_mut(t).copy_from_slice(&it.state.x);
        small.column_mut(t).copy_from_slice(&it.state.y);
    }
    let sd = cfg.sigma2_eta2.sqrt();
    let mut observed = latent.clone();
    // column-major order: all locations of period 0, then period 1, ...
    for v in observed.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sd * z;
    }
    Ok(LorenzOutput {
        latent_large: latent,
        observed,
        small_scale: small,
    })
}

/// Splits off the last `test_len` periods.
pub fn split(output: &LorenzOutput, test_len: usize) -> Result<(LorenzOutput, LorenzOutput)> {
    let n = output.len();
    if test_len >= n {
        return Err(Error::InvalidSplit { test_len, total: n });
    }
    Ok((output.columns(0, n - test_len), output.columns(n - test_len, test_len)))
}
