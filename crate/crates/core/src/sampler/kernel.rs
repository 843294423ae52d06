//! One chain of the parameter-expansion sampler with cached hidden states.
//!
//! Per iteration, in order: joint `(w, γ^w)` Metropolis–Hastings sweep,
//! expansion draw `α₀` with MH sweep over `α`, joint `(u, γ^u)` sweep, `δ`,
//! exact Gibbs draw of each output row `(μ_k, V1_k, V2_k)`, Gibbs draws of the
//! output indicators, and the inverse-gamma draw of `σ²_ε`.
//!
//! The likelihood may be raised to a power `likelihood_weight ∈ [0, 1]`;
//! `0` turns every conditional into its prior, which is how the sampler is
//! checked against known marginals.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{recur_into, residual_ss, spectral_radius, RnnWeights};
use crate::priors::{ln_normal, sample_inv_gamma, HyperParams, IndicatorMasks};

use super::state::{ChainState, ExpansionParams, SamplerData};
use super::transform::{clamp_interior, kappa, kappa_inv, log_dkappa};

/// Acceptance target for the Robbins–Monro scale adaptation.
pub const TARGET_ACCEPT: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// Power on the likelihood; 1 is the posterior, 0 the prior.
    pub likelihood_weight: f64,
    /// Disable to get a plain Metropolis-within-Gibbs chain on `W`.
    pub expansion: bool,
    pub target_accept: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            likelihood_weight: 1.0,
            expansion: true,
            target_accept: TARGET_ACCEPT,
        }
    }
}

/// Accepted / proposed counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counter {
    pub accepted: u64,
    pub proposed: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Per-block acceptance bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AcceptanceStats {
    pub w: Counter,
    pub alpha: Counter,
    pub u: Counter,
    pub delta: Counter,
    /// Weights pulled off the support boundary before `κ⁻¹`.
    pub clamp_events: u64,
}

#[derive(Debug, Clone)]
struct ProposalScales {
    w: DMatrix<f64>,
    u: DMatrix<f64>,
    alpha: DMatrix<f64>,
    delta: f64,
}

/// Folds `x` back into `[−a, a]` by reflection at both ends.
#[inline]
pub(crate) fn reflect(x: f64, a: f64) -> f64 {
    let period = 4.0 * a;
    let mut y = (x + a).rem_euclid(period);
    if y > 2.0 * a {
        y = period - y;
    }
    y - a
}

pub struct Sampler<'a> {
    data: &'a SamplerData,
    hp: &'a HyperParams,
    opts: StepOptions,
    state: ChainState,
    // cached likelihood pieces
    drive: DMatrix<f64>,
    h: DMatrix<f64>,
    h_prop: DMatrix<f64>,
    rho: f64,
    ss: f64,
    fresh: bool,
    scratch: Vec<f64>,
    row_backup: Vec<f64>,
    // tuning
    scales: ProposalScales,
    adapting: bool,
    adapt_step: usize,
    stats: AcceptanceStats,
    iteration: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(
        data: &'a SamplerData,
        hp: &'a HyperParams,
        weights: RnnWeights,
        masks: IndicatorMasks,
        opts: StepOptions,
    ) -> Result<Self> {
        hp.validate()?;
        weights.check_shapes()?;
        if weights.n_in() != data.inputs.dim() || weights.n_y() != data.n_y() {
            return Err(Error::dims(
                "sampler init",
                format!("n_in {}, n_y {}", data.inputs.dim(), data.n_y()),
                format!("n_in {}, n_y {}", weights.n_in(), weights.n_y()),
            ));
        }
        if masks.gamma_w.shape() != weights.w.shape() || masks.gamma_u.shape() != weights.u.shape() {
            return Err(Error::dims("sampler init", "masks matching weights", "mismatch"));
        }
        if !(0.0..=1.0).contains(&opts.likelihood_weight) {
            return Err(Error::InvalidConfig("likelihood_weight must be in [0, 1]".into()));
        }
        let n_h = weights.n_h();
        let t = data.len();
        let alpha = DMatrix::zeros(n_h, n_h);
        let mut w_tilde = DMatrix::zeros(n_h, n_h);
        for (wt, &w) in w_tilde.iter_mut().zip(weights.w.iter()) {
            *wt = kappa_inv(clamp_interior(w, hp.a_w).0, hp.a_w)?;
        }
        let scales = ProposalScales {
            w: DMatrix::from_element(n_h, n_h, 0.25 * hp.a_w),
            u: DMatrix::from_element(n_h, weights.n_in(), 0.25 * hp.a_u),
            alpha: DMatrix::from_element(n_h, n_h, hp.sigma2_alpha.sqrt().max(1e-3)),
            delta: 0.1,
        };
        let state = ChainState {
            weights,
            masks,
            expansion: ExpansionParams {
                alpha: alpha.clone(),
                alpha0: alpha,
                sigma2_alpha: hp.sigma2_alpha,
            },
            w_tilde,
            log_likelihood: f64::NAN,
        };
        let mut s = Sampler {
            data,
            hp,
            opts,
            state,
            drive: DMatrix::zeros(n_h, t),
            h: DMatrix::zeros(n_h, t),
            h_prop: DMatrix::zeros(n_h, t),
            rho: 0.0,
            ss: f64::NAN,
            fresh: false,
            scratch: vec![0.0; (data.n_y() + n_h) * t],
            row_backup: vec![0.0; t],
            scales,
            adapting: true,
            adapt_step: 0,
            stats: AcceptanceStats::default(),
            iteration: 0,
        };
        s.refresh()?;
        s.state.log_likelihood = s.log_likelihood();
        Ok(s)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    pub fn stats(&self) -> AcceptanceStats {
        self.stats
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Stops proposal-scale adaptation (called at the end of burn-in).
    pub fn freeze_adaptation(&mut self) {
        self.adapting = false;
    }

    fn weight(&self) -> f64 {
        self.opts.likelihood_weight
    }

    fn scale(&self) -> f64 {
        if self.rho > 0.0 {
            self.state.weights.delta / self.rho
        } else {
            0.0
        }
    }

    /// Recomputes drive, spectral radius, hidden states and residual SS.
    fn refresh(&mut self) -> Result<()> {
        let w = &self.state.weights;
        self.rho = spectral_radius(&w.w)?;
        self.drive = &w.u * &self.data.inputs.values;
        let scale = self.scale();
        let n_h = w.n_h();
        recur_into(scale, w.w.as_slice(), self.drive.as_slice(), n_h, self.h.as_mut_slice());
        self.ss = self.ss_of_h(false);
        self.fresh = true;
        Ok(())
    }

    fn ss_of_h(&mut self, proposal: bool) -> f64 {
        let w = &self.state.weights;
        let h = if proposal { &self.h_prop } else { &self.h };
        residual_ss(
            w.mu.as_slice(),
            w.v1.as_slice(),
            w.v2.as_slice(),
            h.as_slice(),
            self.data.responses.as_slice(),
            w.n_h(),
            w.n_y(),
            &mut self.scratch,
        )
    }

    /// Hidden states into `h_prop` for the current weights with a given
    /// recurrence scale; returns the residual SS.
    fn propose_states(&mut self, scale: f64) -> f64 {
        let n_h = self.state.weights.n_h();
        recur_into(
            scale,
            self.state.weights.w.as_slice(),
            self.drive.as_slice(),
            n_h,
            self.h_prop.as_mut_slice(),
        );
        self.ss_of_h(true)
    }

    fn commit_proposal(&mut self, ss: f64) {
        std::mem::swap(&mut self.h, &mut self.h_prop);
        self.ss = ss;
    }

    fn ensure_fresh(&mut self) -> Result<()> {
        if !self.fresh {
            self.refresh()?;
        }
        Ok(())
    }

    /// Untempered Gaussian log likelihood at the current state.
    pub fn log_likelihood(&mut self) -> f64 {
        if self.ensure_fresh().is_err() {
            return f64::NAN;
        }
        gaussian_loglik(self.ss, self.state.weights.sigma2_eps, self.data.len() * self.data.n_y())
    }

    /// Current residual sum of squares.
    pub fn residual_ss(&mut self) -> Result<f64> {
        self.ensure_fresh()?;
        Ok(self.ss)
    }

    fn tempered_ll_diff(&self, ss_new: f64) -> f64 {
        -self.weight() * (ss_new - self.ss) / (2.0 * self.state.weights.sigma2_eps)
    }

    fn adapt(&mut self, accepted: bool) -> f64 {
        if !self.adapting {
            return 0.0;
        }
        let eta = 1.0 / ((self.adapt_step + 1) as f64).powf(0.6);
        eta * ((accepted as u8 as f64) - self.opts.target_accept)
    }

    fn check_ss(&self, ss: f64) -> Result<()> {
        if ss.is_finite() {
            Ok(())
        } else {
            Err(Error::Numerical {
                iteration: self.iteration,
                reason: "non-finite residual sum of squares".into(),
            })
        }
    }

    /// Log MH ratio for replacing `w_{ij}` and `γ^w_{ij}` (prior mass and
    /// the independent Bernoulli proposal cancel). Leaves the state intact.
    pub fn w_log_ratio(&mut self, i: usize, j: usize, w_new: f64, gamma_new: bool) -> Result<f64> {
        Ok(self.w_ratio_inner(i, j, w_new, gamma_new)?.0)
    }

    fn w_ratio_inner(&mut self, i: usize, j: usize, w_new: f64, gamma_new: bool) -> Result<(f64, f64, f64)> {
        let hp = self.hp;
        let w_old = self.state.weights.w[(i, j)];
        let g_old = self.state.masks.gamma_w[(i, j)];
        let lp = hp.w_branch(gamma_new).ln_pdf(w_new) - hp.w_branch(g_old).ln_pdf(w_old);
        if self.weight() == 0.0 {
            return Ok((lp, f64::NAN, f64::NAN));
        }
        self.ensure_fresh()?;
        self.state.weights.w[(i, j)] = w_new;
        let rho = spectral_radius(&self.state.weights.w);
        let rho = match rho {
            Ok(r) => r,
            Err(e) => {
                self.state.weights.w[(i, j)] = w_old;
                return Err(e);
            }
        };
        let scale = if rho > 0.0 { self.state.weights.delta / rho } else { 0.0 };
        let ss = self.propose_states(scale);
        self.state.weights.w[(i, j)] = w_old;
        self.check_ss(ss)?;
        Ok((self.tempered_ll_diff(ss) + lp, ss, rho))
    }

    pub fn step_w_gamma<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n_h = self.state.weights.n_h();
        let a = self.hp.a_w;
        for j in 0..n_h {
            for i in 0..n_h {
                let sd = self.scales.w[(i, j)];
                let z: f64 = StandardNormal.sample(rng);
                let w_new = reflect(self.state.weights.w[(i, j)] + sd * z, a);
                let g_new = rng.random::<f64>() < self.hp.pi_w;
                let (ratio, ss, rho) = self.w_ratio_inner(i, j, w_new, g_new)?;
                let accept = rng.random::<f64>().ln() < ratio;
                if accept {
                    self.state.weights.w[(i, j)] = w_new;
                    self.state.masks.gamma_w[(i, j)] = g_new;
                    if self.weight() == 0.0 {
                        self.fresh = false;
                    } else {
                        self.rho = rho;
                        self.commit_proposal(ss);
                    }
                }
                self.stats.w.record(accept);
                let d = self.adapt(accept);
                self.scales.w[(i, j)] = (sd * d.exp()).clamp(1e-6 * a, 2.0 * a);
            }
        }
        Ok(())
    }

    /// Expansion block: draw `α₀`, move to `W̃ = α₀ + κ⁻¹(W)`, MH-update each
    /// `α_{iℓ}` and map back with `W = t_α(W̃)`.
    pub fn step_expansion<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let hp = self.hp;
        let a = hp.a_w;
        let n_h = self.state.weights.n_h();
        let s2a = hp.sigma2_alpha;
        let shake = self.opts.expansion && s2a > 0.0;

        let mut clamped = false;
        for idx in 0..n_h * n_h {
            let (w, moved) = clamp_interior(self.state.weights.w[idx], a);
            if moved {
                self.state.weights.w[idx] = w;
                self.stats.clamp_events += 1;
                clamped = true;
            }
        }
        if clamped && self.weight() > 0.0 {
            self.refresh()?;
        } else if clamped {
            self.fresh = false;
        }

        let sa = s2a.sqrt();
        for idx in 0..n_h * n_h {
            let a0 = if shake {
                let z: f64 = StandardNormal.sample(rng);
                sa * z
            } else {
                0.0
            };
            self.state.expansion.alpha0[idx] = a0;
            self.state.expansion.alpha[idx] = a0;
            self.state.w_tilde[idx] = a0 + kappa_inv(self.state.weights.w[idx], a)?;
        }
        if !shake {
            return Ok(());
        }

        for j in 0..n_h {
            for i in 0..n_h {
                let sd = self.scales.alpha[(i, j)];
                let al_old = self.state.expansion.alpha[(i, j)];
                let z: f64 = StandardNormal.sample(rng);
                let al_new = al_old + sd * z;
                let wt = self.state.w_tilde[(i, j)];
                let w_old = self.state.weights.w[(i, j)];
                let w_new = kappa(wt - al_new, a);
                let branch = hp.w_branch(self.state.masks.gamma_w[(i, j)]);
                let mut ratio = branch.ln_pdf(w_new) - branch.ln_pdf(w_old)
                    + (al_old * al_old - al_new * al_new) / (2.0 * s2a)
                    + log_dkappa(wt - al_new, a)
                    - log_dkappa(wt - al_old, a);
                let mut prop = None;
                if self.weight() > 0.0 && ratio.is_finite() {
                    self.ensure_fresh()?;
                    self.state.weights.w[(i, j)] = w_new;
                    let rho = spectral_radius(&self.state.weights.w)?;
                    let scale = if rho > 0.0 { self.state.weights.delta / rho } else { 0.0 };
                    let ss = self.propose_states(scale);
                    self.state.weights.w[(i, j)] = w_old;
                    self.check_ss(ss)?;
                    ratio += self.tempered_ll_diff(ss);
                    prop = Some((ss, rho));
                }
                let accept = rng.random::<f64>().ln() < ratio;
                if accept {
                    self.state.expansion.alpha[(i, j)] = al_new;
                    self.state.weights.w[(i, j)] = w_new;
                    match prop {
                        Some((ss, rho)) => {
                            self.rho = rho;
                            self.commit_proposal(ss);
                        }
                        None => self.fresh = false,
                    }
                }
                self.stats.alpha.record(accept);
                let d = self.adapt(accept);
                self.scales.alpha[(i, j)] = (sd * d.exp()).clamp(1e-6, 10.0);
            }
        }
        Ok(())
    }

    pub fn step_u_gamma<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let hp = self.hp;
        let a = hp.a_u;
        let n_h = self.state.weights.n_h();
        let n_in = self.state.weights.n_in();
        let t_len = self.data.len();
        let tempered = self.weight() > 0.0;
        if tempered {
            self.refresh()?;
        }
        let scale = self.scale();
        for r in 0..n_in {
            let pi = hp.pi_u_at(r);
            for i in 0..n_h {
                let sd = self.scales.u[(i, r)];
                let u_old = self.state.weights.u[(i, r)];
                let g_old = self.state.masks.gamma_u[(i, r)];
                let z: f64 = StandardNormal.sample(rng);
                let u_new = reflect(u_old + sd * z, a);
                let g_new = rng.random::<f64>() < pi;
                let mut ratio = hp.u_branch(g_new).ln_pdf(u_new) - hp.u_branch(g_old).ln_pdf(u_old);
                let mut ss_new = f64::NAN;
                if tempered {
                    let du = u_new - u_old;
                    let x = self.data.inputs.values.row(r);
                    for t in 0..t_len {
                        let cell = &mut self.drive[(i, t)];
                        self.row_backup[t] = *cell;
                        *cell += du * x[t];
                    }
                    ss_new = self.propose_states(scale);
                    self.check_ss(ss_new)?;
                    ratio += self.tempered_ll_diff(ss_new);
                }
                let accept = rng.random::<f64>().ln() < ratio;
                if accept {
                    self.state.weights.u[(i, r)] = u_new;
                    self.state.masks.gamma_u[(i, r)] = g_new;
                    if tempered {
                        self.commit_proposal(ss_new);
                    } else {
                        self.fresh = false;
                    }
                } else if tempered {
                    for t in 0..t_len {
                        self.drive[(i, t)] = self.row_backup[t];
                    }
                }
                self.stats.u.record(accept);
                let d = self.adapt(accept);
                self.scales.u[(i, r)] = (sd * d.exp()).clamp(1e-6 * a, 2.0 * a);
            }
        }
        Ok(())
    }

    pub fn step_delta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let sd = self.scales.delta;
        let z: f64 = StandardNormal.sample(rng);
        let d_old = self.state.weights.delta;
        let d_new = d_old + sd * z;
        let u: f64 = rng.random();
        let mut accept = false;
        if d_new > 0.0 && d_new < 1.0 {
            if self.weight() > 0.0 {
                self.ensure_fresh()?;
                let scale = if self.rho > 0.0 { d_new / self.rho } else { 0.0 };
                let ss = self.propose_states(scale);
                self.check_ss(ss)?;
                if u.ln() < self.tempered_ll_diff(ss) {
                    accept = true;
                    self.state.weights.delta = d_new;
                    self.commit_proposal(ss);
                }
            } else {
                accept = true;
                self.state.weights.delta = d_new;
                self.fresh = false;
            }
        }
        self.stats.delta.record(accept);
        let d = self.adapt(accept);
        self.scales.delta = (sd * d.exp()).clamp(1e-4, 1.0);
        Ok(())
    }

    /// `H̃ = [1; h; h∘h]` for the cached hidden states, `(2n_h+1) × T`.
    fn h_tilde(&self) -> DMatrix<f64> {
        let n_h = self.state.weights.n_h();
        let t = self.data.len();
        DMatrix::from_fn(2 * n_h + 1, t, |r, c| {
            if r == 0 {
                1.0
            } else if r <= n_h {
                self.h[(r - 1, c)]
            } else {
                let v = self.h[(r - 1 - n_h, c)];
                v * v
            }
        })
    }

    fn prior_variances(&self, k: usize) -> DVector<f64> {
        let n_h = self.state.weights.n_h();
        let m = &self.state.masks;
        DVector::from_fn(2 * n_h + 1, |r, _| {
            if r == 0 {
                self.hp.sigma2_mu
            } else if r <= n_h {
                self.hp.v1_variance(m.gamma_v1[(k, r - 1)])
            } else {
                self.hp.v2_variance(m.gamma_v2[(k, r - 1 - n_h)])
            }
        })
    }

    /// Conditional precision and mean of output row `k`'s coefficients
    /// `(μ_k, V1_k, V2_k)` given the cached hidden states.
    pub fn output_block_posterior(&mut self, k: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.ensure_fresh()?;
        let ht = self.h_tilde();
        let gram = &ht * ht.transpose();
        let hy = &ht * self.data.responses.transpose();
        self.output_posterior_from(k, &gram, &hy)
    }

    fn output_posterior_from(
        &self,
        k: usize,
        gram: &DMatrix<f64>,
        hy: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let c = self.weight() / self.state.weights.sigma2_eps;
        let mut prec = gram * c;
        let var = self.prior_variances(k);
        for r in 0..var.len() {
            prec[(r, r)] += 1.0 / var[r];
        }
        let rhs = hy.column(k) * c;
        let chol = prec.clone().cholesky().ok_or_else(|| Error::Numerical {
            iteration: self.iteration,
            reason: format!("output-block precision for row {k} is not positive definite"),
        })?;
        let mean = chol.solve(&rhs);
        Ok((prec, mean))
    }

    pub fn step_output_block<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n_h = self.state.weights.n_h();
        let n_y = self.state.weights.n_y();
        let tempered = self.weight() > 0.0;
        let (gram, hy) = if tempered {
            self.ensure_fresh()?;
            let ht = self.h_tilde();
            (&ht * ht.transpose(), &ht * self.data.responses.transpose())
        } else {
            (DMatrix::zeros(2 * n_h + 1, 2 * n_h + 1), DMatrix::zeros(2 * n_h + 1, n_y))
        };
        for k in 0..n_y {
            let (prec, mean) = self.output_posterior_from(k, &gram, &hy)?;
            let chol = prec.cholesky().ok_or_else(|| Error::Numerical {
                iteration: self.iteration,
                reason: format!("output-block precision for row {k} is not positive definite"),
            })?;
            let z = DVector::from_fn(2 * n_h + 1, |_, _| StandardNormal.sample(rng));
            // L' x = z gives x ~ N(0, (LL')^{-1})
            let lt = chol.l().transpose();
            let x = lt
                .solve_upper_triangular(&z)
                .ok_or_else(|| Error::Numerical {
                    iteration: self.iteration,
                    reason: "singular Cholesky factor".into(),
                })?;
            let draw = mean + x;
            let w = &mut self.state.weights;
            w.mu[k] = draw[0];
            for i in 0..n_h {
                w.v1[(k, i)] = draw[1 + i];
                w.v2[(k, i)] = draw[1 + n_h + i];
            }
        }
        if tempered {
            self.ss = self.ss_of_h(false);
            self.check_ss(self.ss)?;
        } else {
            self.fresh = false;
        }
        Ok(())
    }

    /// Gibbs update of `γ^{v1}` and `γ^{v2}` given the current `V1`, `V2`.
    pub fn step_output_indicators<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let hp = self.hp;
        let w = &self.state.weights;
        let m = &mut self.state.masks;
        for (v, g) in w.v1.iter().zip(m.gamma_v1.iter_mut()) {
            let p = inclusion_probability(*v, hp.pi_v1, hp.sigma2_v10, hp.sigma2_v11);
            *g = rng.random::<f64>() < p;
        }
        for (v, g) in w.v2.iter().zip(m.gamma_v2.iter_mut()) {
            let p = inclusion_probability(*v, hp.pi_v2, hp.sigma2_v20, hp.sigma2_v21);
            *g = rng.random::<f64>() < p;
        }
    }

    /// Shape and scale of the conditional inverse gamma for `σ²_ε`.
    pub fn sigma2_conditional(&mut self) -> Result<(f64, f64)> {
        let c = self.weight();
        let n = (self.data.len() * self.data.n_y()) as f64;
        let ss = if c > 0.0 { self.residual_ss()? } else { 0.0 };
        Ok((c * n / 2.0 + self.hp.alpha_eps, c * ss / 2.0 + self.hp.beta_eps))
    }

    pub fn step_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (shape, scale) = self.sigma2_conditional()?;
        let s = sample_inv_gamma(rng, shape, scale);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Numerical {
                iteration: self.iteration,
                reason: format!("sigma2_eps draw {s} from IG({shape}, {scale})"),
            });
        }
        self.state.weights.sigma2_eps = s;
        Ok(())
    }

    /// One full sweep in the fixed block order.
    pub fn iterate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.step_w_gamma(rng)?;
        self.step_expansion(rng)?;
        self.step_u_gamma(rng)?;
        self.step_delta(rng)?;
        self.step_output_block(rng)?;
        self.step_output_indicators(rng);
        self.step_sigma2(rng)?;
        if self.adapting {
            self.adapt_step += 1;
        }
        self.iteration += 1;
        self.state.log_likelihood = if self.weight() > 0.0 {
            gaussian_loglik(self.ss, self.state.weights.sigma2_eps, self.data.len() * self.data.n_y())
        } else {
            f64::NAN
        };
        Ok(())
    }

    /// Recomputes the cached likelihood from scratch and compares.
    pub fn cache_error(&mut self) -> Result<f64> {
        if self.weight() == 0.0 {
            return Ok(0.0);
        }
        let cached = self.state.log_likelihood;
        self.refresh()?;
        let fresh = self.log_likelihood();
        Ok((cached - fresh).abs())
    }
}

/// `P(γ = 1 | v)` for a two-component zero-mean Gaussian mixture.
pub fn inclusion_probability(v: f64, pi: f64, var_slab: f64, var_spike: f64) -> f64 {
    let l1 = pi.ln() + ln_normal(v, var_slab);
    let l0 = (1.0 - pi).ln() + ln_normal(v, var_spike);
    1.0 / (1.0 + (l0 - l1).exp())
}

pub fn gaussian_loglik(ss: f64, sigma2: f64, n: usize) -> f64 {
    -(n as f64) / 2.0 * (2.0 * PI * sigma2).ln() - ss / (2.0 * sigma2)
}

/// Untempered log likelihood of `responses` under `weights`.
pub fn log_likelihood(weights: &RnnWeights, data: &SamplerData) -> Result<f64> {
    let states = crate::model::hidden_states(weights, &data.inputs)?;
    let g = crate::model::data_stage_mean(weights, &states)?;
    if g.shape() != data.responses.shape() {
        return Err(Error::dims("log_likelihood", format!("{:?}", g.shape()), format!("{:?}", data.responses.shape())));
    }
    let ss = (&data.responses - g).norm_squared();
    Ok(gaussian_loglik(ss, weights.sigma2_eps, data.len() * data.n_y()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_embedding;
    use crate::priors::{sample_prior, Dims};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n_h: usize, t: usize, seed: u64) -> (SamplerData, HyperParams, RnnWeights, IndicatorMasks) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(2, t + 1, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let emb = build_embedding(&raw.columns(0, t).into_owned(), 0, 0).unwrap();
        let y = raw.columns(1, t).into_owned();
        let data = SamplerData::new(emb, y).unwrap();
        let hp = HyperParams::default();
        let (mut w, m) = sample_prior(&hp, Dims { n_h, n_in: 3, n_y: 2 }, seed);
        w.sigma2_eps = 0.7;
        (data, hp, w, m)
    }

    #[test]
    fn reflect_stays_inside() {
        for x in [-5.3, -0.25, -0.2, 0.0, 0.19, 0.21, 0.6, 7.77] {
            let r = reflect(x, 0.2);
            assert!(r.abs() <= 0.2 + 1e-15, "{x} -> {r}");
        }
        assert_abs_diff_eq!(reflect(0.25, 0.2), 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(reflect(-0.25, 0.2), -0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(reflect(0.1, 0.2), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn output_block_mean_matches_dense_ridge() {
        let (data, hp, w, m) = toy(3, 40, 4);
        let mut s = Sampler::new(&data, &hp, w, m, StepOptions::default()).unwrap();
        let states = crate::model::hidden_states(&s.state().weights, &data.inputs).unwrap();
        let n_h = 3;
        let sig = s.state().weights.sigma2_eps;
        for k in 0..2 {
            let (_, mean) = s.output_block_posterior(k).unwrap();
            // independent construction of the generalized ridge solution
            let mut x = DMatrix::zeros(40, 2 * n_h + 1);
            for t in 0..40 {
                x[(t, 0)] = 1.0;
                for i in 0..n_h {
                    x[(t, 1 + i)] = states.h[(i, t)];
                    x[(t, 1 + n_h + i)] = states.h[(i, t)].powi(2);
                }
            }
            let mut d = DMatrix::zeros(2 * n_h + 1, 2 * n_h + 1);
            d[(0, 0)] = 1.0 / hp.sigma2_mu;
            for i in 0..n_h {
                d[(1 + i, 1 + i)] = 1.0 / hp.v1_variance(s.state().masks.gamma_v1[(k, i)]);
                d[(1 + n_h + i, 1 + n_h + i)] = 1.0 / hp.v2_variance(s.state().masks.gamma_v2[(k, i)]);
            }
            let a = x.transpose() * &x / sig + d;
            let b = x.transpose() * data.responses.row(k).transpose() / sig;
            let direct = a.lu().solve(&b).unwrap();
            for r in 0..direct.len() {
                assert_abs_diff_eq!(mean[r], direct[r], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn output_block_washes_out_with_huge_noise() {
        let (data, hp, mut w, m) = toy(2, 30, 5);
        w.sigma2_eps = 1e14;
        let mut s = Sampler::new(&data, &hp, w, m, StepOptions::default()).unwrap();
        let (_, mean) = s.output_block_posterior(0).unwrap();
        assert!(mean.amax() < 1e-8);
    }

    #[test]
    fn sigma2_shape_is_exact() {
        let (data, hp, w, m) = toy(2, 30, 6);
        let mut s = Sampler::new(&data, &hp, w, m, StepOptions::default()).unwrap();
        let ss = s.residual_ss().unwrap();
        let (shape, scale) = s.sigma2_conditional().unwrap();
        assert_eq!(shape, 30.0 * 2.0 / 2.0 + hp.alpha_eps);
        assert_abs_diff_eq!(scale, ss / 2.0 + hp.beta_eps, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_indicator_probability() {
        assert_abs_diff_eq!(inclusion_probability(0.3, 0.5, 2.0, 2.0), 0.5, epsilon = 1e-15);
        assert!(inclusion_probability(3.0, 0.5, 10.0, 0.01) > 0.99);
        assert!(inclusion_probability(0.0, 0.5, 10.0, 0.01) < 0.1);
    }

    #[test]
    fn identical_proposal_has_zero_log_ratio() {
        let (data, hp, w, m) = toy(3, 25, 7);
        let mut s = Sampler::new(&data, &hp, w, m, StepOptions::default()).unwrap();
        let w0 = s.state().weights.w[(1, 2)];
        let g0 = s.state().masks.gamma_w[(1, 2)];
        assert_abs_diff_eq!(s.w_log_ratio(1, 2, w0, g0).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn cached_likelihood_tracks_full_recompute() {
        let (data, hp, w, m) = toy(4, 60, 8);
        let mut s = Sampler::new(&data, &hp, w, m, StepOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            s.iterate(&mut rng).unwrap();
            let st = s.state();
            assert!(st.transform_gap(hp.a_w) < 1e-10);
            assert!(st.weights.delta > 0.0 && st.weights.delta < 1.0);
            assert!(st.weights.sigma2_eps > 0.0);
            assert!(st.weights.w.amax() <= hp.a_w && st.weights.u.amax() <= hp.a_u);
            let direct = log_likelihood(&st.weights, &data).unwrap();
            let cached = st.log_likelihood;
            assert!((direct - cached).abs() < 1e-7 * direct.abs().max(1.0), "{direct} vs {cached}");
            assert!(s.cache_error().unwrap() < 1e-7);
        }
    }

    #[test]
    fn delta_outside_unit_interval_is_rejected() {
        let (data, hp, mut w, m) = toy(2, 20, 9);
        w.delta = 0.999_999;
        let mut s = Sampler::new(&data, &hp, w, m, StepOptions::default()).unwrap();
        s.scales.delta = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            s.step_delta(&mut rng).unwrap();
            let d = s.state().weights.delta;
            assert!(d > 0.0 && d < 1.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn reflect_is_identity_inside(a in 0.01f64..2.0, f in -0.999f64..0.999) {
            prop_assert!((reflect(a * f, a) - a * f).abs() < 1e-12);
        }

        #[test]
        fn reflect_bounded(a in 0.01f64..2.0, x in -100.0f64..100.0) {
            prop_assert!(reflect(x, a).abs() <= a * (1.0 + 1e-12));
        }
    }
}
