//! Sequential importance sampling over (mode, state) and the Gaussian-mixture
//! summaries it produces.

use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::learner::HybridModel;
use crate::rng;
use crate::types::{
    isotropic_logpdf, log_sum_exp, Gaussian, GaussianMixture, ModeLabel, StateVec, Trajectory,
};

/// Stochastic (mode, state) transition used by the particle filter.
pub trait TransitionModel: Sync {
    fn num_modes(&self) -> usize;
    fn dim(&self) -> usize;
    /// Mode distribution for a fresh belief at `x`.
    fn initial_mode_probs(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Next-mode distribution from mode `m` at state `x`.
    fn next_mode_probs(&self, m: ModeLabel, x: &[f64]) -> Result<Vec<f64>>;
    /// Draw the next state when moving from `from` to `to`.
    fn sample_next(
        &self,
        from: ModeLabel,
        to: ModeLabel,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>>;
}

/// Sample `mean + sqrt(var)·z` from a GP's isotropic predictive.
pub fn sample_gp(gp: &GpModel, x: &[f64], rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let (mean, var) = gp.predict_mean_var(x)?;
    let sd = var.sqrt();
    Ok(mean.map(|m| {
        let z: f64 = StandardNormal.sample(rng);
        m + sd * z
    }))
}

fn sample_categorical(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

impl TransitionModel for HybridModel {
    fn num_modes(&self) -> usize {
        HybridModel::num_modes(self)
    }

    fn dim(&self) -> usize {
        HybridModel::dim(self)
    }

    fn initial_mode_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.mode_classifier().proba_over_modes(x, self.num_modes())
    }

    /// The guard classifier's output, with destinations lacking a reset map
    /// removed and the rest renormalized.
    fn next_mode_probs(&self, m: ModeLabel, x: &[f64]) -> Result<Vec<f64>> {
        static WARNED: AtomicBool = AtomicBool::new(false);
        let mut p = self.guard_classifier(m).proba_over_modes(x, self.num_modes())?;
        let mut dropped = false;
        for (to, v) in p.iter_mut().enumerate() {
            if to != m.0 && *v > 0.0 && self.reset(m, ModeLabel(to)).is_none() {
                *v = 0.0;
                dropped = true;
            }
        }
        if dropped && !WARNED.swap(true, Ordering::Relaxed) {
            warn!("guard classifier proposes a transition with no reset map; excluding it");
        }
        let z: f64 = p.iter().sum();
        if z > 0.0 {
            p.iter_mut().for_each(|v| *v /= z);
        } else {
            p.iter_mut().for_each(|v| *v = 0.0);
            p[m.0] = 1.0;
        }
        Ok(p)
    }

    fn sample_next(
        &self,
        from: ModeLabel,
        to: ModeLabel,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>> {
        let gp = if from == to {
            self.dynamics(from)
        } else {
            self.reset(from, to).ok_or_else(|| {
                Error::numerical("tracking", format!("no reset map for {from}->{to}"))
            })?
        };
        sample_gp(gp, x, rng)
    }
}

/// `x' = A·x + N(0, Q)`, single mode. Reference model for filter checks.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    q_chol: DMatrix<f64>,
}

impl LinearGaussian {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.shape() != q.shape() {
            return Err(Error::input("A and Q must be square and the same size"));
        }
        let (chol, _) = crate::linalg::cholesky_jittered(&q, "tracking")?;
        Ok(LinearGaussian {
            q_chol: chol.l(),
            a,
            q,
        })
    }
}

impl TransitionModel for LinearGaussian {
    fn num_modes(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn initial_mode_probs(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn next_mode_probs(&self, _m: ModeLabel, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn sample_next(
        &self,
        _from: ModeLabel,
        _to: ModeLabel,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            v
        });
        Ok(&self.a * DVector::from_column_slice(x) + &self.q_chol * z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub mode: ModeLabel,
    pub state: StateVec,
    pub log_weight: f64,
}

/// Weighted particles and their per-mode Gaussian summary.
#[derive(Debug, Clone)]
pub struct BeliefState {
    particles: Vec<Particle>,
    summary: GaussianMixture,
    summary_modes: Vec<ModeLabel>,
    num_modes: usize,
    diverged: bool,
}

impl BeliefState {
    /// Build from particles; log-weights are normalized here.
    pub fn from_particles(mut particles: Vec<Particle>, num_modes: usize) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::input("belief needs at least one particle"));
        }
        let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
        let z = log_sum_exp(&lw);
        let mut diverged = false;
        if z.is_finite() {
            for p in &mut particles {
                p.log_weight -= z;
            }
        } else {
            diverged = true;
            let u = -(particles.len() as f64).ln();
            for p in &mut particles {
                p.log_weight = u;
            }
        }
        let (summary, summary_modes) = summarize(&particles, num_modes)?;
        Ok(BeliefState {
            particles,
            summary,
            summary_modes,
            num_modes,
            diverged,
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn summary(&self) -> &GaussianMixture {
        &self.summary
    }

    /// Mode of each summary component.
    pub fn summary_modes(&self) -> &[ModeLabel] {
        &self.summary_modes
    }

    /// True when the last update had every weight underflow.
    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }

    /// Total weight per mode.
    pub fn mode_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.num_modes];
        for p in &self.particles {
            w[p.mode.0] += p.log_weight.exp();
        }
        w
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.particles.iter().map(|p| (2.0 * p.log_weight).exp()).sum::<f64>()
    }

    pub fn mean(&self) -> DVector<f64> {
        let d = self.particles[0].state.dim();
        self.particles.iter().fold(DVector::zeros(d), |acc, p| {
            acc + p.state.as_vector() * p.log_weight.exp()
        })
    }
}

/// Per-mode weighted moment matching.
fn summarize(particles: &[Particle], num_modes: usize) -> Result<(GaussianMixture, Vec<ModeLabel>)> {
    let d = particles[0].state.dim();
    let mut mass = vec![0.0; num_modes];
    let mut count = vec![0usize; num_modes];
    let mut sum = vec![DVector::zeros(d); num_modes];
    for p in particles {
        if p.mode.0 >= num_modes {
            return Err(Error::input(format!("particle mode {} outside 0..{num_modes}", p.mode)));
        }
        let w = p.log_weight.exp();
        mass[p.mode.0] += w;
        count[p.mode.0] += 1;
        sum[p.mode.0] += p.state.as_vector() * w;
    }
    let total: f64 = mass.iter().sum();
    let mut comps = Vec::new();
    let mut modes = Vec::new();
    for m in 0..num_modes {
        if count[m] == 0 {
            continue;
        }
        let members = || particles.iter().filter(move |p| p.mode.0 == m);
        let (mean, w_mode) = if mass[m] > 0.0 {
            (&sum[m] / mass[m], mass[m])
        } else {
            let n = count[m] as f64;
            (members().fold(DVector::zeros(d), |a, p| a + p.state.as_vector()) / n, 0.0)
        };
        let mut cov = DMatrix::zeros(d, d);
        for p in members() {
            let w = if mass[m] > 0.0 {
                p.log_weight.exp() / mass[m]
            } else {
                1.0 / count[m] as f64
            };
            let diff = p.state.as_vector() - &mean;
            cov += &diff * diff.transpose() * w;
        }
        crate::linalg::symmetrize(&mut cov);
        comps.push((w_mode / total, Gaussian::new(StateVec::new(mean)?, cov)?));
        modes.push(ModeLabel(m));
    }
    // Re-close the simplex against rounding.
    let z: f64 = comps.iter().map(|(w, _)| *w).sum();
    for c in &mut comps {
        c.0 /= z;
    }
    Ok((GaussianMixture::new(comps)?, modes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    /// Systematic resampling when ESS falls below the threshold.
    Systematic,
    /// Systematic resampling after every update.
    Always,
    /// Per-mode: particle counts follow mode mass, resampled within each mode.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub particles: usize,
    /// Observation noise variance σ_ε².
    pub obs_noise: f64,
    pub resample: ResampleScheme,
    /// Resample when ESS < `ess_fraction · P`.
    pub ess_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            particles: 500,
            obs_noise: 0.01,
            resample: ResampleScheme::Systematic,
            ess_fraction: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::config("particle count must be >= 1"));
        }
        if !(self.obs_noise > 0.0 && self.obs_noise.is_finite()) {
            return Err(Error::config("observation noise variance must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.ess_fraction) {
            return Err(Error::config("ess_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Particles at `x0` plus `N(0, σ_ε²)` jitter, modes drawn from the initial
/// mode distribution at `x0`, uniform weights.
pub fn init_belief<M: TransitionModel + ?Sized>(
    model: &M,
    x0: &StateVec,
    particles: usize,
    obs_noise: f64,
    seed: u64,
) -> Result<BeliefState> {
    if particles == 0 {
        return Err(Error::input("particle count must be >= 1"));
    }
    if x0.dim() != model.dim() {
        return Err(Error::input("initial state dimension does not match the model"));
    }
    let probs = model.initial_mode_probs(x0.as_slice())?;
    let sd = obs_noise.sqrt();
    let lw = -(particles as f64).ln();
    let ps: Vec<Particle> = (0..particles)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mode = ModeLabel(sample_categorical(&probs, &mut r));
            let v = x0.as_vector().map(|x| {
                let z: f64 = StandardNormal.sample(&mut r);
                x + sd * z
            });
            Ok(Particle {
                mode,
                state: StateVec::new(v)?,
                log_weight: lw,
            })
        })
        .collect::<Result<_>>()?;
    BeliefState::from_particles(ps, model.num_modes())
}

/// One-step prediction: sample each particle's next mode, then its next state.
pub fn propagate<M: TransitionModel + ?Sized>(
    belief: &BeliefState,
    model: &M,
    seed: u64,
) -> Result<BeliefState> {
    let ps: Vec<Particle> = belief
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = rng::stream(seed, i as u64);
            let x = p.state.as_slice();
            let probs = model.next_mode_probs(p.mode, x)?;
            let to = ModeLabel(sample_categorical(&probs, &mut r));
            let next = model.sample_next(p.mode, to, x, &mut r)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("tracking", "propagated state is not finite"));
            }
            Ok(Particle {
                mode: to,
                state: StateVec::new(next)?,
                log_weight: p.log_weight,
            })
        })
        .collect::<Result<_>>()?;
    let mut out = BeliefState::from_particles(ps, belief.num_modes)?;
    out.diverged = false;
    Ok(out)
}

/// Reweight by `N(obs; x, σ_ε²I)` and resample per `cfg`.
pub fn update(belief: &BeliefState, obs: &StateVec, cfg: &FilterConfig, seed: u64) -> Result<BeliefState> {
    if obs.dim() != belief.particles[0].state.dim() {
        return Err(Error::input("observation dimension does not match the belief"));
    }
    let ps: Vec<Particle> = belief
        .particles
        .iter()
        .map(|p| Particle {
            log_weight: p.log_weight
                + isotropic_logpdf(p.state.as_slice(), cfg.obs_noise, obs.as_slice()),
            ..p.clone()
        })
        .collect();
    let b = BeliefState::from_particles(ps, belief.num_modes)?;
    if b.diverged {
        return Ok(b);
    }
    let p = b.len() as f64;
    let resample = match cfg.resample {
        ResampleScheme::Always => true,
        ResampleScheme::Systematic | ResampleScheme::Stratified => {
            b.effective_sample_size() < cfg.ess_fraction * p
        }
    };
    if !resample {
        return Ok(b);
    }
    let mut r = rng::rng(seed);
    let picked = match cfg.resample {
        ResampleScheme::Stratified => stratified_indices(&b, &mut r),
        _ => systematic_indices(&b.weights(), b.len(), &mut r),
    };
    let lw = -p.ln();
    let ps = picked
        .into_iter()
        .map(|i| Particle {
            log_weight: lw,
            ..b.particles[i].clone()
        })
        .collect();
    BeliefState::from_particles(ps, b.num_modes)
}

/// `n` indices drawn systematically from normalized `weights`.
pub fn systematic_indices(weights: &[f64], n: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let u0: f64 = r.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut acc = weights[0] / total;
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 / n as f64;
        while u >= acc && j + 1 < weights.len() {
            j += 1;
            acc += weights[j] / total;
        }
        out.push(j);
    }
    out
}

fn stratified_indices(b: &BeliefState, r: &mut ChaCha8Rng) -> Vec<usize> {
    let n = b.len();
    let mass = b.mode_weights();
    // Largest-remainder allocation of particle counts across modes.
    let raw: Vec<f64> = mass.iter().map(|m| m * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..mass.len()).collect();
    rest.sort_by(|&i, &j| (raw[j] - raw[j].floor()).total_cmp(&(raw[i] - raw[i].floor())).then(i.cmp(&j)));
    let short = n - counts.iter().sum::<usize>();
    for &m in rest.iter().take(short) {
        counts[m] += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (m, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| b.particles[i].mode.0 == m).collect();
        let w: Vec<f64> = members.iter().map(|&i| b.particles[i].log_weight.exp()).collect();
        out.extend(systematic_indices(&w, c, r).into_iter().map(|k| members[k]));
    }
    out
}

/// `n` propagations without updates; the summary after each.
pub fn predict_n<M: TransitionModel + ?Sized>(
    belief: &BeliefState,
    model: &M,
    n: usize,
    seed: u64,
) -> Result<Vec<GaussianMixture>> {
    if n == 0 {
        return Err(Error::input("prediction horizon must be >= 1"));
    }
    let mut b = belief.clone();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        b = propagate(&b, model, rng::derive(seed, &[rng::tag("predict"), k as u64]))?;
        out.push(b.summary.clone());
    }
    Ok(out)
}

/// Anything that can be run as a recursive filter and queried for its
/// predictive distribution of the next observation.
pub trait Forecaster: Sync {
    type Belief: Clone + Send + Sync;

    fn init(&self, x0: &StateVec, seed: u64) -> Result<Self::Belief>;
    fn predict(&self, b: &Self::Belief, seed: u64) -> Result<Self::Belief>;
    /// Condition on `obs`; the flag reports filter divergence.
    fn update(&self, b: &Self::Belief, obs: &StateVec, seed: u64) -> Result<(Self::Belief, bool)>;
    /// State belief as a mixture.
    fn summary(&self, b: &Self::Belief) -> GaussianMixture;
    /// Predictive distribution of an observation taken at this belief.
    fn observation_mixture(&self, b: &Self::Belief) -> GaussianMixture;
    /// Total mass per mode (length = mode count).
    fn mode_weights(&self, b: &Self::Belief) -> Vec<f64>;
}

/// A particle filter over any [`TransitionModel`].
pub struct ParticleFilter<'a, M: TransitionModel + ?Sized> {
    pub model: &'a M,
    pub cfg: FilterConfig,
}

impl<'a, M: TransitionModel + ?Sized> ParticleFilter<'a, M> {
    pub fn new(model: &'a M, cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ParticleFilter { model, cfg })
    }
}

impl<M: TransitionModel + ?Sized> Forecaster for ParticleFilter<'_, M> {
    type Belief = BeliefState;

    fn init(&self, x0: &StateVec, seed: u64) -> Result<BeliefState> {
        init_belief(self.model, x0, self.cfg.particles, self.cfg.obs_noise, seed)
    }

    fn predict(&self, b: &BeliefState, seed: u64) -> Result<BeliefState> {
        propagate(b, self.model, seed)
    }

    fn update(&self, b: &BeliefState, obs: &StateVec, seed: u64) -> Result<(BeliefState, bool)> {
        let out = update(b, obs, &self.cfg, seed)?;
        let flag = out.diverged;
        Ok((out, flag))
    }

    fn summary(&self, b: &BeliefState) -> GaussianMixture {
        b.summary.clone()
    }

    fn observation_mixture(&self, b: &BeliefState) -> GaussianMixture {
        b.summary.with_added_variance(self.cfg.obs_noise)
    }

    fn mode_weights(&self, b: &BeliefState) -> Vec<f64> {
        b.mode_weights()
    }
}

/// Log-likelihood of `obs` under `mix`, restricted to `axes` (all when empty).
pub fn axis_loglik(mix: &GaussianMixture, obs: &StateVec, axes: &[usize]) -> Result<f64> {
    if axes.is_empty() {
        return mix.logpdf(obs);
    }
    let sub = StateVec::from_slice(&axes.iter().map(|&a| obs[a]).collect::<Vec<_>>())?;
    mix.marginal(axes)?.logpdf(&sub)
}

/// Number of components with weight at least `threshold`.
pub fn count_components(mix: &GaussianMixture, threshold: f64) -> usize {
    mix.components().iter().filter(|(w, _)| *w >= threshold).count()
}

/// One filter step against one observation.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub prior: GaussianMixture,
    pub posterior: GaussianMixture,
    /// On the metric axes.
    pub prior_ll: f64,
    pub posterior_ll: f64,
    pub prior_ll_full: f64,
    pub posterior_ll_full: f64,
    pub mode_weights: Vec<f64>,
    pub diverged: bool,
}

/// Seed for the prediction at step `t`.
pub fn step_seed(seed: u64, t: usize) -> u64 {
    rng::derive(seed, &[rng::tag("step"), t as u64])
}

/// Seed for the update at step `t`.
pub fn update_seed(seed: u64, t: usize) -> u64 {
    rng::derive(seed, &[rng::tag("update"), t as u64])
}

/// Seed for the initial belief.
pub fn init_seed(seed: u64) -> u64 {
    rng::derive(seed, &[rng::tag("init")])
}

/// Filter a whole trajectory. Step 0 initializes at the first observation;
/// each later step predicts, scores the observation, then updates.
pub fn track<F: Forecaster + ?Sized>(
    f: &F,
    observations: &Trajectory,
    axes: &[usize],
    seed: u64,
) -> Result<Vec<StepRecord>> {
    Ok(track_beliefs(f, observations, axes, seed)?.0)
}

/// As [`track`], also returning the posterior belief at every step.
pub fn track_beliefs<F: Forecaster + ?Sized>(
    f: &F,
    observations: &Trajectory,
    axes: &[usize],
    seed: u64,
) -> Result<(Vec<StepRecord>, Vec<F::Belief>)> {
    let obs = observations.states();
    let mut b = f.init(&obs[0], init_seed(seed))?;
    let mut out = Vec::with_capacity(obs.len());
    let mut beliefs = Vec::with_capacity(obs.len());
    beliefs.push(b.clone());
    let s0 = f.summary(&b);
    let om = f.observation_mixture(&b);
    out.push(StepRecord {
        step: 0,
        prior: s0.clone(),
        posterior: s0,
        prior_ll: axis_loglik(&om, &obs[0], axes)?,
        posterior_ll: axis_loglik(&om, &obs[0], axes)?,
        prior_ll_full: om.logpdf(&obs[0])?,
        posterior_ll_full: om.logpdf(&obs[0])?,
        mode_weights: f.mode_weights(&b),
        diverged: false,
    });
    for (t, o) in obs.iter().enumerate().skip(1) {
        let prior = f.predict(&b, step_seed(seed, t))?;
        let prior_obs = f.observation_mixture(&prior);
        let (post, diverged) = f.update(&prior, o, update_seed(seed, t))?;
        if diverged {
            warn!("filter diverged at step {t}; weights reset to uniform");
        }
        let post_obs = f.observation_mixture(&post);
        out.push(StepRecord {
            step: t,
            prior: f.summary(&prior),
            posterior: f.summary(&post),
            prior_ll: axis_loglik(&prior_obs, o, axes)?,
            posterior_ll: axis_loglik(&post_obs, o, axes)?,
            prior_ll_full: prior_obs.logpdf(o)?,
            posterior_ll_full: post_obs.logpdf(o)?,
            mode_weights: f.mode_weights(&post),
            diverged,
        });
        beliefs.push(post.clone());
        b = post;
    }
    Ok((out, beliefs))
}
