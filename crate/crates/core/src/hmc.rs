//! Hamiltonian Monte Carlo over network weights.
//!
//! A proposal draws momenta from N(0, I), integrates Hamiltonian dynamics
//! with the leapfrog scheme, and applies the Metropolis correction
//! `min(1, exp(-dH))`. Non-finite energies or gradients along a trajectory
//! mark it divergent; divergent proposals are rejected rather than aborting
//! the chain.
//!
//! The mass matrix is the identity; inputs are PCA-whitened upstream. During
//! warm-up the step size is halved (up to [`MAX_STEP_HALVINGS`] times)
//! whenever a warm-up window accepts fewer than 40% of its proposals.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, BayesSpec};
use crate::error::{Error, Result};
use crate::net::{Architecture, DesignMatrix, ParamVector, Workspace};
use crate::predictive::PredictiveDistribution;
use crate::seeding;

/// Chain controls. The same struct drives full outer-fold runs and the
/// shortened inner-loop runs used during grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub num_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl HmcConfig {
    pub fn new(
        step_size: f64,
        leapfrog_steps: usize,
        num_samples: usize,
        burn_in: usize,
        thinning: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            step_size,
            leapfrog_steps,
            num_samples,
            burn_in,
            thinning,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full-run defaults used for outer-fold refits.
    pub fn default_run(seed: u64) -> Self {
        Self {
            step_size: 0.01,
            leapfrog_steps: 20,
            num_samples: 2000,
            burn_in: 1000,
            thinning: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::InvalidConfig("leapfrog_steps must be >= 1".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidConfig("num_samples must be >= 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidConfig("thinning must be >= 1".into()));
        }
        Ok(())
    }
}

/// Position/momentum pair for the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
}

impl PhasePoint {
    pub fn new(position: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        if position.len() != momentum.len() {
            return Err(Error::LengthMismatch {
                context: "phase point position vs momentum",
                left: position.len(),
                right: momentum.len(),
            });
        }
        Ok(Self { position, momentum })
    }
}

/// Kinetic energy with identity mass: `||p||^2 / 2`.
pub fn kinetic_energy(momentum: &[f64]) -> Result<f64> {
    if momentum.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("momentum"));
    }
    Ok(0.5 * momentum.iter().map(|p| p * p).sum::<f64>())
}

#[inline]
fn kinetic_unchecked(momentum: &[f64]) -> f64 {
    0.5 * momentum.iter().map(|p| p * p).sum::<f64>()
}

/// Standard leapfrog integration: half momentum step, alternating full
/// position and momentum steps, closing half momentum step. Deterministic.
///
/// `gradient` writes dE/dq into its output buffer. A non-finite gradient,
/// position, or final energy yields `Error::Divergence` carrying the step at
/// which integration failed.
pub fn leapfrog<E, G>(
    start: &PhasePoint,
    step_size: f64,
    steps: usize,
    energy: &mut E,
    gradient: &mut G,
) -> Result<PhasePoint>
where
    E: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64], &mut [f64]),
{
    if !(step_size > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step_size must be positive, got {step_size}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("leapfrog steps must be >= 1".into()));
    }
    let dim = start.position.len();
    let mut q = start.position.clone();
    let mut p = start.momentum.clone();
    let mut grad = vec![0.0; dim];

    gradient(&q, &mut grad);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    for (pi, gi) in p.iter_mut().zip(&grad) {
        *pi -= 0.5 * step_size * gi;
    }
    for step in 1..=steps {
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step_size * pi;
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        gradient(&q, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let half = if step == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(&grad) {
            *pi -= half * step_size * gi;
        }
    }
    if !energy(&q).is_finite() {
        return Err(Error::Divergence { step: steps });
    }
    PhasePoint::new(q, p)
}

/// Outcome of one Metropolis-adjusted HMC transition.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub position: Vec<f64>,
    pub accepted: bool,
    /// H(proposal) - H(current); `+inf` for divergent proposals.
    pub delta_h: f64,
    pub diverged: bool,
}

/// One HMC transition from `current`: fresh N(0, I) momentum, leapfrog
/// proposal, accept with probability `min(1, exp(-dH))`. On rejection the
/// returned position is `current`.
pub fn hmc_step<E, G, R>(
    current: &[f64],
    step_size: f64,
    leapfrog_steps: usize,
    energy: &mut E,
    gradient: &mut G,
    rng: &mut R,
) -> StepResult
where
    E: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64], &mut [f64]),
    R: Rng + ?Sized,
{
    let current_energy = energy(current);
    step_from(
        current,
        current_energy,
        step_size,
        leapfrog_steps,
        energy,
        gradient,
        rng,
    )
    .0
}

/// Transition with the current potential energy already known; returns the
/// result plus the potential energy of the returned position.
fn step_from<E, G, R>(
    current: &[f64],
    current_energy: f64,
    step_size: f64,
    leapfrog_steps: usize,
    energy: &mut E,
    gradient: &mut G,
    rng: &mut R,
) -> (StepResult, f64)
where
    E: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64], &mut [f64]),
    R: Rng + ?Sized,
{
    let momentum: Vec<f64> = (0..current.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let h0 = current_energy + kinetic_unchecked(&momentum);
    let start = PhasePoint {
        position: current.to_vec(),
        momentum,
    };
    // The uniform draw happens on every proposal, divergent or not, so the
    // RNG stream does not depend on trajectory outcomes.
    let u: f64 = rng.random();
    match leapfrog(&start, step_size, leapfrog_steps, energy, gradient) {
        Ok(end) => {
            let proposed_energy = energy(&end.position);
            let h1 = proposed_energy + kinetic_unchecked(&end.momentum);
            let delta_h = h1 - h0;
            if !delta_h.is_finite() {
                let res = StepResult {
                    position: current.to_vec(),
                    accepted: false,
                    delta_h: f64::INFINITY,
                    diverged: true,
                };
                return (res, current_energy);
            }
            let accepted = delta_h <= 0.0 || u < (-delta_h).exp();
            if accepted {
                (
                    StepResult {
                        position: end.position,
                        accepted: true,
                        delta_h,
                        diverged: false,
                    },
                    proposed_energy,
                )
            } else {
                (
                    StepResult {
                        position: current.to_vec(),
                        accepted: false,
                        delta_h,
                        diverged: false,
                    },
                    current_energy,
                )
            }
        }
        Err(_) => (
            StepResult {
                position: current.to_vec(),
                accepted: false,
                delta_h: f64::INFINITY,
                diverged: true,
            },
            current_energy,
        ),
    }
}

/// Posterior samples with run statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcChain {
    samples: Vec<Vec<f64>>,
    acceptance_rate: f64,
    energy_trace: Vec<f64>,
    seed: u64,
    divergences: usize,
    step_size_used: f64,
}

impl HmcChain {
    /// Kept (post-burn-in, thinned) positions; length = `num_samples`.
    #[inline]
    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Accepted / total proposals over the sampling phase.
    #[inline]
    pub fn acceptance_rate(&self) -> f64 {
        self.acceptance_rate
    }

    /// Potential energy at each kept sample.
    #[inline]
    pub fn energy_trace(&self) -> &[f64] {
        &self.energy_trace
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn divergences(&self) -> usize {
        self.divergences
    }

    /// Step size after warm-up adaptation.
    #[inline]
    pub fn step_size_used(&self) -> f64 {
        self.step_size_used
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn from_parts(
        samples: Vec<Vec<f64>>,
        acceptance_rate: f64,
        energy_trace: Vec<f64>,
        seed: u64,
        divergences: usize,
        step_size_used: f64,
    ) -> Self {
        Self {
            samples,
            acceptance_rate,
            energy_trace,
            seed,
            divergences,
            step_size_used,
        }
    }
}

pub const MAX_STEP_HALVINGS: usize = 5;
const WARMUP_TARGET_ACCEPTANCE: f64 = 0.4;
const WARMUP_WINDOWS: usize = 6;
const MAX_DIVERGENT_FRACTION: f64 = 0.9;

/// Runs a chain against arbitrary energy/gradient callbacks from `init`.
///
/// Warm-up runs `burn_in` proposals with acceptance-triggered step-size
/// halving; the sampling phase then makes `num_samples * thinning` proposals
/// and keeps every `thinning`-th position. Identical inputs give identical
/// chains.
pub fn run_chain_with<E, G>(
    init: Vec<f64>,
    config: &HmcConfig,
    mut energy: E,
    mut gradient: G,
) -> Result<HmcChain>
where
    E: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64], &mut [f64]),
{
    config.validate()?;
    let mut rng = seeding::rng_for(&[config.seed, seeding::label("hmc-chain")]);
    let mut position = init;
    let mut current_energy = energy(&position);
    if !current_energy.is_finite() {
        return Err(Error::NonFinite("initial potential energy"));
    }
    let mut step_size = config.step_size;

    // Warm-up with step-size halving.
    if config.burn_in > 0 {
        let window = config.burn_in.div_ceil(WARMUP_WINDOWS);
        let mut halvings = 0;
        let mut window_accepted = 0usize;
        let mut window_total = 0usize;
        for i in 0..config.burn_in {
            let (res, e) = step_from(
                &position,
                current_energy,
                step_size,
                config.leapfrog_steps,
                &mut energy,
                &mut gradient,
                &mut rng,
            );
            position = res.position;
            current_energy = e;
            window_total += 1;
            if res.accepted {
                window_accepted += 1;
            }
            if window_total == window || i + 1 == config.burn_in {
                let rate = window_accepted as f64 / window_total as f64;
                if rate < WARMUP_TARGET_ACCEPTANCE && halvings < MAX_STEP_HALVINGS {
                    step_size *= 0.5;
                    halvings += 1;
                }
                window_accepted = 0;
                window_total = 0;
            }
        }
    }

    // Sampling phase.
    let total = config.num_samples * config.thinning;
    let mut samples = Vec::with_capacity(config.num_samples);
    let mut energy_trace = Vec::with_capacity(config.num_samples);
    let mut accepted = 0usize;
    let mut divergences = 0usize;
    for i in 0..total {
        let (res, e) = step_from(
            &position,
            current_energy,
            step_size,
            config.leapfrog_steps,
            &mut energy,
            &mut gradient,
            &mut rng,
        );
        position = res.position;
        current_energy = e;
        if res.accepted {
            accepted += 1;
        }
        if res.diverged {
            divergences += 1;
        }
        if (i + 1) % config.thinning == 0 {
            samples.push(position.clone());
            energy_trace.push(current_energy);
        }
    }
    if divergences as f64 > MAX_DIVERGENT_FRACTION * total as f64 {
        return Err(Error::TooManyDivergences {
            percent: 100.0 * divergences as f64 / total as f64,
            step_size,
        });
    }
    Ok(HmcChain {
        samples,
        acceptance_rate: accepted as f64 / total as f64,
        energy_trace,
        seed: config.seed,
        divergences,
        step_size_used: step_size,
    })
}

/// Effective sample size of a chain statistic via batch means: with batch
/// size m, the integrated autocorrelation time is estimated as
/// `m * var(batch means) / var(values)` and ESS = S / tau, clamped to [0, S].
pub fn effective_sample_size(values: &[f64]) -> f64 {
    let s = values.len();
    if s < 4 {
        return s as f64;
    }
    let n_batches = (s as f64).sqrt().floor() as usize;
    let m = s / n_batches;
    let used = n_batches * m;
    let mean = values[..used].iter().sum::<f64>() / used as f64;
    let var = values[..used]
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / used as f64;
    if var <= 0.0 {
        return 0.0;
    }
    let batch_means: Vec<f64> = (0..n_batches)
        .map(|b| values[b * m..(b + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    let bm_var = batch_means
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n_batches as f64 - 1.0);
    let tau = (m as f64 * bm_var / var).max(1.0);
    (s as f64 / tau).min(s as f64)
}

/// Samples the weight posterior of the network defined by `arch`/`spec` on
/// `data`. The initial position is a seeded layer-scaled Gaussian draw.
pub fn run_chain(
    arch: &Architecture,
    spec: &BayesSpec,
    data: &DesignMatrix,
    config: &HmcConfig,
) -> Result<HmcChain> {
    config.validate()?;
    if data.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "chain data",
            expected: arch.input_dim(),
            actual: data.dim(),
        });
    }
    let mut init_rng = seeding::rng_for(&[config.seed, seeding::label("hmc-init")]);
    let init = ParamVector::init(arch, &mut init_rng);

    let mut ws_energy = Workspace::new(arch);
    let mut ws_grad = Workspace::new(arch);
    let prior = spec.clone();
    let arch_e = arch.clone();
    let arch_g = arch.clone();
    let spec_g = spec.clone();
    let layout = arch.layout();

    let energy = move |values: &[f64]| {
        bayes::potential_energy_raw(&arch_e, &prior, values, data, &mut ws_energy)
    };
    let gradient = move |values: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for (lay, &lambda) in layout.iter().zip(spec_g.layer_precisions()) {
            for (g, &w) in out[lay.offset..lay.offset + lay.len()]
                .iter_mut()
                .zip(&values[lay.offset..lay.offset + lay.len()])
            {
                *g = lambda * w;
            }
        }
        bayes::accumulate_likelihood_gradient(&arch_g, &spec_g, values, data, &mut ws_grad, out);
    };

    run_chain_with(init.into_values(), config, energy, gradient)
}

/// Predictive distribution at `x_test` from a sampled chain:
/// mean over posterior draws, variance `sigma^2` plus the draw variance.
pub fn predict(
    arch: &Architecture,
    spec: &BayesSpec,
    chain: &HmcChain,
    x_test: &[Vec<f64>],
) -> Result<PredictiveDistribution> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    for (i, row) in x_test.iter().enumerate() {
        if row.len() != arch.input_dim() {
            return Err(Error::RowDimensionMismatch {
                row: i,
                expected: arch.input_dim(),
                actual: row.len(),
            });
        }
    }
    let mut ws = Workspace::new(arch);
    let mut samples = Vec::with_capacity(chain.len());
    for draw in chain.samples() {
        if draw.len() != arch.parameter_count() {
            return Err(Error::LayoutMismatch(
                "chain sample length does not match the architecture".into(),
            ));
        }
        let outputs: Vec<f64> = x_test
            .iter()
            .map(|row| crate::net::forward_ws(arch, draw, row, None, &mut ws))
            .collect();
        samples.push(outputs);
    }
    PredictiveDistribution::from_function_samples(samples, spec.noise_variance())
}
