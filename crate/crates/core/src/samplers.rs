//! The chains: AMAGOLD, amortized-correction L2MC, HMC and SGHMC.
//!
//! All samplers operate on a [`PhaseState`] with momentum energy
//! `|r|^2 / (2 sigma^2)` and advance one *outer round* at a time. A round
//! consumes its random stream in a fixed order: the acceptance uniform (for
//! corrected chains), the optional momentum refresh, then for each inner step
//! the friction noise followed by the stochastic-gradient draw.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::ama::accepts;
use crate::energy::{EnergyModel, FullBatch, NoiseRecord};
use crate::rng::{StreamFactory, INIT_STREAM};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
}

impl PhaseState {
    pub fn new(position: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        if position.len() != momentum.len() {
            return Err(Error::DimensionMismatch {
                expected: position.len(),
                got: momentum.len(),
            });
        }
        if position.iter().chain(&momentum).any(|v| !v.is_finite()) {
            return Err(Error::Domain("phase state has non-finite entries".into()));
        }
        Ok(Self { position, momentum })
    }

    pub fn at_rest(position: Vec<f64>) -> Self {
        let momentum = vec![0.0; position.len()];
        Self { position, momentum }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    /// `H(theta, r) = U(theta) + |r|^2 / (2 sigma^2)`.
    pub fn hamiltonian<M: EnergyModel + ?Sized>(&self, model: &M, momentum_variance: f64) -> Result<f64> {
        Ok(model.potential(&self.position)? + kinetic(&self.momentum, momentum_variance))
    }
}

pub fn kinetic(momentum: &[f64], momentum_variance: f64) -> f64 {
    0.5 * momentum.iter().map(|r| r * r).sum::<f64>() / momentum_variance
}

/// Axis-aligned box of admissible positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// `epsilon`.
    pub step_size: f64,
    /// `sigma^2`.
    pub momentum_variance: f64,
    /// `beta`.
    pub friction: f64,
    /// `T`, leapfrog steps per outer round.
    pub inner_steps: usize,
    pub resample_momentum: bool,
    #[serde(default)]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub minibatch_size: Option<usize>,
}

impl SamplerConfig {
    /// Reversible (momentum-resampling) configuration on the whole space.
    pub fn new(step_size: f64, momentum_variance: f64, friction: f64, inner_steps: usize) -> Self {
        Self {
            step_size,
            momentum_variance,
            friction,
            inner_steps,
            resample_momentum: true,
            domain: None,
            minibatch_size: None,
        }
    }

    pub fn with_resample(mut self, resample: bool) -> Self {
        self.resample_momentum = resample;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            problems.push(format!("step size must be positive, got {}", self.step_size));
        }
        if !(self.momentum_variance > 0.0 && self.momentum_variance.is_finite()) {
            problems.push(format!(
                "momentum variance must be positive, got {}",
                self.momentum_variance
            ));
        }
        if !(self.friction >= 0.0 && self.friction.is_finite()) {
            problems.push(format!("friction must be non-negative, got {}", self.friction));
        }
        if self.step_size * self.friction >= 1.0 {
            problems.push(format!(
                "step size times friction must be below 1, got {}",
                self.step_size * self.friction
            ));
        }
        if self.inner_steps == 0 {
            problems.push("inner steps must be at least 1".into());
        }
        if self.minibatch_size == Some(0) {
            problems.push("minibatch size must be positive".into());
        }
        if let Some(d) = &self.domain {
            if d.lower.len() != d.upper.len() || d.lower.iter().zip(&d.upper).any(|(l, u)| !(l < u)) {
                problems.push("domain bounds must satisfy lower < upper per coordinate".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn drift_scale(&self) -> f64 {
        self.step_size / self.momentum_variance
    }

    fn noise_std(&self) -> f64 {
        (4.0 * self.step_size * self.friction * self.momentum_variance).sqrt()
    }
}

/// Dynamics parameters captured in a [`RoundRecord`] for replay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub step_size: f64,
    pub momentum_variance: f64,
    pub friction: f64,
}

impl From<&SamplerConfig> for Dynamics {
    fn from(c: &SamplerConfig) -> Self {
        Self {
            step_size: c.step_size,
            momentum_variance: c.momentum_variance,
            friction: c.friction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundOutcome {
    Accepted,
    Rejected,
    OutOfDomain,
    /// A NaN or infinity appeared at the given inner step (`T` for the
    /// acceptance computation); the round counts as a rejection.
    NumericalFailure { step: usize },
    /// No accept/reject decision was taken (uncorrected or replayed trajectories).
    Unresolved,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Amagold,
    Sghmc,
    Hmc,
    L2mc,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Amagold => "amagold",
            SamplerKind::Sghmc => "sghmc",
            SamplerKind::Hmc => "hmc",
            SamplerKind::L2mc => "l2mc",
        }
    }
}

/// Full trace of one outer round.
///
/// For AMAGOLD, `positions` holds `theta_0 .. theta_T` (with `theta_T` the
/// proposal), `momenta` holds `r_{-1/2} .. r_{T-1/2}` and `rho` holds the
/// accumulator `rho_{-1/2} .. rho_{T-1/2}`. SGHMC stores the start position
/// and momentum followed by the state after each step, and leaves `rho` empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub kind: SamplerKind,
    pub dynamics: Dynamics,
    pub initial_position: Vec<f64>,
    /// Momentum entering the trajectory (after any refresh).
    pub initial_momentum: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub momenta: Vec<Vec<f64>>,
    pub noises: Vec<Vec<f64>>,
    pub gradient_records: Vec<NoiseRecord>,
    pub gradients: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub proposal: Option<PhaseState>,
    pub log_accept: Option<f64>,
    pub uniform: Option<f64>,
    pub outcome: RoundOutcome,
}

impl RoundRecord {
    fn start(kind: SamplerKind, config: &SamplerConfig, position: &[f64], momentum: &[f64]) -> Self {
        let t = config.inner_steps;
        Self {
            kind,
            dynamics: config.into(),
            initial_position: position.to_vec(),
            initial_momentum: momentum.to_vec(),
            positions: Vec::with_capacity(t + 1),
            momenta: Vec::with_capacity(t + 1),
            noises: Vec::with_capacity(t),
            gradient_records: Vec::with_capacity(t),
            gradients: Vec::with_capacity(t),
            rho: Vec::new(),
            proposal: None,
            log_accept: None,
            uniform: None,
            outcome: RoundOutcome::Unresolved,
        }
    }

    /// Largest deviation between the stored accumulator increments and the
    /// ones recomputed from stored momenta and replayed gradients.
    pub fn rho_increment_deviation<M: EnergyModel + ?Sized>(&self, model: &M) -> Result<f64> {
        let steps = self.gradient_records.len();
        if self.rho.len() != steps + 1 || self.momenta.len() != steps + 1 {
            return Err(Error::Contract("record has no complete accumulator trace".into()));
        }
        let scale = self.dynamics.step_size / self.dynamics.momentum_variance;
        let mut worst: f64 = (self.rho[0] - 0.0).abs();
        for t in 0..steps {
            let g = model.replay_stochastic_gradient(&self.positions[t], &self.gradient_records[t])?;
            let inc = 0.5 * scale * dot_sum(&g, &self.momenta[t], &self.momenta[t + 1]);
            worst = worst.max(((self.rho[t + 1] - self.rho[t]) - inc).abs());
        }
        Ok(worst)
    }
}

/// `g . (a + b)`.
fn dot_sum(g: &[f64], a: &[f64], b: &[f64]) -> f64 {
    g.iter().zip(a.iter().zip(b)).map(|(g, (a, b))| g * (a + b)).sum()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_state<M: EnergyModel + ?Sized>(config: &SamplerConfig, state: &PhaseState, model: &M) -> Result<()> {
    config.validate()?;
    if state.position.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: state.position.len(),
        });
    }
    if state.momentum.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: state.momentum.len(),
        });
    }
    if let Some(d) = &config.domain {
        if d.lower.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: d.lower.len(),
            });
        }
    }
    Ok(())
}

fn standard_normals(rng: &mut dyn RngCore, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * crate::rng::std_normal(rng))
        .collect()
}

/// `r_{t+1/2} = ((1 - eps beta) r_{t-1/2} - eps g + eta) / (1 + eps beta)`.
pub fn amagold_momentum_step(momentum: &[f64], gradient: &[f64], noise: &[f64], step_size: f64, friction: f64) -> Vec<f64> {
    let damp = step_size * friction;
    momentum
        .iter()
        .zip(gradient.iter().zip(noise))
        .map(|(r, (g, n))| ((1.0 - damp) * r - step_size * g + n) / (1.0 + damp))
        .collect()
}

/// `r_{t+1/2} = r_{t-1/2} - eps g - 2 eps beta r_{t-1/2} + eta`.
pub fn sghmc_momentum_step(momentum: &[f64], gradient: &[f64], noise: &[f64], step_size: f64, friction: f64) -> Vec<f64> {
    momentum
        .iter()
        .zip(gradient.iter().zip(noise))
        .map(|(r, (g, n))| r - step_size * g - 2.0 * step_size * friction * r + n)
        .collect()
}

fn drift(position: &[f64], momentum: &[f64], scale: f64) -> Vec<f64> {
    position
        .iter()
        .zip(momentum)
        .map(|(p, r)| p + scale * r)
        .collect()
}

/// Outcome of the trajectory part of a corrected round.
enum Trajectory {
    Complete,
    Failed(usize),
}

/// One AMAGOLD round.
pub fn amagold_round<M: EnergyModel + ?Sized>(
    config: &SamplerConfig,
    state: &PhaseState,
    model: &M,
    rng: &mut dyn RngCore,
) -> Result<(PhaseState, RoundRecord)> {
    let uniform: f64 = rng.gen();
    amagold_round_with_uniform(config, state, model, rng, uniform)
}

/// One AMAGOLD round with the acceptance uniform supplied by the caller.
pub fn amagold_round_with_uniform<M: EnergyModel + ?Sized>(
    config: &SamplerConfig,
    state: &PhaseState,
    model: &M,
    rng: &mut dyn RngCore,
    uniform: f64,
) -> Result<(PhaseState, RoundRecord)> {
    check_state(config, state, model)?;
    let dim = model.dim();
    let momentum = if config.resample_momentum {
        standard_normals(rng, dim, config.momentum_variance.sqrt())
    } else {
        state.momentum.clone()
    };
    let mut record = RoundRecord::start(SamplerKind::Amagold, config, &state.position, &momentum);
    record.uniform = Some(uniform);

    let scale = config.drift_scale();
    let noise_std = config.noise_std();
    let steps = config.inner_steps;

    let mut run = || -> Result<Trajectory> {
        let mut rho = 0.0;
        record.rho.push(rho);
        record.momenta.push(momentum.clone());
        let mut theta = drift(&state.position, &momentum, 0.5 * scale);
        for t in 0..steps {
            if t != 0 {
                theta = drift(&theta, &record.momenta[t], scale);
            }
            if !all_finite(&theta) {
                return Ok(Trajectory::Failed(t));
            }
            record.positions.push(theta.clone());
            let eta = standard_normals(rng, dim, noise_std);
            let (grad, zeta) = model.stochastic_gradient(&theta, rng)?;
            let prev = &record.momenta[t];
            let next = amagold_momentum_step(prev, &grad, &eta, config.step_size, config.friction);
            rho += 0.5 * scale * dot_sum(&grad, prev, &next);
            record.noises.push(eta);
            record.gradient_records.push(zeta);
            record.gradients.push(grad);
            record.rho.push(rho);
            let finite = all_finite(&next) && rho.is_finite();
            record.momenta.push(next);
            if !finite {
                return Ok(Trajectory::Failed(t));
            }
        }
        let last = &record.momenta[steps];
        let theta_end = drift(&theta, last, 0.5 * scale);
        if !all_finite(&theta_end) {
            return Ok(Trajectory::Failed(steps));
        }
        record.positions.push(theta_end.clone());
        record.proposal = Some(PhaseState {
            position: theta_end,
            momentum: last.clone(),
        });
        Ok(Trajectory::Complete)
    };
    let trajectory = run()?;

    let flipped_start = PhaseState {
        position: state.position.clone(),
        momentum: momentum.iter().map(|r| -r).collect(),
    };
    let outcome = match trajectory {
        Trajectory::Failed(step) => RoundOutcome::NumericalFailure { step },
        Trajectory::Complete => {
            let proposal = record.proposal.as_ref().expect("complete trajectory");
            let rho_end = *record.rho.last().expect("accumulator trace");
            match model.potential(&proposal.position) {
                Err(Error::Domain(_)) => RoundOutcome::NumericalFailure { step: steps },
                Err(e) => return Err(e),
                Ok(u_end) => {
                    let log_a = model.potential(&state.position)? - u_end + rho_end;
                    record.log_accept = Some(log_a);
                    if !log_a.is_finite() && log_a != f64::NEG_INFINITY {
                        RoundOutcome::NumericalFailure { step: steps }
                    } else if config
                        .domain
                        .as_ref()
                        .is_some_and(|d| !d.contains(&proposal.position))
                    {
                        RoundOutcome::OutOfDomain
                    } else if accepts(log_a, uniform) {
                        RoundOutcome::Accepted
                    } else {
                        RoundOutcome::Rejected
                    }
                }
            }
        }
    };
    record.outcome = outcome;
    let next = match outcome {
        RoundOutcome::Accepted => record.proposal.clone().expect("accepted proposal"),
        _ => flipped_start,
    };
    Ok((next, record))
}

/// One SGHMC round (no Metropolis-Hastings correction).
pub fn sghmc_round<M: EnergyModel + ?Sized>(
    config: &SamplerConfig,
    state: &PhaseState,
    model: &M,
    rng: &mut dyn RngCore,
) -> Result<(PhaseState, RoundRecord)> {
    check_state(config, state, model)?;
    let dim = model.dim();
    let momentum = if config.resample_momentum {
        standard_normals(rng, dim, config.momentum_variance.sqrt())
    } else {
        state.momentum.clone()
    };
    let mut record = RoundRecord::start(SamplerKind::Sghmc, config, &state.position, &momentum);
    let scale = config.drift_scale();
    let noise_std = config.noise_std();

    let mut theta = state.position.clone();
    let mut r = momentum;
    record.positions.push(theta.clone());
    record.momenta.push(r.clone());
    for t in 1..=config.inner_steps {
        theta = drift(&theta, &r, scale);
        if !all_finite(&theta) {
            record.outcome = RoundOutcome::NumericalFailure { step: t };
            return Ok((state.clone(), record));
        }
        let eta = standard_normals(rng, dim, noise_std);
        let (grad, zeta) = model.stochastic_gradient(&theta, rng)?;
        r = sghmc_momentum_step(&r, &grad, &eta, config.step_size, config.friction);
        record.positions.push(theta.clone());
        record.momenta.push(r.clone());
        record.noises.push(eta);
        record.gradient_records.push(zeta);
        record.gradients.push(grad);
        if !all_finite(&r) {
            record.outcome = RoundOutcome::NumericalFailure { step: t };
            return Ok((state.clone(), record));
        }
    }
    let next = PhaseState {
        position: theta,
        momentum: r,
    };
    record.proposal = Some(next.clone());
    Ok((next, record))
}

/// One HMC round: momentum refresh, `T` exact-gradient leapfrog steps in the
/// half-drift / kick / drift / ... / half-drift arrangement, Hamiltonian
/// acceptance test.
///
/// The friction and resample settings of `config` are ignored: HMC always
/// refreshes momentum and has no friction. A rejection keeps the position and
/// negates the refreshed momentum.
pub fn hmc_round<M: EnergyModel + ?Sized>(
    config: &SamplerConfig,
    state: &PhaseState,
    model: &M,
    rng: &mut dyn RngCore,
) -> Result<(PhaseState, RoundRecord)> {
    check_state(config, state, model)?;
    let uniform: f64 = rng.gen();
    let dim = model.dim();
    let sigma2 = config.momentum_variance;
    let momentum = standard_normals(rng, dim, sigma2.sqrt());
    let mut record = RoundRecord::start(SamplerKind::Hmc, config, &state.position, &momentum);
    record.uniform = Some(uniform);
    let scale = config.drift_scale();
    let steps = config.inner_steps;

    let mut failed = None;
    let mut r = momentum.clone();
    record.momenta.push(r.clone());
    let mut theta = drift(&state.position, &r, 0.5 * scale);
    for t in 0..steps {
        if t != 0 {
            theta = drift(&theta, &r, scale);
        }
        if !all_finite(&theta) {
            failed = Some(t);
            break;
        }
        record.positions.push(theta.clone());
        let grad = model.gradient(&theta)?;
        r = r.iter().zip(&grad).map(|(r, g)| r - config.step_size * g).collect();
        record.gradient_records.push(NoiseRecord::Exact);
        record.gradients.push(grad);
        record.momenta.push(r.clone());
        if !all_finite(&r) {
            failed = Some(t);
            break;
        }
    }
    let flipped_start = PhaseState {
        position: state.position.clone(),
        momentum: momentum.iter().map(|v| -v).collect(),
    };
    if failed.is_none() {
        theta = drift(&theta, &r, 0.5 * scale);
        if all_finite(&theta) {
            record.positions.push(theta.clone());
        } else {
            failed = Some(steps);
        }
    }
    if let Some(step) = failed {
        record.outcome = RoundOutcome::NumericalFailure { step };
        return Ok((flipped_start, record));
    }
    let proposal = PhaseState {
        position: theta,
        momentum: r,
    };
    let h_start = model.potential(&state.position)? + kinetic(&momentum, sigma2);
    let h_end = match model.potential(&proposal.position) {
        Ok(u) => u + kinetic(&proposal.momentum, sigma2),
        Err(Error::Domain(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let log_a = h_start - h_end;
    record.log_accept = Some(log_a);
    record.proposal = Some(proposal.clone());
    record.outcome = if !log_a.is_finite() {
        RoundOutcome::NumericalFailure { step: steps }
    } else if config.domain.as_ref().is_some_and(|d| !d.contains(&proposal.position)) {
        RoundOutcome::OutOfDomain
    } else if accepts(log_a, uniform) {
        RoundOutcome::Accepted
    } else {
        RoundOutcome::Rejected
    };
    let next = if record.outcome == RoundOutcome::Accepted {
        proposal
    } else {
        flipped_start
    };
    Ok((next, record))
}

/// Dispatches one round of the given sampler. L2MC runs AMAGOLD on full-batch
/// gradients.
pub fn sampler_round<M: EnergyModel + ?Sized>(
    kind: SamplerKind,
    config: &SamplerConfig,
    state: &PhaseState,
    model: &M,
    rng: &mut dyn RngCore,
) -> Result<(PhaseState, RoundRecord)> {
    match kind {
        SamplerKind::Amagold => amagold_round(config, state, model, rng),
        SamplerKind::Sghmc => sghmc_round(config, state, model, rng),
        SamplerKind::Hmc => hmc_round(config, state, model, rng),
        SamplerKind::L2mc => amagold_round(config, state, &FullBatch(model), rng),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub accepted: u64,
    pub rejected: u64,
    pub out_of_domain: u64,
    pub numerical_failures: u64,
}

impl RoundStats {
    pub fn record(&mut self, outcome: RoundOutcome) {
        match outcome {
            RoundOutcome::Accepted | RoundOutcome::Unresolved => self.accepted += 1,
            RoundOutcome::Rejected => self.rejected += 1,
            RoundOutcome::OutOfDomain => self.out_of_domain += 1,
            RoundOutcome::NumericalFailure { .. } => {
                self.rejected += 1;
                self.numerical_failures += 1;
            }
        }
    }

    pub fn rounds(&self) -> u64 {
        self.accepted + self.rejected + self.out_of_domain
    }

    /// `accepted / (accepted + rejected + out_of_domain)`; 0 before any round.
    pub fn acceptance_rate(&self) -> f64 {
        match self.rounds() {
            0 => 0.0,
            n => self.accepted as f64 / n as f64,
        }
    }
}

/// Retained positions of one chain plus its bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub kind: SamplerKind,
    pub config: SamplerConfig,
    pub seed: u64,
    pub rounds: usize,
    pub burn_in: usize,
    pub dim: usize,
    /// One row per round after burn-in.
    pub samples: Vec<Vec<f64>>,
    /// Counts over all rounds, burn-in included.
    pub stats: RoundStats,
    pub final_state: PhaseState,
}

/// Runs one chain from the origin with a momentum drawn from `N(0, sigma^2 I)`.
pub fn run_chain<M: EnergyModel + ?Sized>(
    kind: SamplerKind,
    config: &SamplerConfig,
    model: &M,
    rounds: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SampleSet> {
    config.validate()?;
    let streams = StreamFactory::new(seed);
    let mut init_rng = streams.stream(INIT_STREAM);
    let momentum = standard_normals(&mut init_rng, model.dim(), config.momentum_variance.sqrt());
    let init = PhaseState::new(vec![0.0; model.dim()], momentum)?;
    run_chain_from(kind, config, model, init, rounds, burn_in, seed)
}

pub fn run_chain_from<M: EnergyModel + ?Sized>(
    kind: SamplerKind,
    config: &SamplerConfig,
    model: &M,
    init: PhaseState,
    rounds: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SampleSet> {
    if rounds == 0 || burn_in >= rounds {
        return Err(Error::Config(format!(
            "need 0 <= burn-in < rounds, got burn-in {burn_in} and rounds {rounds}"
        )));
    }
    config.validate()?;
    let streams = StreamFactory::new(seed);
    let mut state = init;
    let mut stats = RoundStats::default();
    let mut samples = Vec::with_capacity(rounds - burn_in);
    for k in 0..rounds {
        let mut rng = streams.stream(k as u64);
        let (next, record) = sampler_round(kind, config, &state, model, &mut rng).map_err(|e| match e {
            Error::Numerical { step, what } => Error::Numerical {
                step,
                what: format!("round {k}: {what}"),
            },
            other => other,
        })?;
        stats.record(record.outcome);
        state = next;
        if k >= burn_in {
            samples.push(state.position.clone());
        }
    }
    Ok(SampleSet {
        kind,
        config: config.clone(),
        seed,
        rounds,
        burn_in,
        dim: model.dim(),
        samples,
        stats,
        final_state: state,
    })
}

/// `h = eps^2 / sigma^2`, `b = eps beta`; the velocity is `v = (eps / sigma^2) r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reparameterized {
    pub h: f64,
    pub b: f64,
}

pub fn reparameterize(step_size: f64, momentum_variance: f64, friction: f64) -> Result<Reparameterized> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::Config(format!("step size must be positive, got {step_size}")));
    }
    if !(momentum_variance > 0.0 && momentum_variance.is_finite()) {
        return Err(Error::Config(format!(
            "momentum variance must be positive, got {momentum_variance}"
        )));
    }
    if !(friction >= 0.0 && friction.is_finite()) {
        return Err(Error::Config(format!("friction must be non-negative, got {friction}")));
    }
    Ok(Reparameterized {
        h: step_size * step_size / momentum_variance,
        b: step_size * friction,
    })
}

impl Reparameterized {
    /// `(epsilon, beta)` for a given `sigma^2`.
    pub fn to_original(&self, momentum_variance: f64) -> Result<(f64, f64)> {
        if !(self.h > 0.0 && momentum_variance > 0.0 && self.b >= 0.0) {
            return Err(Error::Config("h and sigma^2 must be positive, b non-negative".into()));
        }
        let step_size = (self.h * momentum_variance).sqrt();
        Ok((step_size, self.b / step_size))
    }

    /// `v = (eps / sigma^2) r`.
    pub fn velocity(step_size: f64, momentum_variance: f64, momentum: &[f64]) -> Vec<f64> {
        let s = step_size / momentum_variance;
        momentum.iter().map(|r| s * r).collect()
    }
}

/// One AMAGOLD round written in the `(h, b)` parameterization with velocity
/// state `v`. Consumes the random stream exactly like [`amagold_round`].
/// Returns the next `(theta, v)` state, the outcome and `theta_0 .. theta_T`.
pub fn reformulated_round<M: EnergyModel + ?Sized>(
    params: &Reparameterized,
    inner_steps: usize,
    resample: bool,
    state: &PhaseState,
    model: &M,
    rng: &mut dyn RngCore,
) -> Result<(PhaseState, RoundOutcome, Vec<Vec<f64>>)> {
    let (h, b) = (params.h, params.b);
    let dim = model.dim();
    let uniform: f64 = rng.gen();
    let v0 = if resample {
        standard_normals(rng, dim, h.sqrt())
    } else {
        state.momentum.clone()
    };
    let noise_std = (4.0 * h * b).sqrt();
    let mut positions = Vec::with_capacity(inner_steps + 1);
    let mut v = v0.clone();
    let mut rho = 0.0;
    let mut theta: Vec<f64> = state.position.iter().zip(&v).map(|(p, v)| p + 0.5 * v).collect();
    for t in 0..inner_steps {
        if t != 0 {
            theta = theta.iter().zip(&v).map(|(p, v)| p + v).collect();
        }
        positions.push(theta.clone());
        let eta = standard_normals(rng, dim, noise_std);
        let (grad, _) = model.stochastic_gradient(&theta, rng)?;
        let next: Vec<f64> = v
            .iter()
            .zip(grad.iter().zip(&eta))
            .map(|(v, (g, n))| ((1.0 - b) * v - h * g + n) / (1.0 + b))
            .collect();
        rho += 0.5 * dot_sum(&grad, &v, &next);
        v = next;
    }
    theta = theta.iter().zip(&v).map(|(p, v)| p + 0.5 * v).collect();
    positions.push(theta.clone());
    let log_a = model.potential(&state.position)? - model.potential(&theta)? + rho;
    if accepts(log_a, uniform) {
        Ok((PhaseState { position: theta, momentum: v }, RoundOutcome::Accepted, positions))
    } else {
        let back = PhaseState {
            position: state.position.clone(),
            momentum: v0.iter().map(|x| -x).collect(),
        };
        Ok((back, RoundOutcome::Rejected, positions))
    }
}

/// Runs an AMAGOLD trajectory backwards from `(theta*, -r*)`.
///
/// The reverse pass reuses the recorded gradient draws in reverse order. Its
/// friction noise for reverse step `s` (forward step `t = T - 1 - s`) is
/// `eta_t - 2 eps beta (r_{t-1/2} + r_{t+1/2})`, which is the unique value
/// that carries the negated forward momenta under the symmetric update; for
/// `beta = 0` it equals the forward noise (zero).
pub fn replay_reverse<M: EnergyModel + ?Sized>(record: &RoundRecord, model: &M) -> Result<RoundRecord> {
    let steps = record.gradient_records.len();
    let complete = record.kind == SamplerKind::Amagold
        && steps >= 1
        && record.positions.len() == steps + 1
        && record.momenta.len() == steps + 1
        && record.noises.len() == steps
        && record.rho.len() == steps + 1
        && record.proposal.is_some();
    if !complete {
        return Err(Error::Contract(
            "reverse replay needs a complete AMAGOLD round record".into(),
        ));
    }
    let dynamics = record.dynamics;
    let config = SamplerConfig::new(
        dynamics.step_size,
        dynamics.momentum_variance,
        dynamics.friction,
        steps,
    );
    let scale = config.drift_scale();
    let damp2 = 2.0 * dynamics.step_size * dynamics.friction;
    let proposal = record.proposal.as_ref().expect("checked above");
    let start_momentum: Vec<f64> = proposal.momentum.iter().map(|r| -r).collect();

    let mut reverse = RoundRecord::start(SamplerKind::Amagold, &config, &proposal.position, &start_momentum);
    let mut rho = 0.0;
    reverse.rho.push(rho);
    reverse.momenta.push(start_momentum.clone());
    let mut theta = drift(&proposal.position, &start_momentum, 0.5 * scale);
    for s in 0..steps {
        let t = steps - 1 - s;
        if s != 0 {
            theta = drift(&theta, &reverse.momenta[s], scale);
        }
        reverse.positions.push(theta.clone());
        let zeta = record.gradient_records[t].clone();
        let grad = model.replay_stochastic_gradient(&theta, &zeta)?;
        let eta: Vec<f64> = record.noises[t]
            .iter()
            .zip(record.momenta[t].iter().zip(&record.momenta[t + 1]))
            .map(|(n, (a, b))| n - damp2 * (a + b))
            .collect();
        let prev = &reverse.momenta[s];
        let next = amagold_momentum_step(prev, &grad, &eta, dynamics.step_size, dynamics.friction);
        rho += 0.5 * scale * dot_sum(&grad, prev, &next);
        reverse.rho.push(rho);
        reverse.noises.push(eta);
        reverse.gradient_records.push(zeta);
        reverse.gradients.push(grad);
        reverse.momenta.push(next);
    }
    let end = drift(&theta, &reverse.momenta[steps], 0.5 * scale);
    reverse.positions.push(end.clone());
    let log_a = model.potential(&proposal.position)? - model.potential(&end)? + rho;
    reverse.log_accept = Some(log_a);
    reverse.proposal = Some(PhaseState {
        position: end,
        momentum: reverse.momenta[steps].clone(),
    });
    Ok(reverse)
}
