//! Amortized Metropolis-Hastings over multi-step stochastic proposals.
//!
//! A proposal runs `T` steps of a kernel `P(x, y; zeta)`, recording every
//! intermediate state and every stochastic sample `zeta_t`. One accept/reject
//! test then corrects the whole path, either in the reversible form
//!
//! ```text
//! log pi(y) - log pi(x) + sum_t [log P(x_{t+1}, x_t; z_t) - log P(x_t, x_{t+1}; z_t)]
//! ```
//!
//! or in the skew-reversible form, where the reverse moves are evaluated on
//! states mapped through an involution (for Hamiltonian states, momentum
//! negation):
//!
//! ```text
//! log pi(y^) - log pi(x) + sum_t [log P(x^_{t+1}, x^_t; z_t) - log P(x_t, x_{t+1}; z_t)]
//! ```
//!
//! All arithmetic is in log space and target densities are only needed up to
//! an additive constant.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::samplers::PhaseState;
use crate::{Error, Result};

/// States whose coordinates can be checked for finiteness.
pub trait FiniteState {
    fn is_finite(&self) -> bool;
}

impl FiniteState for f64 {
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl FiniteState for Vec<f64> {
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl FiniteState for PhaseState {
    fn is_finite(&self) -> bool {
        self.position.is_finite() && self.momentum.is_finite()
    }
}

pub trait ProposalKernel {
    type State: Clone + FiniteState;
    type Sample: Clone;

    /// Draws `zeta`, then `y ~ P(x, .; zeta)`.
    fn draw(&self, x: &Self::State, rng: &mut dyn RngCore) -> (Self::State, Self::Sample);

    /// `log P(from, to; zeta)`.
    fn log_density(&self, from: &Self::State, to: &Self::State, sample: &Self::Sample) -> f64;
}

/// A measure-preserving self-inverse map on states.
pub trait Involution<S> {
    fn apply(&self, state: &S) -> S;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl<S: Clone> Involution<S> for Identity {
    fn apply(&self, state: &S) -> S {
        state.clone()
    }
}

/// `(theta, r) -> (theta, -r)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MomentumFlip;

impl Involution<PhaseState> for MomentumFlip {
    fn apply(&self, state: &PhaseState) -> PhaseState {
        momentum_flip(state)
    }
}

pub fn momentum_flip(state: &PhaseState) -> PhaseState {
    PhaseState {
        position: state.position.clone(),
        momentum: state.momentum.iter().map(|r| -r).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord<S, Z> {
    /// `x_0, ..., x_T`.
    pub states: Vec<S>,
    /// `zeta_0, ..., zeta_{T-1}`.
    pub samples: Vec<Z>,
}

impl<S: Clone, Z: Clone> PathRecord<S, Z> {
    pub fn new(states: Vec<S>, samples: Vec<Z>) -> Result<Self> {
        if samples.is_empty() || states.len() != samples.len() + 1 {
            return Err(Error::Contract(format!(
                "path needs T >= 1 samples and T + 1 states, got {} and {}",
                samples.len(),
                states.len()
            )));
        }
        Ok(Self { states, samples })
    }

    pub fn steps(&self) -> usize {
        self.samples.len()
    }

    pub fn start(&self) -> &S {
        &self.states[0]
    }

    pub fn proposal(&self) -> &S {
        self.states.last().expect("path has at least two states")
    }

    /// The path walked backwards with the stochastic samples in reverse order.
    pub fn reversed(&self) -> Self {
        Self {
            states: self.states.iter().rev().cloned().collect(),
            samples: self.samples.iter().rev().cloned().collect(),
        }
    }
}

pub fn run_amortized_proposal<K: ProposalKernel>(
    kernel: &K,
    x0: &K::State,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<PathRecord<K::State, K::Sample>> {
    if steps == 0 {
        return Err(Error::Config("amortized proposal needs T >= 1".into()));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut samples = Vec::with_capacity(steps);
    states.push(x0.clone());
    for t in 0..steps {
        let (next, zeta) = kernel.draw(&states[t], rng);
        if !next.is_finite() {
            return Err(Error::Numerical {
                step: t,
                what: "proposal kernel produced a non-finite state".into(),
            });
        }
        states.push(next);
        samples.push(zeta);
    }
    Ok(PathRecord { states, samples })
}

fn finite_or_numerical(value: f64, step: usize, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical {
            step,
            what: format!("{what} is {value}"),
        })
    }
}

/// Sum over the path of `log P(rev_from, rev_to) - log P(x_t, x_{t+1})`, where the
/// reverse endpoints come from `map`. A reverse density of zero makes the
/// whole ratio `-inf`.
fn path_log_ratio<K, F>(path: &PathRecord<K::State, K::Sample>, kernel: &K, map: F) -> Result<f64>
where
    K: ProposalKernel,
    F: Fn(&K::State) -> K::State,
{
    let mut total = 0.0;
    for (t, zeta) in path.samples.iter().enumerate() {
        let (x, y) = (&path.states[t], &path.states[t + 1]);
        let forward = finite_or_numerical(kernel.log_density(x, y, zeta), t, "forward log density")?;
        let reverse = kernel.log_density(&map(y), &map(x), zeta);
        if reverse == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += finite_or_numerical(reverse, t, "reverse log density")? - forward;
    }
    Ok(total)
}

/// Log of the reversible amortized acceptance ratio, before the `min` with 0.
pub fn log_accept_reversible<K, L>(
    path: &PathRecord<K::State, K::Sample>,
    kernel: &K,
    log_target: L,
) -> Result<f64>
where
    K: ProposalKernel,
    L: Fn(&K::State) -> f64,
{
    let steps = path.steps();
    let target = finite_or_numerical(log_target(path.proposal()), steps, "log target at proposal")?
        - finite_or_numerical(log_target(path.start()), 0, "log target at start")?;
    Ok(target + path_log_ratio(path, kernel, |s| s.clone())?)
}

/// The same ratio arranged as a product of per-step balance terms
/// `pi(x_{t+1}) P(x_{t+1}, x_t) / (pi(x_t) P(x_t, x_{t+1}))`.
pub fn log_accept_reversible_stepwise<K, L>(
    path: &PathRecord<K::State, K::Sample>,
    kernel: &K,
    log_target: L,
) -> Result<f64>
where
    K: ProposalKernel,
    L: Fn(&K::State) -> f64,
{
    let mut total = 0.0;
    for (t, zeta) in path.samples.iter().enumerate() {
        let (x, y) = (&path.states[t], &path.states[t + 1]);
        let reverse = kernel.log_density(y, x, zeta);
        if reverse == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let term = log_target(y) + reverse - log_target(x) - kernel.log_density(x, y, zeta);
        total += finite_or_numerical(term, t, "per-step balance term")?;
    }
    Ok(total)
}

/// Log of the skew-reversible amortized acceptance ratio, before the `min` with 0.
///
/// Assumes `log_target` is invariant under `involution`.
pub fn log_accept_skew<K, L, I>(
    path: &PathRecord<K::State, K::Sample>,
    kernel: &K,
    log_target: L,
    involution: &I,
) -> Result<f64>
where
    K: ProposalKernel,
    L: Fn(&K::State) -> f64,
    I: Involution<K::State>,
{
    let steps = path.steps();
    let flipped_end = involution.apply(path.proposal());
    let target = finite_or_numerical(log_target(&flipped_end), steps, "log target at proposal")?
        - finite_or_numerical(log_target(path.start()), 0, "log target at start")?;
    Ok(target + path_log_ratio(path, kernel, |s| involution.apply(s))?)
}

/// Accept iff `log(u) < min(0, log_ratio)`.
pub fn accepts(log_ratio: f64, uniform: f64) -> bool {
    uniform.ln() < log_ratio.min(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmortizedStep<S> {
    pub state: S,
    pub accepted: bool,
    pub log_ratio: f64,
}

/// One corrected round of the generic amortized chain.
///
/// With `involution = None` the reversible ratio is used and a rejection keeps
/// `x`. With an involution the skew-reversible ratio is used and a rejection
/// moves to `x^` (the involuted start). Numerical failures count as rejections.
pub fn amortized_mh_step<K, L, I>(
    kernel: &K,
    x: &K::State,
    steps: usize,
    log_target: L,
    involution: Option<&I>,
    rng: &mut dyn RngCore,
) -> Result<AmortizedStep<K::State>>
where
    K: ProposalKernel,
    L: Fn(&K::State) -> f64,
    I: Involution<K::State>,
{
    let uniform: f64 = rng.gen();
    let path = match run_amortized_proposal(kernel, x, steps, rng) {
        Ok(path) => Some(path),
        Err(Error::Numerical { .. }) => None,
        Err(e) => return Err(e),
    };
    let log_ratio = match &path {
        None => f64::NEG_INFINITY,
        Some(path) => {
            let ratio = match involution {
                None => log_accept_reversible(path, kernel, &log_target),
                Some(inv) => log_accept_skew(path, kernel, &log_target, inv),
            };
            ratio.unwrap_or(f64::NEG_INFINITY)
        }
    };
    let accepted = accepts(log_ratio, uniform);
    let state = match (accepted, path, involution) {
        (true, Some(path), _) => path.proposal().clone(),
        (_, _, Some(inv)) => inv.apply(x),
        (_, _, None) => x.clone(),
    };
    Ok(AmortizedStep {
        state,
        accepted,
        log_ratio,
    })
}

/// Gaussian random walk `y ~ N(x + drift * zeta, step^2 I)` with `zeta ~ N(0, 1)`.
///
/// `drift = 0` gives the symmetric walk. A nonzero drift makes each step
/// asymmetric given `zeta` while keeping `zeta` independent of the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianRandomWalk {
    pub step: f64,
    pub drift: f64,
}

impl GaussianRandomWalk {
    pub fn new(step: f64) -> Self {
        Self { step, drift: 0.0 }
    }

    pub fn with_drift(step: f64, drift: f64) -> Self {
        Self { step, drift }
    }
}

impl ProposalKernel for GaussianRandomWalk {
    type State = Vec<f64>;
    type Sample = f64;

    fn draw(&self, x: &Vec<f64>, rng: &mut dyn RngCore) -> (Vec<f64>, f64) {
        let zeta: f64 = StandardNormal.sample(rng);
        let y = x
            .iter()
            .map(|xi| {
                let z: f64 = StandardNormal.sample(rng);
                xi + self.drift * zeta + self.step * z
            })
            .collect();
        (y, zeta)
    }

    fn log_density(&self, from: &Vec<f64>, to: &Vec<f64>, zeta: &f64) -> f64 {
        let var = self.step * self.step;
        let sq: f64 = from
            .iter()
            .zip(to)
            .map(|(a, b)| {
                let d = b - a - self.drift * zeta;
                d * d
            })
            .sum();
        -0.5 * sq / var - 0.5 * from.len() as f64 * (2.0 * std::f64::consts::PI * var).ln()
    }
}
