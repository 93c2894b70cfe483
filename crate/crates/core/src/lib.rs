//! Second-order stochastic-gradient MCMC with amortized Metropolis-Hastings
//! correction.
//!
//! The crate provides four chains over the momentum-augmented state
//! `(theta, r)`:
//!
//! * **AMAGOLD**: stochastic-gradient second-order Langevin dynamics whose
//!   `T`-step trajectory is corrected by a single Metropolis-Hastings test.
//!   The path-density ratio is tracked by an energy accumulator built from
//!   gradients already computed during the trajectory. Both the reversible
//!   (momentum resampled every round) and skew-reversible variants are
//!   supported.
//! * **L2MC** with amortized correction: AMAGOLD run on full-batch gradients.
//! * **HMC**: full-batch leapfrog with a standard Hamiltonian acceptance test.
//! * **SGHMC**: the uncorrected stochastic-gradient baseline.
//!
//! Supporting modules hold the target energies ([`energy`]), the generic
//! amortized acceptance machinery ([`ama`]), density and moment diagnostics
//! ([`diagnostics`]), burn-in step-size adaptation ([`tuning`]) and file I/O
//! ([`dataio`]).
//!
//! ```
//! use amagold::energy::{DoubleWell, GaussianNoise};
//! use amagold::samplers::{run_chain, SamplerConfig, SamplerKind};
//!
//! let model = GaussianNoise::new(DoubleWell, 1.0);
//! let config = SamplerConfig::new(0.25, 1.0, 0.25, 10);
//! let set = run_chain(SamplerKind::Amagold, &config, &model, 2_000, 500, 7).unwrap();
//! assert_eq!(set.samples.len(), 1_500);
//! assert!(set.stats.acceptance_rate() > 0.5);
//! ```

pub mod ama;
pub mod dataio;
pub mod diagnostics;
pub mod energy;
mod error;
pub mod rng;
pub mod samplers;
pub mod tuning;

pub use error::{Error, Result};
pub use samplers::PhaseState;
