//! Burn-in step-size adaptation toward a target acceptance rate.
//!
//! After every window of rounds the step size is rescaled by
//! `exp(gain * (acceptance - target))` and clamped to the schedule bounds.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyModel;
use crate::rng::StreamFactory;
use crate::samplers::{sampler_round, PhaseState, RoundStats, SamplerConfig, SamplerKind};
use crate::{Error, Result};

/// Consecutive zero-acceptance windows at the lower bound that count as stuck.
const STUCK_WINDOWS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerSchedule {
    pub target: f64,
    /// Rounds per adjustment.
    pub window: usize,
    pub gain: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Number of adjustment windows; tuning consumes `windows * window` rounds.
    pub windows: usize,
}

impl Default for TunerSchedule {
    fn default() -> Self {
        Self {
            target: 0.85,
            window: 200,
            gain: 0.5,
            min_step: 1e-6,
            max_step: 1.0,
            windows: 50,
        }
    }
}

impl TunerSchedule {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.target > 0.0 && self.target < 1.0) {
            problems.push(format!("target acceptance must lie in (0, 1), got {}", self.target));
        }
        if self.window == 0 {
            problems.push("tuning window must be at least 1 round".into());
        }
        if self.windows == 0 {
            problems.push("need at least one tuning window".into());
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            problems.push(format!("gain must be positive, got {}", self.gain));
        }
        if !(self.min_step > 0.0 && self.min_step < self.max_step && self.max_step.is_finite()) {
            problems.push(format!(
                "step bounds must satisfy 0 < min < max, got [{}, {}]",
                self.min_step, self.max_step
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn rounds(&self) -> usize {
        self.window * self.windows
    }

    /// One application of the update rule.
    pub fn update(&self, step_size: f64, acceptance: f64) -> f64 {
        (step_size * (self.gain * (acceptance - self.target)).exp()).clamp(self.min_step, self.max_step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningWindow {
    pub index: usize,
    /// Step size used throughout the window.
    pub step_size: f64,
    pub acceptance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    /// Frozen step size for the rest of the chain.
    pub step_size: f64,
    pub trace: Vec<TuningWindow>,
    /// Chain state at the end of tuning.
    pub state: PhaseState,
    /// Rounds consumed (round streams `0 .. rounds_used`).
    pub rounds_used: usize,
    pub stats: RoundStats,
}

impl TuningOutcome {
    /// Mean acceptance of the last `k` windows.
    pub fn tail_acceptance(&self, k: usize) -> f64 {
        let k = k.min(self.trace.len()).max(1);
        let tail = &self.trace[self.trace.len().saturating_sub(k)..];
        tail.iter().map(|w| w.acceptance).sum::<f64>() / tail.len() as f64
    }
}

pub fn write_trace_csv(trace: &[TuningWindow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "window,step_size,acceptance")?;
        for t in trace {
            writeln!(w, "{},{:.16e},{:.16e}", t.index, t.step_size, t.acceptance)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Adapts `config.step_size` over `schedule.windows` windows, starting from
/// `init` and drawing round `k` from stream `k` of `streams`.
pub fn tune_step_size<M: EnergyModel + ?Sized>(
    kind: SamplerKind,
    config: &SamplerConfig,
    model: &M,
    schedule: &TunerSchedule,
    init: PhaseState,
    streams: &StreamFactory,
) -> Result<TuningOutcome> {
    schedule.validate()?;
    if kind == SamplerKind::Sghmc {
        return Err(Error::Config("SGHMC has no acceptance rate to tune against".into()));
    }
    let mut config = config.clone();
    config.step_size = config.step_size.clamp(schedule.min_step, schedule.max_step);
    config.validate()?;
    let mut state = init;
    let mut trace = Vec::with_capacity(schedule.windows);
    let mut stats = RoundStats::default();
    let mut stuck = 0;
    let mut round = 0;
    for index in 0..schedule.windows {
        let mut window_stats = RoundStats::default();
        for _ in 0..schedule.window {
            let mut rng = streams.stream(round as u64);
            let (next, record) = sampler_round(kind, &config, &state, model, &mut rng)?;
            window_stats.record(record.outcome);
            stats.record(record.outcome);
            state = next;
            round += 1;
        }
        let acceptance = window_stats.acceptance_rate();
        trace.push(TuningWindow {
            index,
            step_size: config.step_size,
            acceptance,
        });
        if acceptance == 0.0 && config.step_size <= schedule.min_step {
            stuck += 1;
            if stuck >= STUCK_WINDOWS {
                return Err(Error::TuningFailed {
                    step_size: config.step_size,
                    trace,
                });
            }
        } else {
            stuck = 0;
        }
        let next = schedule.update(config.step_size, acceptance);
        // keep eps * beta < 1
        config.step_size = if next * config.friction < 1.0 { next } else { config.step_size };
    }
    Ok(TuningOutcome {
        step_size: config.step_size,
        trace,
        state,
        rounds_used: round,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{DoubleWell, Flat, GaussianNoise};
    use proptest::prelude::*;

    #[test]
    fn schedule_validation() {
        assert!(TunerSchedule::default().validate().is_ok());
        let bad = TunerSchedule {
            target: 1.5,
            window: 0,
            gain: -1.0,
            min_step: 1.0,
            max_step: 0.5,
            windows: 0,
        };
        let Err(Error::Config(msg)) = bad.validate() else { panic!() };
        assert_eq!(msg.matches(';').count(), 4);
    }

    #[test]
    fn update_rule_fixed_point_and_monotone() {
        let s = TunerSchedule::default();
        assert_eq!(s.update(0.1, 0.85), 0.1);
        assert!(s.update(0.1, 1.0) > 0.1);
        assert!(s.update(0.1, 0.2) < 0.1);
        assert_eq!(s.update(0.99, 1.0), 1.0);
        assert_eq!(s.update(1e-6, 0.0), 1e-6);
    }

    #[test]
    fn always_accepting_target_grows_step() {
        let s = TunerSchedule { window: 10, windows: 20, ..Default::default() };
        let c = SamplerConfig::new(0.01, 1.0, 0.0, 3);
        let out = tune_step_size(
            SamplerKind::Amagold,
            &c,
            &Flat::new(1),
            &s,
            PhaseState::at_rest(vec![0.0]),
            &StreamFactory::new(1),
        )
        .unwrap();
        assert_eq!(out.rounds_used, 200);
        assert!(out.trace.windows(2).all(|w| w[1].step_size > w[0].step_size || w[1].step_size == 1.0));
        assert!(out.step_size > 0.01);
    }

    #[test]
    fn stuck_chain_reports_failure_with_trace() {
        // a potential whose proposals always land on +inf energy
        struct Wall;
        impl EnergyModel for Wall {
            fn dim(&self) -> usize {
                1
            }
            fn potential(&self, theta: &[f64]) -> Result<f64> {
                Ok(if theta[0] == 0.0 { 0.0 } else { f64::INFINITY })
            }
            fn gradient(&self, _: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        let s = TunerSchedule { window: 5, windows: 50, min_step: 1e-3, max_step: 1.0, ..Default::default() };
        let c = SamplerConfig::new(1e-3, 1.0, 0.0, 2);
        let err = tune_step_size(
            SamplerKind::Amagold,
            &c,
            &Wall,
            &s,
            PhaseState::at_rest(vec![0.0]),
            &StreamFactory::new(0),
        )
        .unwrap_err();
        let Error::TuningFailed { trace, step_size } = err else { panic!("{err}") };
        assert_eq!(step_size, 1e-3);
        assert_eq!(trace.len(), STUCK_WINDOWS);
    }

    #[test]
    fn sghmc_cannot_be_tuned() {
        let c = SamplerConfig::new(0.1, 1.0, 0.1, 3);
        let r = tune_step_size(
            SamplerKind::Sghmc,
            &c,
            &DoubleWell,
            &TunerSchedule::default(),
            PhaseState::at_rest(vec![0.0]),
            &StreamFactory::new(0),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn bounds_and_monotonicity_hold_on_double_well() {
        let s = TunerSchedule { window: 50, windows: 30, ..Default::default() };
        let c = SamplerConfig::new(0.6, 1.0, 0.25, 10);
        let model = GaussianNoise::new(DoubleWell, 1.0);
        let out = tune_step_size(
            SamplerKind::Amagold,
            &c,
            &model,
            &s,
            PhaseState::at_rest(vec![0.0]),
            &StreamFactory::new(4),
        )
        .unwrap();
        for w in out.trace.windows(2) {
            assert!((s.min_step..=s.max_step).contains(&w[1].step_size));
            if w[0].acceptance > s.target {
                assert!(w[1].step_size >= w[0].step_size);
            } else if w[0].acceptance < s.target {
                assert!(w[1].step_size <= w[0].step_size);
            }
        }
    }

    proptest! {
        #[test]
        fn update_stays_in_bounds(eps in 1e-6f64..1.0, acc in 0.0f64..=1.0, gain in 0.01f64..5.0) {
            let s = TunerSchedule { gain, ..Default::default() };
            let next = s.update(eps, acc);
            prop_assert!((s.min_step..=s.max_step).contains(&next));
            if acc > s.target { prop_assert!(next >= eps); }
            if acc < s.target { prop_assert!(next <= eps); }
        }
    }
}
