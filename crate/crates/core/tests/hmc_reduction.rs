//! With exact gradients and no friction, AMAGOLD's accumulator telescopes into
//! the kinetic-energy difference and the round becomes an HMC round.

use amagold::energy::{Dist1, DoubleWell, EnergyModel, FullBatch, GaussianNoise};
use amagold::rng::StreamFactory;
use amagold::samplers::{amagold_round, hmc_round, kinetic, PhaseState, SamplerConfig};

fn check_telescoping<M: EnergyModel>(model: &M, config: &SamplerConfig, start: Vec<f64>, seed: u64) {
    let streams = StreamFactory::new(seed);
    let mut state = PhaseState::at_rest(start);
    for k in 0..1000 {
        let (next, rec) = amagold_round(config, &state, model, &mut streams.stream(k)).unwrap();
        let s2 = config.momentum_variance;
        let r_first = &rec.momenta[0];
        let r_last = rec.momenta.last().unwrap();
        let rho = *rec.rho.last().unwrap();
        assert!((rho - (kinetic(r_first, s2) - kinetic(r_last, s2))).abs() < 1e-10);
        let h0 = model.potential(&state.position).unwrap() + kinetic(r_first, s2);
        let h1 = rec.proposal.as_ref().unwrap().hamiltonian(model, s2).unwrap();
        assert!((rec.log_accept.unwrap() - (h0 - h1)).abs() < 1e-10, "round {k}");
        state = next;
    }
}

#[test]
fn accumulator_telescopes_on_double_well() {
    check_telescoping(&DoubleWell, &SamplerConfig::new(0.25, 1.0, 0.0, 10), vec![0.0], 1);
    check_telescoping(&DoubleWell, &SamplerConfig::new(0.1, 2.5, 0.0, 7), vec![-2.0], 2);
}

#[test]
fn accumulator_telescopes_on_dist1() {
    check_telescoping(&Dist1::default(), &SamplerConfig::new(0.15, 1.0, 0.0, 10), vec![0.0, 0.0], 3);
}

#[test]
fn full_batch_wrapper_strips_gradient_noise() {
    let model = FullBatch(GaussianNoise::new(DoubleWell, 1.0));
    check_telescoping(&model, &SamplerConfig::new(0.25, 1.0, 0.0, 10), vec![1.0], 4);
}

#[test]
fn decisions_and_positions_match_hmc() {
    let config = SamplerConfig::new(0.3, 1.0, 0.0, 10);
    let streams = StreamFactory::new(9);
    let mut a = PhaseState::at_rest(vec![0.5]);
    let mut h = a.clone();
    let mut rejections = 0;
    for k in 0..1000 {
        let (na, ra) = amagold_round(&config, &a, &DoubleWell, &mut streams.stream(k)).unwrap();
        let (nh, rh) = hmc_round(&config, &h, &DoubleWell, &mut streams.stream(k)).unwrap();
        assert_eq!(ra.outcome, rh.outcome, "round {k}");
        assert_eq!(ra.positions, rh.positions);
        assert!((ra.log_accept.unwrap() - rh.log_accept.unwrap()).abs() < 1e-10);
        assert_eq!(na.position, nh.position);
        rejections += (ra.outcome != amagold::samplers::RoundOutcome::Accepted) as usize;
        a = na;
        h = nh;
    }
    // the step is large enough that both branches are exercised
    assert!(rejections > 10, "{rejections}");
}
