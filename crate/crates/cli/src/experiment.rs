//! Execution of the experiment kinds.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use amagold::dataio::{load_dataset, write_run_report, write_samples, LoadOptions, RunReport};
use amagold::diagnostics::{
    analytic_density, histogram_density, ks_two_sample, moments, parameter_mse, symmetric_kl, GridSpec, InverseCdf,
};
use amagold::energy::{Dist1, Dist2, DoubleWell, EnergyModel, GaussianNoise, LogisticRegression};
use amagold::rng::{mix_seed, std_normal, StreamFactory, INIT_STREAM};
use amagold::samplers::{run_chain, run_chain_from, PhaseState, RoundStats, SampleSet};
use amagold::tuning::{tune_step_size, write_trace_csv};

use crate::config::{ExperimentConfig, ExperimentKind, ModelChoice};
use crate::CliError;

/// Posterior summary written by an `oracle` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub sampler: String,
    pub step_size: f64,
    pub rounds: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
}

pub fn read_reference(path: &Path) -> Result<Reference, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text).map_err(amagold::Error::from)?)
}

/// What a chain's samples are scored against.
enum Scoring {
    Density { truth: amagold::diagnostics::GridDensity },
    Mse { reference: Vec<f64> },
    Nothing,
}

struct Setup {
    model: Box<dyn EnergyModel>,
    scoring: Scoring,
}

/// Histogram grid for a synthetic model; sweeps use the coarser 2D grid.
pub fn default_grid(model: ModelChoice, sweep: bool) -> Option<GridSpec> {
    let side = if sweep { 100 } else { 200 };
    let grid = match model {
        ModelChoice::Doublewell => GridSpec::line(DoubleWell::SUPPORT.0, DoubleWell::SUPPORT.1, 900),
        ModelChoice::Dist1 => GridSpec::square([-4.0, -8.0], [8.0, 8.0], [side, side]),
        ModelChoice::Dist2 => GridSpec::square([-6.0, -6.0], [6.0, 6.0], [side, side]),
        ModelChoice::Logreg => return None,
    };
    Some(grid.expect("static grids are valid"))
}

fn grid_for(cfg: &ExperimentConfig) -> Option<GridSpec> {
    let mut grid = default_grid(cfg.model, cfg.experiment == ExperimentKind::Sweep)?;
    if let Some(bins) = &cfg.grid_bins {
        grid.bins = bins.clone();
    }
    Some(grid)
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    let noise = cfg.gradient_noise;
    let model: Box<dyn EnergyModel> = match cfg.model {
        ModelChoice::Doublewell => Box::new(GaussianNoise::new(DoubleWell, noise)),
        ModelChoice::Dist1 => Box::new(GaussianNoise::new(Dist1::new(cfg.dist1_variance)?, noise)),
        ModelChoice::Dist2 => Box::new(GaussianNoise::new(Dist2, noise)),
        ModelChoice::Logreg => {
            let path = cfg.dataset.as_ref().expect("validated");
            let loaded = load_dataset(
                path,
                LoadOptions {
                    standardize: cfg.standardize,
                    intercept: cfg.intercept,
                },
            )?;
            if !loaded.constant_columns.is_empty() {
                warn!("constant feature columns {:?} kept with scale 1", loaded.constant_columns);
            }
            let n = loaded.data.len();
            Box::new(LogisticRegression::new(loaded.data, cfg.prior_variance, cfg.minibatch.unwrap_or(n))?)
        }
    };
    let scoring = match (grid_for(cfg), &cfg.reference) {
        (Some(grid), _) => Scoring::Density {
            truth: analytic_density(|x| model.potential(x).unwrap_or(f64::INFINITY), &grid)?,
        },
        (None, Some(path)) => {
            let reference = read_reference(path)?;
            if reference.mean.len() != model.dim() {
                return Err(amagold::Error::DimensionMismatch {
                    expected: model.dim(),
                    got: reference.mean.len(),
                }
                .into());
            }
            Scoring::Mse { reference: reference.mean }
        }
        (None, None) => Scoring::Nothing,
    };
    Ok(Setup { model, scoring })
}

fn score(scoring: &Scoring, set: &SampleSet, metrics: &mut BTreeMap<String, f64>) -> Result<(), CliError> {
    match scoring {
        Scoring::Density { truth } => {
            let h = histogram_density(&set.samples, &truth.grid)?;
            metrics.insert("symmetric_kl".into(), symmetric_kl(&h, truth)?);
            metrics.insert("histogram_spill".into(), h.spill as f64);
        }
        Scoring::Mse { reference } => {
            let mean = mean_of(&set.samples);
            metrics.insert("mse".into(), parameter_mse(&mean, reference)?);
        }
        Scoring::Nothing => {}
    }
    Ok(())
}

fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, x) in m.iter_mut().zip(r) {
            *a += x;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

fn new_report(cfg: &ExperimentConfig) -> RunReport {
    RunReport {
        experiment: format!("{:?}", cfg.experiment).to_lowercase(),
        sampler: cfg.sampler.name().into(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        rounds: cfg.rounds,
        burn_in: cfg.burn_in,
        accepted: 0,
        rejected: 0,
        out_of_domain: 0,
        numerical_failures: 0,
        acceptance_rate: 0.0,
        wall_clock_seconds: 0.0,
        metrics: BTreeMap::new(),
        outputs: BTreeMap::new(),
        complete: false,
        error: None,
    }
}

fn set_stats(report: &mut RunReport, stats: &RoundStats) {
    report.accepted = stats.accepted;
    report.rejected = stats.rejected;
    report.out_of_domain = stats.out_of_domain;
    report.numerical_failures = stats.numerical_failures;
    report.acceptance_rate = stats.acceptance_rate();
}

fn add_stats(a: &mut RoundStats, b: &RoundStats) {
    a.accepted += b.accepted;
    a.rejected += b.rejected;
    a.out_of_domain += b.out_of_domain;
    a.numerical_failures += b.numerical_failures;
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Runs the configured experiment, writing artifacts and `report.json` into
/// `cfg.out`. On failure the report is still written, flagged incomplete.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(CliError::Usage(problems));
    }
    create_dir(&cfg.out)?;
    let start = Instant::now();
    let mut report = new_report(cfg);
    let result = match cfg.experiment {
        ExperimentKind::Run => run(cfg, &mut report),
        ExperimentKind::Sweep => sweep(cfg, &mut report),
        ExperimentKind::Tune => tune(cfg, &mut report),
        ExperimentKind::Stationarity => stationarity(cfg, &mut report),
        ExperimentKind::Oracle => oracle(cfg, &mut report),
    };
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    report.complete = result.is_ok();
    if let Err(e) = &result {
        report.error = Some(e.to_string());
    }
    let path = cfg.out.join("report.json");
    report.outputs.insert("report".into(), path.clone());
    write_run_report(&report, &path)?;
    result.map(|_| report)
}

fn run(cfg: &ExperimentConfig, report: &mut RunReport) -> Result<(), CliError> {
    let s = setup(cfg)?;
    if let Some(r) = &cfg.reference {
        report.outputs.insert("reference".into(), r.clone());
    }
    info!("{} on {:?}: {} rounds at epsilon {}", cfg.sampler.name(), cfg.model, cfg.rounds, cfg.epsilon);
    let set = run_chain(cfg.sampler.kind(), &cfg.sampler_config(cfg.epsilon), &s.model, cfg.rounds, cfg.burn_in, cfg.seed)?;
    set_stats(report, &set.stats);
    let samples = cfg.out.join("samples.csv");
    write_samples(&set, &samples)?;
    report.outputs.insert("samples".into(), samples);
    score(&s.scoring, &set, &mut report.metrics)?;
    if let Scoring::Density { truth } = &s.scoring {
        let path = cfg.out.join("density.csv");
        histogram_density(&set.samples, &truth.grid)?.write_csv(&path)?;
        report.outputs.insert("density".into(), path);
        let path = cfg.out.join("truth.csv");
        truth.write_csv(&path)?;
        report.outputs.insert("truth".into(), path);
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, report: &mut RunReport) -> Result<(), CliError> {
    let s = setup(cfg)?;
    let metric = match s.scoring {
        Scoring::Density { .. } => Some("symmetric_kl"),
        Scoring::Mse { .. } => Some("mse"),
        Scoring::Nothing => None,
    };
    let points: Vec<Result<(RunReport, RoundStats), CliError>> = cfg
        .sweep
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| {
            let dir = cfg.out.join(format!("point_{i:03}"));
            create_dir(&dir)?;
            let seed = mix_seed(cfg.seed, i as u64);
            let mut r = new_report(cfg);
            r.seed = seed;
            let start = Instant::now();
            let outcome = (|| -> Result<RoundStats, CliError> {
                let set = run_chain(cfg.sampler.kind(), &cfg.sampler_config(eps), &s.model, cfg.rounds, cfg.burn_in, seed)?;
                set_stats(&mut r, &set.stats);
                let samples = dir.join("samples.csv");
                write_samples(&set, &samples)?;
                r.outputs.insert("samples".into(), samples);
                score(&s.scoring, &set, &mut r.metrics)?;
                Ok(set.stats)
            })();
            r.metrics.insert("epsilon".into(), eps);
            r.wall_clock_seconds = start.elapsed().as_secs_f64();
            r.complete = outcome.is_ok();
            r.error = outcome.as_ref().err().map(ToString::to_string);
            let path = dir.join("report.json");
            write_run_report(&r, &path)?;
            info!("sweep point epsilon {eps} done");
            outcome.map(|stats| (r, stats))
        })
        .collect();

    let mut total = RoundStats::default();
    let mut rows = String::from("epsilon,");
    rows += metric.unwrap_or("metric");
    rows += ",acceptance_rate,numerical_failures\n";
    let mut first_error = None;
    for (i, (eps, point)) in cfg.sweep.iter().zip(points).enumerate() {
        report
            .outputs
            .insert(format!("point_{i:03}"), cfg.out.join(format!("point_{i:03}")).join("report.json"));
        match point {
            Ok((r, stats)) => {
                add_stats(&mut total, &stats);
                let value = metric.and_then(|m| r.metrics.get(m).copied()).unwrap_or(f64::NAN);
                rows += &format!("{eps:.16e},{value:.16e},{:.16e},{}\n", r.acceptance_rate, r.numerical_failures);
                if let Some(m) = metric {
                    report.metrics.insert(format!("{m}[{eps}]"), value);
                }
            }
            Err(e) => {
                rows += &format!("{eps:.16e},NaN,NaN,NaN\n");
                first_error.get_or_insert(e);
            }
        }
    }
    set_stats(report, &total);
    let summary = cfg.out.join("summary.csv");
    write_text(&summary, &rows)?;
    report.outputs.insert("summary".into(), summary);
    first_error.map_or(Ok(()), Err)
}

fn initial_state(model: &dyn EnergyModel, sigma2: f64, seed: u64) -> PhaseState {
    let mut rng = StreamFactory::new(seed).stream(INIT_STREAM);
    let momentum = (0..model.dim()).map(|_| sigma2.sqrt() * std_normal(&mut rng)).collect();
    PhaseState {
        position: vec![0.0; model.dim()],
        momentum,
    }
}

fn tune(cfg: &ExperimentConfig, report: &mut RunReport) -> Result<(), CliError> {
    let s = setup(cfg)?;
    let schedule = cfg.schedule();
    let init = initial_state(&s.model, cfg.sigma2, cfg.seed);
    let base = cfg.sampler_config(cfg.epsilon);
    let tuned = match tune_step_size(cfg.sampler.kind(), &base, &s.model, &schedule, init, &StreamFactory::new(cfg.seed)) {
        Ok(t) => t,
        Err(amagold::Error::TuningFailed { step_size, trace }) => {
            let path = cfg.out.join("tuning.csv");
            write_trace_csv(&trace, &path)?;
            report.outputs.insert("tuning".into(), path);
            return Err(amagold::Error::TuningFailed { step_size, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let path = cfg.out.join("tuning.csv");
    write_trace_csv(&tuned.trace, &path)?;
    report.outputs.insert("tuning".into(), path);
    report.metrics.insert("tuned_step_size".into(), tuned.step_size);
    report.metrics.insert("tail_acceptance".into(), tuned.tail_acceptance(5));
    report.metrics.insert("tuning_rounds".into(), tuned.rounds_used as f64);
    info!("tuned step size {:.5} after {} rounds", tuned.step_size, tuned.rounds_used);

    // The step size is frozen from here on; the rest of burn-in and the
    // retained rounds continue from the tuned state on fresh streams.
    let frozen = cfg.sampler_config(tuned.step_size);
    let rounds = cfg.rounds - tuned.rounds_used;
    let burn_in = cfg.burn_in - tuned.rounds_used;
    let set = run_chain_from(cfg.sampler.kind(), &frozen, &s.model, tuned.state, rounds, burn_in, mix_seed(cfg.seed, 1))?;
    let mut stats = tuned.stats;
    add_stats(&mut stats, &set.stats);
    set_stats(report, &stats);
    report.metrics.insert("post_tuning_acceptance".into(), set.stats.acceptance_rate());
    let samples = cfg.out.join("samples.csv");
    write_samples(&set, &samples)?;
    report.outputs.insert("samples".into(), samples);
    score(&s.scoring, &set, &mut report.metrics)
}

/// KS significance level of the stationarity check.
pub const STATIONARITY_LEVEL: f64 = 0.01;

/// Final positions of `walkers` chains started from exact draws, plus as many
/// fresh exact draws.
pub fn stationarity_samples(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Vec<f64>, RoundStats), CliError> {
    let model = GaussianNoise::new(DoubleWell, cfg.gradient_noise);
    let exact = InverseCdf::new(|x| DoubleWell.potential(&[x]).unwrap_or(f64::INFINITY), -6.0, 5.0, 200_000)?;
    let config = cfg.sampler_config(cfg.epsilon);
    let moved: Vec<(f64, RoundStats)> = (0..cfg.walkers)
        .into_par_iter()
        .map(|w| {
            let seed = mix_seed(cfg.seed, w as u64);
            let mut rng = StreamFactory::new(seed).stream(INIT_STREAM);
            let theta = exact.sample(&mut rng);
            let r = cfg.sigma2.sqrt() * std_normal(&mut rng);
            let init = PhaseState::new(vec![theta], vec![r])?;
            let set = run_chain_from(
                cfg.sampler.kind(),
                &config,
                &model,
                init,
                cfg.walker_rounds,
                cfg.walker_rounds - 1,
                seed,
            )?;
            Ok((set.samples[0][0], set.stats))
        })
        .collect::<Result<_, CliError>>()?;
    let mut rng = StreamFactory::new(cfg.seed).stream(INIT_STREAM);
    let fresh = (0..cfg.walkers).map(|_| exact.sample(&mut rng)).collect();
    let mut stats = RoundStats::default();
    for (_, s) in &moved {
        add_stats(&mut stats, s);
    }
    Ok((moved.into_iter().map(|(x, _)| x).collect(), fresh, stats))
}

fn stationarity(cfg: &ExperimentConfig, report: &mut RunReport) -> Result<(), CliError> {
    let (moved, fresh, stats) = stationarity_samples(cfg)?;
    set_stats(report, &stats);
    let ks = ks_two_sample(&moved, &fresh)?;
    report.metrics.insert("ks_statistic".into(), ks.statistic);
    report.metrics.insert("ks_p_value".into(), ks.p_value);
    report.metrics.insert("ks_passed".into(), f64::from(u8::from(ks.passes(STATIONARITY_LEVEL))));
    let mut text = String::from("walker,moved,fresh\n");
    for (w, (a, b)) in moved.iter().zip(&fresh).enumerate() {
        text += &format!("{w},{a:.16e},{b:.16e}\n");
    }
    let path = cfg.out.join("stationarity.csv");
    write_text(&path, &text)?;
    report.outputs.insert("stationarity".into(), path);
    info!("KS statistic {:.4}, p-value {:.4}", ks.statistic, ks.p_value);
    Ok(())
}

fn oracle(cfg: &ExperimentConfig, report: &mut RunReport) -> Result<(), CliError> {
    let s = setup(cfg)?;
    info!("oracle: {} full-batch rounds at epsilon {}", cfg.rounds, cfg.epsilon);
    let set = run_chain(cfg.sampler.kind(), &cfg.sampler_config(cfg.epsilon), &s.model, cfg.rounds, cfg.burn_in, cfg.seed)?;
    set_stats(report, &set.stats);
    let m = moments(&set.samples)?;
    let reference = Reference {
        sd: (0..m.mean.len()).map(|i| m.covariance[i][i].sqrt()).collect(),
        mean: m.mean,
        sampler: cfg.sampler.name().into(),
        step_size: cfg.epsilon,
        rounds: cfg.rounds,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
        dataset: cfg.dataset.clone(),
    };
    let path = cfg.out.join("reference.json");
    let text = serde_json::to_string_pretty(&reference).map_err(amagold::Error::from)? + "\n";
    write_text(&path, &text)?;
    report.outputs.insert("reference".into(), path);
    Ok(())
}
