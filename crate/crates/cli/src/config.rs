//! Experiment configuration: file values overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use amagold::samplers::{SamplerConfig, SamplerKind};
use amagold::tuning::TunerSchedule;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    Sweep,
    Tune,
    Stationarity,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerChoice {
    Amagold,
    /// AMAGOLD without momentum refresh between rounds.
    AmagoldSkew,
    Sghmc,
    Hmc,
    L2mc,
}

impl SamplerChoice {
    pub fn kind(self) -> SamplerKind {
        match self {
            SamplerChoice::Amagold | SamplerChoice::AmagoldSkew => SamplerKind::Amagold,
            SamplerChoice::Sghmc => SamplerKind::Sghmc,
            SamplerChoice::Hmc => SamplerKind::Hmc,
            SamplerChoice::L2mc => SamplerKind::L2mc,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerChoice::AmagoldSkew => "amagold-skew",
            other => other.kind().name(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Doublewell,
    Dist1,
    Dist2,
    Logreg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

/// Fully resolved experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub sampler: SamplerChoice,
    pub model: ModelChoice,
    pub dataset: Option<PathBuf>,
    pub standardize: bool,
    pub intercept: bool,
    pub prior_variance: f64,
    /// Minibatch size for the logistic model; the full dataset when absent.
    pub minibatch: Option<usize>,
    /// Standard deviation of the Gaussian noise added to synthetic gradients.
    pub gradient_noise: f64,
    pub dist1_variance: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub inner_steps: usize,
    pub resample: bool,
    pub rounds: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Step sizes for `sweep`, strictly increasing.
    pub sweep: Vec<f64>,
    /// Histogram bins per dimension; the model's default grid when absent.
    pub grid_bins: Option<Vec<usize>>,
    pub target_accept: f64,
    pub tune_window: usize,
    pub tune_gain: f64,
    /// Adaptation windows; `burn_in / tune_window` when absent.
    pub tune_windows: Option<usize>,
    pub walkers: usize,
    pub walker_rounds: usize,
    /// Posterior-mean file produced by an `oracle` run, for MSE reporting.
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
}

/// The same keys as [`ExperimentConfig`], all optional; the config-file schema.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartialConfig {
    pub experiment: Option<ExperimentKind>,
    pub sampler: Option<SamplerChoice>,
    pub model: Option<ModelChoice>,
    pub dataset: Option<PathBuf>,
    pub standardize: Option<bool>,
    pub intercept: Option<bool>,
    pub prior_variance: Option<f64>,
    pub minibatch: Option<usize>,
    pub gradient_noise: Option<f64>,
    pub dist1_variance: Option<f64>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub sigma2: Option<f64>,
    pub inner_steps: Option<usize>,
    pub resample: Option<bool>,
    pub rounds: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub sweep: Option<Vec<f64>>,
    pub grid_bins: Option<Vec<usize>>,
    pub target_accept: Option<f64>,
    pub tune_window: Option<usize>,
    pub tune_gain: Option<f64>,
    pub tune_windows: Option<usize>,
    pub walkers: Option<usize>,
    pub walker_rounds: Option<usize>,
    pub reference: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Parser)]
#[command(name = "amagold", version, about = "Run AMAGOLD, SGHMC, HMC and L2MC experiments")]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub experiment: Option<ExperimentKind>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerChoice>,
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    /// Labelled data file for the logistic model.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub standardize: Option<Switch>,
    #[arg(long, value_enum)]
    pub intercept: Option<Switch>,
    #[arg(long)]
    pub prior_variance: Option<f64>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub gradient_noise: Option<f64>,
    #[arg(long)]
    pub dist1_variance: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub resample: Option<Switch>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated step sizes for a sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    /// Comma-separated histogram bins per dimension.
    #[arg(long, value_delimiter = ',')]
    pub grid_bins: Option<Vec<usize>>,
    #[arg(long)]
    pub target_accept: Option<f64>,
    #[arg(long)]
    pub tune_window: Option<usize>,
    #[arg(long)]
    pub tune_gain: Option<f64>,
    #[arg(long)]
    pub tune_windows: Option<usize>,
    #[arg(long)]
    pub walkers: Option<usize>,
    #[arg(long)]
    pub walker_rounds: Option<usize>,
    /// Reference posterior mean (`reference.json` from an oracle run).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

impl Cli {
    fn as_partial(&self) -> PartialConfig {
        PartialConfig {
            experiment: self.experiment,
            sampler: self.sampler,
            model: self.model,
            dataset: self.dataset.clone(),
            standardize: self.standardize.map(Into::into),
            intercept: self.intercept.map(Into::into),
            prior_variance: self.prior_variance,
            minibatch: self.minibatch,
            gradient_noise: self.gradient_noise,
            dist1_variance: self.dist1_variance,
            epsilon: self.epsilon,
            beta: self.beta,
            sigma2: self.sigma2,
            inner_steps: self.inner_steps,
            resample: self.resample.map(Into::into),
            rounds: self.rounds,
            burn_in: self.burn_in,
            seed: self.seed,
            sweep: self.sweep.clone(),
            grid_bins: self.grid_bins.clone(),
            target_accept: self.target_accept,
            tune_window: self.tune_window,
            tune_gain: self.tune_gain,
            tune_windows: self.tune_windows,
            walkers: self.walkers,
            walker_rounds: self.walker_rounds,
            reference: self.reference.clone(),
            out: self.out.clone(),
        }
    }
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        PartialConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

impl PartialConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(vec![format!("cannot read config {}: {e}", path.display())]))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(vec![format!("invalid config {}: {e}", path.display())]))
    }

    /// `top` wins wherever it has a value.
    pub fn overlay(self, top: PartialConfig) -> PartialConfig {
        let base = self;
        overlay!(base, top; experiment, sampler, model, dataset, standardize, intercept, prior_variance,
            minibatch, gradient_noise, dist1_variance, epsilon, beta, sigma2, inner_steps, resample,
            rounds, burn_in, seed, sweep, grid_bins, target_accept, tune_window, tune_gain, tune_windows,
            walkers, walker_rounds, reference, out)
    }

    /// Fills defaults and validates, reporting every problem at once.
    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let mut problems = Vec::new();
        let experiment = self.experiment.unwrap_or(ExperimentKind::Run);
        let model = match self.model {
            Some(m) => m,
            None => {
                problems.push("missing required field `model` (doublewell, dist1, dist2 or logreg)".to_string());
                ModelChoice::Doublewell
            }
        };
        let default_sampler = if experiment == ExperimentKind::Oracle {
            SamplerChoice::L2mc
        } else {
            SamplerChoice::Amagold
        };
        let sampler = self.sampler.unwrap_or(default_sampler);
        let resample = match (sampler, self.resample) {
            (SamplerChoice::AmagoldSkew, Some(true)) => {
                problems.push("sampler `amagold-skew` never refreshes momentum; it conflicts with `resample: on`".into());
                false
            }
            (SamplerChoice::AmagoldSkew, _) => false,
            (_, r) => r.unwrap_or(true),
        };
        let default_rounds = if experiment == ExperimentKind::Oracle { 1_000_000 } else { 100_000 };
        let cfg = ExperimentConfig {
            experiment,
            sampler,
            model,
            dataset: self.dataset,
            standardize: self.standardize.unwrap_or(true),
            intercept: self.intercept.unwrap_or(true),
            prior_variance: self.prior_variance.unwrap_or(amagold::energy::LogisticRegression::DEFAULT_PRIOR_VARIANCE),
            minibatch: self.minibatch,
            gradient_noise: self.gradient_noise.unwrap_or(1.0),
            dist1_variance: self.dist1_variance.unwrap_or(4.0),
            epsilon: self.epsilon.unwrap_or(0.1),
            beta: self.beta.unwrap_or(0.25),
            sigma2: self.sigma2.unwrap_or(1.0),
            inner_steps: self.inner_steps.unwrap_or(10),
            resample,
            rounds: self.rounds.unwrap_or(default_rounds),
            burn_in: self.burn_in.unwrap_or(10_000),
            seed: self.seed.unwrap_or(1),
            sweep: self.sweep.unwrap_or_default(),
            grid_bins: self.grid_bins,
            target_accept: self.target_accept.unwrap_or(0.85),
            tune_window: self.tune_window.unwrap_or(200),
            tune_gain: self.tune_gain.unwrap_or(0.5),
            tune_windows: self.tune_windows,
            walkers: self.walkers.unwrap_or(10_000),
            walker_rounds: self.walker_rounds.unwrap_or(10),
            reference: self.reference,
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Usage(problems))
        }
    }
}

impl ExperimentConfig {
    pub fn sampler_config(&self, step_size: f64) -> SamplerConfig {
        let mut c = SamplerConfig::new(step_size, self.sigma2, self.beta, self.inner_steps).with_resample(self.resample);
        c.minibatch_size = self.minibatch;
        c
    }

    pub fn schedule(&self) -> TunerSchedule {
        TunerSchedule {
            target: self.target_accept,
            window: self.tune_window,
            gain: self.tune_gain,
            windows: self
                .tune_windows
                .unwrap_or(self.burn_in / self.tune_window.max(1)),
            ..TunerSchedule::default()
        }
    }

    /// Every validation problem, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.model == ModelChoice::Logreg {
            match &self.dataset {
                None => p.push("model `logreg` requires `dataset`".to_string()),
                Some(d) if !d.is_file() => p.push(format!("dataset {} does not exist", d.display())),
                _ => {}
            }
        } else if self.dataset.is_some() {
            p.push("`dataset` is only used by model `logreg`".into());
        }
        if !(self.prior_variance > 0.0) {
            p.push("`prior_variance` must be positive".into());
        }
        if self.minibatch == Some(0) {
            p.push("`minibatch` must be positive".into());
        }
        if !(self.gradient_noise >= 0.0 && self.gradient_noise.is_finite()) {
            p.push("`gradient_noise` must be non-negative".into());
        }
        if !(self.dist1_variance > 0.0) {
            p.push("`dist1_variance` must be positive".into());
        }
        let steps: Vec<f64> = if self.experiment == ExperimentKind::Sweep {
            self.sweep.clone()
        } else {
            vec![self.epsilon]
        };
        for eps in &steps {
            if let Err(e) = self.sampler_config(*eps).validate() {
                p.push(format!("epsilon {eps}: {e}"));
            }
        }
        if self.rounds == 0 {
            p.push("`rounds` must be positive".into());
        }
        if self.burn_in >= self.rounds && self.experiment != ExperimentKind::Stationarity {
            p.push(format!("`burn_in` ({}) must be below `rounds` ({})", self.burn_in, self.rounds));
        }
        match self.experiment {
            ExperimentKind::Sweep => {
                if self.sweep.is_empty() {
                    p.push("sweep grid `sweep` must be non-empty".into());
                } else if self.sweep.windows(2).any(|w| !(w[0] < w[1])) {
                    p.push("sweep grid `sweep` must be strictly increasing".into());
                }
            }
            ExperimentKind::Tune => {
                if self.sampler == SamplerChoice::Sghmc {
                    p.push("sampler `sghmc` has no acceptance test to tune against".into());
                }
                let s = self.schedule();
                if let Err(e) = s.validate() {
                    p.push(e.to_string());
                } else if s.rounds() > self.burn_in {
                    p.push(format!(
                        "tuning needs {} rounds but burn-in is {}; adaptation must end within burn-in",
                        s.rounds(),
                        self.burn_in
                    ));
                }
            }
            ExperimentKind::Stationarity => {
                if self.model != ModelChoice::Doublewell {
                    p.push("`stationarity` is available for model `doublewell` only".into());
                }
                if self.sampler.kind() != SamplerKind::Amagold {
                    p.push("`stationarity` checks the AMAGOLD samplers (`amagold` or `amagold-skew`)".into());
                }
                if self.walkers < 2 || self.walker_rounds == 0 {
                    p.push("`walkers` must be at least 2 and `walker_rounds` at least 1".into());
                }
            }
            ExperimentKind::Oracle => {
                if self.model != ModelChoice::Logreg {
                    p.push("`oracle` is available for model `logreg` only".into());
                }
                if !matches!(self.sampler, SamplerChoice::L2mc | SamplerChoice::Hmc) {
                    p.push("`oracle` runs a full-batch sampler (`l2mc` or `hmc`)".into());
                }
            }
            ExperimentKind::Run => {}
        }
        if let Some(r) = &self.reference {
            if !r.is_file() {
                p.push(format!("reference {} does not exist", r.display()));
            }
            if self.model != ModelChoice::Logreg {
                p.push("`reference` is only used by model `logreg`".into());
            }
        }
        if let Some(bins) = &self.grid_bins {
            let dim = if self.model == ModelChoice::Doublewell { 1 } else { 2 };
            if self.model == ModelChoice::Logreg {
                p.push("`grid_bins` is not used by model `logreg`".into());
            } else if bins.len() != dim || bins.iter().any(|b| *b < 2) {
                p.push(format!("`grid_bins` needs {dim} entries of at least 2"));
            }
        }
        p
    }
}

/// Resolves a command line: config file (if any), then flags, then defaults.
pub fn parse_args<I, T>(argv: I) -> Result<(ExperimentConfig, bool), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Clap)?;
    let print = cli.print_config;
    Ok((resolve_cli(&cli)?, print))
}

pub fn resolve_cli(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let base = match &cli.config {
        Some(path) => PartialConfig::from_file(path)?,
        None => PartialConfig::default(),
    };
    base.overlay(cli.as_partial()).resolve()
}

/// Canonical JSON rendering, re-readable as a config file.
pub fn render(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}
