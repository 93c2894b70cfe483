use std::process::ExitCode;

use amagold_cli::config::{parse_args, render};
use amagold_cli::{run_experiment, CliError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (config, print) = match parse_args(std::env::args_os()) {
        Ok(parsed) => parsed,
        Err(CliError::Clap(e)) => e.exit(),
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if print {
        println!("{}", render(&config));
        return ExitCode::SUCCESS;
    }
    match run_experiment(&config) {
        Ok(report) => {
            let metrics: Vec<String> = report.metrics.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
            println!(
                "{} {} acceptance={:.4} {}",
                report.experiment,
                report.sampler,
                report.acceptance_rate,
                metrics.join(" ")
            );
            println!("report: {}", config.out.join("report.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
