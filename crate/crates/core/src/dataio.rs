//! Dataset parsing and persistence of samples and run reports.
//!
//! Datasets are plain text, one example per line: a label (`+1/-1` or `1/0`)
//! followed by either dense whitespace-separated features or sparse
//! `index:value` pairs (1-based indices, as in LIBSVM files). Lines starting
//! with `#` and blank lines are skipped.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::energy::Dataset;
use crate::samplers::SampleSet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub standardize: bool,
    pub intercept: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedDataset {
    pub data: Dataset,
    /// Column means and scales used for standardization (identity otherwise),
    /// excluding the intercept.
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Columns with zero spread whose scale was floored at 1.
    pub constant_columns: Vec<usize>,
}

pub fn load_dataset(path: &Path, options: LoadOptions) -> Result<LoadedDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, options)
}

enum Row {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, f64)>),
}

fn parse_label(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid label {token:?}"),
    })?;
    match v {
        v if v == 1.0 => Ok(1.0),
        v if v == -1.0 || v == 0.0 => Ok(-1.0),
        _ => Err(Error::Parse {
            line,
            message: format!("label must be +1/-1 or 1/0, got {token}"),
        }),
    }
}

fn parse_value(token: &str, line: usize) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            message: format!("invalid feature value {token:?}"),
        }),
    }
}

pub fn parse_dataset(text: &str, options: LoadOptions) -> Result<LoadedDataset> {
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_label(tokens.next().expect("non-empty line"), line)?;
        let rest: Vec<&str> = tokens.collect();
        let row = if rest.iter().any(|t| t.contains(':')) {
            let mut pairs = Vec::with_capacity(rest.len());
            for t in rest {
                let (idx, val) = t.split_once(':').ok_or_else(|| Error::Parse {
                    line,
                    message: format!("mixed dense and sparse tokens near {t:?}"),
                })?;
                let idx: usize = idx.parse().ok().filter(|k| *k >= 1).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("invalid feature index {idx:?}"),
                })?;
                pairs.push((idx - 1, parse_value(val, line)?));
            }
            Row::Sparse(pairs)
        } else {
            if let Some(w) = width {
                if w != rest.len() {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {w} features, found {}", rest.len()),
                    });
                }
            }
            width = Some(rest.len());
            Row::Dense(rest.iter().map(|t| parse_value(t, line)).collect::<Result<_>>()?)
        };
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "dataset has no examples".into(),
        });
    }
    let p = rows
        .iter()
        .map(|r| match r {
            Row::Dense(v) => v.len(),
            Row::Sparse(v) => v.iter().map(|(k, _)| k + 1).max().unwrap_or(0),
        })
        .max()
        .unwrap_or(0);
    let mut features: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|r| match r {
            Row::Dense(v) => {
                let mut v = v;
                v.resize(p, 0.0);
                v
            }
            Row::Sparse(pairs) => {
                let mut v = vec![0.0; p];
                for (k, x) in pairs {
                    v[k] = x;
                }
                v
            }
        })
        .collect();

    let n = features.len();
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    let mut constant_columns = Vec::new();
    if options.standardize {
        if n < 2 {
            return Err(Error::Parse {
                line: 0,
                message: "standardization needs at least two examples".into(),
            });
        }
        for j in 0..p {
            let mean = features.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            means[j] = mean;
            scales[j] = if sd > 0.0 {
                sd
            } else {
                constant_columns.push(j);
                1.0
            };
        }
        for r in &mut features {
            for j in 0..p {
                r[j] = (r[j] - means[j]) / scales[j];
            }
        }
    }
    if options.intercept {
        features.iter_mut().for_each(|r| r.push(1.0));
    }
    Ok(LoadedDataset {
        data: Dataset::new(features, labels)?,
        means,
        scales,
        constant_columns,
    })
}

/// Writes retained samples as `round,theta_0,...` with round indices counted
/// from the start of the chain.
pub fn write_samples(samples: &SampleSet, path: &Path) -> Result<()> {
    write_rows(&samples.samples, samples.burn_in, samples.dim, path)
}

pub fn write_rows(rows: &[Vec<f64>], first_round: usize, dim: usize, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        let header: Vec<String> = (0..dim).map(|i| format!("theta_{i}")).collect();
        writeln!(w, "round,{}", header.join(","))?;
        for (k, row) in rows.iter().enumerate() {
            write!(w, "{}", first_round + k)?;
            for v in row {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a sample CSV back as `(round indices, rows)`.
pub fn read_samples(path: &Path) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let width = header.split(',').count();
    if !header.starts_with("round") {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with `round`".into(),
        });
    }
    let mut rounds = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        rounds.push(fields[0].parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("invalid round index {:?}", fields[0]),
        })?);
        rows.push(
            fields[1..]
                .iter()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("invalid value {t:?}"),
                    })
                })
                .collect::<Result<_>>()?,
        );
    }
    Ok((rounds, rows))
}

/// Summary of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub sampler: String,
    pub seed: u64,
    /// Fully resolved configuration.
    pub config: Value,
    pub rounds: usize,
    pub burn_in: usize,
    pub accepted: u64,
    pub rejected: u64,
    pub out_of_domain: u64,
    pub numerical_failures: u64,
    pub acceptance_rate: f64,
    pub wall_clock_seconds: f64,
    /// Experiment-specific scalar results (KL, MSE, KS statistic, tuned step).
    pub metrics: BTreeMap<String, f64>,
    /// Artifact files keyed by role.
    pub outputs: BTreeMap<String, PathBuf>,
    /// False when the run stopped early; `error` then holds the reason.
    pub complete: bool,
    pub error: Option<String>,
}

pub fn write_run_report(report: &RunReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_run_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
