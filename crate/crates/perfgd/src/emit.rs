//! CSV, JSON and sidecar output.
//!
//! Both formats hold one row per trial per iteration followed by the
//! aggregate rows. Per-trial rows put the trial's own value in the `*_mean`
//! columns and leave the `*_sem` columns empty. Floats are written in their
//! shortest round-trip form, so repeated runs give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use perfgd_core::opt::{Optimizer, StopReason};
use perfgd_core::oracle::GroundTruth;
use perfgd_core::theory::SweepResult;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Format};
use crate::error::{BenchError, Result};
use crate::run::{AggregateResult, AggregateRow};

fn opt_f(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn param_dim(result: &AggregateResult) -> usize {
    result
        .optimizers
        .iter()
        .flat_map(|o| o.aggregate.first())
        .map(|r| r.theta_mean.len())
        .next()
        .unwrap_or(0)
}

pub fn csv_header(p: usize) -> String {
    let mut h = String::from("experiment,optimizer,trial,iter");
    for j in 0..p {
        let _ = write!(h, ",theta_{j}");
    }
    h.push_str(",loss_mean,loss_sem,gradnorm_mean,gradnorm_sem");
    h
}

pub fn to_csv(result: &AggregateResult) -> String {
    let p = param_dim(result);
    let mut out = csv_header(p);
    out.push('\n');
    let name = &result.experiment;
    for block in &result.optimizers {
        let opt = block.optimizer.name();
        for t in &block.trials {
            let Some(rec) = &t.record else { continue };
            for r in &rec.iterations {
                let _ = write!(out, "{name},{opt},{},{}", t.trial, r.t);
                for v in &r.theta {
                    let _ = write!(out, ",{v}");
                }
                let _ = writeln!(out, ",{},,{},", r.loss, r.grad_norm);
            }
        }
        for a in &block.aggregate {
            let _ = write!(out, "{name},{opt},agg,{}", a.iter);
            for v in &a.theta_mean {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                a.loss_mean,
                opt_f(a.loss_sem),
                a.gradnorm_mean,
                opt_f(a.gradnorm_sem)
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonTrialRow {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub loss: f64,
    pub gradnorm: f64,
    pub oracle_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonTrial {
    pub trial: usize,
    pub seed: u64,
    pub stop: Option<StopReason>,
    pub error: Option<String>,
    pub rows: Vec<JsonTrialRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonBlock {
    pub optimizer: Optimizer,
    pub trials: Vec<JsonTrial>,
    pub aggregate: Vec<AggregateRow>,
}

/// JSON form of a result. Wall-clock times are left out so the document is
/// as reproducible as the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonDoc {
    pub experiment: String,
    pub config_hash: String,
    pub optimizers: Vec<JsonBlock>,
}

impl JsonDoc {
    pub fn from_result(result: &AggregateResult) -> Self {
        let optimizers = result
            .optimizers
            .iter()
            .map(|b| JsonBlock {
                optimizer: b.optimizer,
                trials: b
                    .trials
                    .iter()
                    .map(|t| JsonTrial {
                        trial: t.trial,
                        seed: t.seed,
                        stop: t.record.as_ref().map(|r| r.stop),
                        error: t.error.clone(),
                        rows: t
                            .record
                            .iter()
                            .flat_map(|r| r.iterations.iter().enumerate())
                            .map(|(i, r)| JsonTrialRow {
                                iter: r.t,
                                theta: r.theta.clone(),
                                loss: r.loss,
                                gradnorm: r.grad_norm,
                                oracle_loss: t.oracle_loss.as_ref().map(|o| o[i]),
                            })
                            .collect(),
                    })
                    .collect(),
                aggregate: b.aggregate.clone(),
            })
            .collect();
        JsonDoc {
            experiment: result.experiment.clone(),
            config_hash: result.config_hash.clone(),
            optimizers,
        }
    }
}

pub fn to_json(result: &AggregateResult) -> String {
    serde_json::to_string_pretty(&JsonDoc::from_result(result)).expect("result serializes")
}

pub fn parse_json(text: &str) -> Result<JsonDoc> {
    serde_json::from_str(text).map_err(|e| BenchError::Runtime(format!("results JSON: {e}")))
}

/// Sidecar contents: ground truth, config hash and the full config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub experiment: String,
    pub config_hash: String,
    pub ground_truth: Option<GroundTruth>,
    pub config: ExperimentConfig,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

/// Writes `<dir>/<name>.{csv,json}` and `<dir>/<name>.meta.json`, returning
/// both paths.
pub fn emit(
    result: &AggregateResult,
    cfg: &ExperimentConfig,
    dir: &Path,
    format: Format,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let (ext, body) = match format {
        Format::Csv => ("csv", to_csv(result)),
        Format::Json => ("json", to_json(result)),
    };
    let data = dir.join(format!("{}.{ext}", result.experiment));
    write(&data, &body)?;
    let meta = Meta {
        experiment: result.experiment.clone(),
        config_hash: result.config_hash.clone(),
        ground_truth: result.ground_truth.clone(),
        config: cfg.clone(),
    };
    let meta_path = dir.join(format!("{}.meta.json", result.experiment));
    write(
        &meta_path,
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    Ok((data, meta_path))
}

pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut out = format!("{},value,std_error\n", sweep.axis_name);
    for ((a, v), s) in sweep.axis.iter().zip(&sweep.values).zip(&sweep.std_errors) {
        let _ = writeln!(out, "{a},{v},{s}");
    }
    out
}
