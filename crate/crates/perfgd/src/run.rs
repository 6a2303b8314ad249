//! Multi-trial execution and aggregation.

use perfgd_core::opt::{run_trial, Clock, OptimConfig, Optimizer, Problem, TrialRecord};
use perfgd_core::oracle::{analytic_ground_truth, closed_form_loss, GroundTruth};
use perfgd_core::RngSeed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PERFGD_THREADS";

/// Seconds since construction.
struct WallClock(std::time::Instant);

impl Clock for WallClock {
    fn elapsed_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// One trial of one driver; `record` is absent when the trial aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub record: Option<TrialRecord>,
    pub error: Option<String>,
    /// Exact `𝓛(θ_t)` per recorded iteration.
    pub oracle_loss: Option<Vec<f64>>,
}

/// Across-trial statistics at one iteration. Standard errors use the
/// `(k − 1)` denominator and are absent when fewer than two trials reached
/// the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iter: usize,
    pub trials: usize,
    pub theta_mean: Vec<f64>,
    pub theta_sem: Option<Vec<f64>>,
    pub loss_mean: f64,
    pub loss_sem: Option<f64>,
    pub gradnorm_mean: f64,
    pub gradnorm_sem: Option<f64>,
    pub oracle_loss_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub optimizer: Optimizer,
    pub trials: Vec<TrialOutcome>,
    pub aggregate: Vec<AggregateRow>,
}

impl OptimizerResult {
    pub fn terminal(&self) -> Option<&AggregateRow> {
        self.aggregate.last()
    }

    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter_map(|t| t.record.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub experiment: String,
    pub config_hash: String,
    pub ground_truth: Option<GroundTruth>,
    pub optimizers: Vec<OptimizerResult>,
}

impl AggregateResult {
    pub fn get(&self, opt: Optimizer) -> Option<&OptimizerResult> {
        self.optimizers.iter().find(|o| o.optimizer == opt)
    }
}

/// Mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| BenchError::Config(format!("{THREADS_ENV}={v} is not a count")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| BenchError::Runtime(format!("thread pool: {e}")))
}

/// Runs every configured driver for `cfg.trials` trials with seeds
/// `base_seed + trial` and aggregates in trial order.
///
/// A trial that aborts is kept with its error; the experiment fails only when
/// every trial of every driver aborts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateResult> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let ground_truth = analytic_ground_truth(&problem)?;
    let pool = thread_pool()?;

    let mut optimizers = Vec::with_capacity(cfg.optimizers.len());
    for &opt in &cfg.optimizers {
        let trials: Vec<TrialOutcome> = pool.install(|| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|i| run_one(opt, &problem, &cfg.optim, cfg.base_seed, i))
                .collect()
        });
        let aggregate = aggregate(&trials, problem.param_dim());
        optimizers.push(OptimizerResult {
            optimizer: opt,
            trials,
            aggregate,
        });
    }
    if optimizers
        .iter()
        .all(|o| o.trials.iter().all(|t| t.record.is_none()))
    {
        let first = optimizers
            .iter()
            .flat_map(|o| &o.trials)
            .find_map(|t| t.error.clone())
            .unwrap_or_default();
        return Err(BenchError::Runtime(format!(
            "every trial aborted; first error: {first}"
        )));
    }
    Ok(AggregateResult {
        experiment: cfg.name.clone(),
        config_hash: cfg.hash(),
        ground_truth,
        optimizers,
    })
}

fn run_one(
    opt: Optimizer,
    problem: &Problem,
    base: &OptimConfig,
    base_seed: u64,
    trial: usize,
) -> TrialOutcome {
    let seed = base_seed.wrapping_add(trial as u64);
    let cfg = OptimConfig {
        seed: RngSeed(seed),
        ..base.clone()
    };
    let clock = WallClock(std::time::Instant::now());
    let outcome = run_trial(opt, problem, &cfg, &clock).and_then(|rec| {
        let oracle = rec
            .iterations
            .iter()
            .map(|r| closed_form_loss(problem, &r.theta))
            .collect::<perfgd_core::Result<Vec<_>>>()?;
        Ok((rec, Some(oracle)))
    });
    match outcome {
        Ok((rec, oracle)) => TrialOutcome {
            trial,
            seed,
            record: Some(rec),
            error: None,
            oracle_loss: oracle,
        },
        Err(e) => TrialOutcome {
            trial,
            seed,
            record: None,
            error: Some(e.to_string()),
            oracle_loss: None,
        },
    }
}

/// Per-iteration statistics over the trials that reached each iteration.
pub fn aggregate(trials: &[TrialOutcome], p: usize) -> Vec<AggregateRow> {
    let longest = trials
        .iter()
        .filter_map(|t| t.record.as_ref().map(|r| r.iterations.len()))
        .max()
        .unwrap_or(0);
    let mut rows = Vec::with_capacity(longest);
    for it in 0..longest {
        let present: Vec<(&TrialOutcome, &perfgd_core::opt::IterRecord)> = trials
            .iter()
            .filter_map(|t| {
                t.record
                    .as_ref()
                    .and_then(|r| r.iterations.get(it))
                    .map(|rec| (t, rec))
            })
            .collect();
        let col = |f: &dyn Fn(&perfgd_core::opt::IterRecord) -> f64| -> Vec<f64> {
            present.iter().map(|(_, r)| f(r)).collect()
        };
        let mut theta_mean = Vec::with_capacity(p);
        let mut theta_sem = Vec::with_capacity(p);
        for j in 0..p {
            let (m, s) = mean_sem(&col(&|r| r.theta[j]));
            theta_mean.push(m);
            theta_sem.push(s);
        }
        let (loss_mean, loss_sem) = mean_sem(&col(&|r| r.loss));
        let (gradnorm_mean, gradnorm_sem) = mean_sem(&col(&|r| r.grad_norm));
        let oracle: Option<Vec<f64>> = present
            .iter()
            .map(|(t, _)| t.oracle_loss.as_ref().map(|o| o[it]))
            .collect();
        rows.push(AggregateRow {
            iter: it,
            trials: present.len(),
            theta_mean,
            theta_sem: theta_sem.into_iter().collect(),
            loss_mean,
            loss_sem,
            gradnorm_mean,
            gradnorm_sem,
            oracle_loss_mean: oracle.map(|o| mean_sem(&o).0),
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_has_no_sem() {
        assert_eq!(mean_sem(&[2.5]), (2.5, None));
        let (m, s) = mean_sem(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s.unwrap() - 1.0).abs() < 1e-15);
    }
}
