//! Training drivers: repeated risk minimization (RRM), repeated gradient
//! descent (RGD) and performative gradient descent (PerfGD).
//!
//! Each driver deploys `θ_t`, draws `n` samples from `𝒟(θ_t)` with the
//! deployment sub-seed `seed.deployment(t)`, records the round and moves on.
//! Deployments `t = 0..=T` are recorded, so a full trial holds `T + 1` rows and
//! `θ_T` is the terminal iterate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::env::{BoxDomain, EnvSpec, Family};
use crate::error::{check_dim, Error, Result};
use crate::estim::{
    estimate_beta, estimate_f, finite_diff_jacobian_masked, finite_diff_jacobian_split,
    group_covariances, History,
};
use crate::grad::{
    batch_loss, grad1, grad2_gaussian, grad2_reinforce, grad_regression, GaussianScore,
    GradEstimate, LossSpec,
};
use crate::linalg::{dot, norm, Cholesky, Matrix};
use crate::seed::RngSeed;
use crate::theory::stopping_rule;

/// Environment, loss and feasible set of one optimization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub env: EnvSpec,
    pub loss: LossSpec,
    pub domain: BoxDomain,
}

impl Problem {
    pub fn new(env: EnvSpec, loss: LossSpec, domain: BoxDomain) -> Result<Self> {
        let p = Self { env, loss, domain };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.loss.validate()?;
        let p = self.env.param_dim();
        check_dim("domain dimension", p, self.domain.dim())?;
        check_dim(
            "loss parameter dimension",
            p,
            self.loss.param_dim(self.env.feature_dim()),
        )?;
        let fits = matches!(
            (self.env.family(), self.loss),
            (
                Family::LinearMeanGaussian
                    | Family::SqrtMeanGaussian
                    | Family::GaussianMixture
                    | Family::Pricing,
                LossSpec::LinearCost | LossSpec::LinearRevenue
            ) | (Family::Classification, LossSpec::RidgeCrossEntropy { .. })
                | (Family::Regression, LossSpec::RidgeSquared { .. })
        );
        if !fits {
            return Err(Error::Spec(format!(
                "loss {:?} does not apply to {:?} samples",
                self.loss,
                self.env.family()
            )));
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        self.domain.dim()
    }
}

/// Which drivers exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Rrm,
    Rgd,
    Perfgd,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Rrm => "rrm",
            Optimizer::Rgd => "rgd",
            Optimizer::Perfgd => "perfgd",
        }
    }
}

/// How PerfGD estimates `∇₂𝓛`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    GaussianClosedForm,
    Reinforce,
    RegressionReparam,
}

/// Which past deployments feed the finite-difference Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    /// The `H` most recent deployments.
    #[default]
    Window,
    /// Every past deployment.
    FullHistory,
}

/// Source of the group covariances used in the Gaussian score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSource {
    /// Taken from the environment description.
    #[default]
    Known,
    /// Estimated from each deployment's batch.
    Sample,
}

/// `g = c·δ^{1/5}` stopping threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaStop {
    pub delta: f64,
    #[serde(default = "one")]
    pub c: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Learning rate `η`.
    pub eta: f64,
    /// Estimation horizon `H`.
    pub horizon: usize,
    /// Number of updates `T`.
    pub max_iters: usize,
    /// Samples per deployment `n`.
    pub samples: usize,
    /// Stop once `‖∇̂𝓛‖ < g`.
    pub grad_threshold: f64,
    /// Raises the threshold to `c·δ^{1/5}` when set.
    pub delta_stop: Option<DeltaStop>,
    pub seed: RngSeed,
    pub estimator: Estimator,
    pub horizon_mode: HorizonMode,
    /// Partition each batch so every finite difference uses an independent `f̂`.
    pub split_dataset: bool,
    /// RGD steps before PerfGD switches on; defaults to `H`.
    pub init_steps: Option<usize>,
    /// Starting point; defaults to the centroid of the domain.
    pub theta0: Option<Vec<f64>>,
    /// Ridge strength when estimating `β` for regression.
    pub beta_ridge: f64,
    pub covariance: CovarianceSource,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            horizon: 4,
            max_iters: 100,
            samples: 500,
            grad_threshold: 0.0,
            delta_stop: None,
            seed: RngSeed(0),
            estimator: Estimator::GaussianClosedForm,
            horizon_mode: HorizonMode::Window,
            split_dataset: false,
            init_steps: None,
            theta0: None,
            beta_ridge: 0.0,
            covariance: CovarianceSource::Known,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad("eta must be positive and finite");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if !(self.grad_threshold >= 0.0) {
            return bad("grad_threshold must be ≥ 0");
        }
        if self.split_dataset && self.samples < self.horizon {
            return bad("split_dataset needs samples ≥ horizon");
        }
        if self.init_steps == Some(0) {
            return bad("init_steps must be at least 1");
        }
        if !(self.beta_ridge >= 0.0) {
            return bad("beta_ridge must be ≥ 0");
        }
        if let Some(ds) = self.delta_stop {
            stopping_rule(ds.delta, ds.c)?;
        }
        Ok(())
    }

    pub fn init_steps(&self) -> usize {
        self.init_steps.unwrap_or(self.horizon)
    }

    /// Effective stopping threshold.
    pub fn threshold(&self) -> Result<f64> {
        match self.delta_stop {
            Some(ds) => Ok(self.grad_threshold.max(stopping_rule(ds.delta, ds.c)?)),
            None => Ok(self.grad_threshold),
        }
    }
}

/// One deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    pub theta: Vec<f64>,
    pub f_hat: Option<Vec<f64>>,
    /// Norm of the gradient estimate the driver computed at `θ_t`
    /// (`∇̂₁𝓛` for RGD and RRM).
    pub grad_norm: f64,
    /// Batch-mean loss at `θ_t`, an estimate of `𝓛(θ_t)`.
    pub loss: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    GradBelowThreshold,
    DegenerateHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub optimizer: Optimizer,
    pub iterations: Vec<IterRecord>,
    pub stop: StopReason,
}

impl TrialRecord {
    /// Last recorded parameters.
    pub fn terminal_theta(&self) -> &[f64] {
        self.iterations.last().map_or(&[], |r| &r.theta)
    }

    pub fn terminal_loss(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn thetas(&self) -> impl Iterator<Item = &[f64]> {
        self.iterations.iter().map(|r| r.theta.as_slice())
    }
}

/// Wall-clock source; [`NoClock`] keeps trial records deterministic.
pub trait Clock {
    /// Seconds since the trial started.
    fn elapsed_secs(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_secs(&self) -> f64 {
        0.0
    }
}

pub fn run_rgd(problem: &Problem, cfg: &OptimConfig) -> Result<TrialRecord> {
    run_trial(Optimizer::Rgd, problem, cfg, &NoClock)
}

pub fn run_rrm(problem: &Problem, cfg: &OptimConfig) -> Result<TrialRecord> {
    run_trial(Optimizer::Rrm, problem, cfg, &NoClock)
}

pub fn run_perfgd(problem: &Problem, cfg: &OptimConfig) -> Result<TrialRecord> {
    run_trial(Optimizer::Perfgd, problem, cfg, &NoClock)
}

/// Runs one trial of `optimizer`.
pub fn run_trial(
    optimizer: Optimizer,
    problem: &Problem,
    cfg: &OptimConfig,
    clock: &dyn Clock,
) -> Result<TrialRecord> {
    problem.validate()?;
    cfg.validate()?;
    if optimizer == Optimizer::Perfgd {
        check_estimator(problem, cfg.estimator)?;
    }
    let threshold = cfg.threshold()?;
    let domain = &problem.domain;
    let mut theta = match &cfg.theta0 {
        Some(t0) => {
            check_dim("theta0", domain.dim(), t0.len())?;
            domain.project(t0)
        }
        None => {
            let c = domain.centroid();
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(
                    "unbounded domain needs an explicit theta0".into(),
                ));
            }
            c
        }
    };

    let mut history = match cfg.horizon_mode {
        HorizonMode::Window => History::with_capacity(cfg.horizon),
        HorizonMode::FullHistory => History::unbounded(),
    };
    let mut iterations = Vec::with_capacity(cfg.max_iters + 1);
    let mut stop = StopReason::MaxIters;

    for t in 0..=cfg.max_iters {
        let batch = problem
            .env
            .sample(&theta, cfg.samples, cfg.seed.deployment(t as u64))?;
        let loss = batch_loss(&batch, &theta, &problem.loss)?;
        let f_hat = statistic(problem, &batch, cfg.beta_ridge);

        let step = match optimizer {
            Optimizer::Rgd => Step::Gradient(GradEstimate::first_order(grad1(
                &batch,
                &theta,
                &problem.loss,
            )?)?),
            Optimizer::Rrm => {
                let g = grad1(&batch, &theta, &problem.loss)?;
                let next = rrm_argmin(problem, &batch, &theta)?;
                Step::Jump {
                    grad_norm: norm(&g),
                    next,
                }
            }
            Optimizer::Perfgd => {
                let f_hat = f_hat.clone()?;
                let step = if t < cfg.init_steps() {
                    Step::Gradient(GradEstimate::first_order(grad1(
                        &batch,
                        &theta,
                        &problem.loss,
                    )?)?)
                } else {
                    match perf_grad(problem, cfg, &batch, &theta, &f_hat, &history) {
                        Ok(g) => Step::Gradient(g),
                        Err(Error::DegenerateHistory) => {
                            Step::Degenerate(norm(&grad1(&batch, &theta, &problem.loss)?))
                        }
                        Err(e) => return Err(e),
                    }
                };
                history.push(theta.clone(), f_hat)?;
                step
            }
        };

        let grad_norm = match &step {
            Step::Gradient(g) => g.norm(),
            Step::Jump { grad_norm, .. } => *grad_norm,
            Step::Degenerate(n) => *n,
        };
        iterations.push(IterRecord {
            t,
            theta: theta.clone(),
            f_hat: f_hat.ok(),
            grad_norm,
            loss,
            elapsed_secs: clock.elapsed_secs(),
        });

        if let Step::Degenerate(_) = step {
            stop = StopReason::DegenerateHistory;
            break;
        }
        if grad_norm < threshold {
            stop = StopReason::GradBelowThreshold;
            break;
        }
        if t == cfg.max_iters {
            break;
        }
        theta = match step {
            Step::Gradient(g) => {
                let raw: Vec<f64> = theta
                    .iter()
                    .zip(&g.total)
                    .map(|(th, gi)| th - cfg.eta * gi)
                    .collect();
                domain.project(&raw)
            }
            Step::Jump { next, .. } => next,
            Step::Degenerate(_) => unreachable!(),
        };
    }

    Ok(TrialRecord {
        optimizer,
        iterations,
        stop,
    })
}

enum Step {
    Gradient(GradEstimate),
    Jump { grad_norm: f64, next: Vec<f64> },
    Degenerate(f64),
}

fn check_estimator(problem: &Problem, est: Estimator) -> Result<()> {
    let regression = problem.env.family() == Family::Regression;
    match (est, regression) {
        (Estimator::RegressionReparam, true)
        | (Estimator::GaussianClosedForm | Estimator::Reinforce, false) => Ok(()),
        _ => Err(Error::Config(format!(
            "estimator {est:?} does not match environment {:?}",
            problem.env.family()
        ))),
    }
}

fn statistic(problem: &Problem, batch: &Batch, beta_ridge: f64) -> Result<Vec<f64>> {
    match problem.env {
        EnvSpec::Regression { .. } => estimate_beta(batch, beta_ridge),
        _ => estimate_f(batch, &problem.env),
    }
}

/// PerfGD gradient at `θ_t` from the current batch and past deployments.
fn perf_grad(
    problem: &Problem,
    cfg: &OptimConfig,
    batch: &Batch,
    theta: &[f64],
    f_hat: &[f64],
    history: &History,
) -> Result<GradEstimate> {
    let horizon = match cfg.horizon_mode {
        HorizonMode::Window => cfg.horizon,
        HorizonMode::FullHistory => history.len(),
    };
    let mask = problem.env.jacobian_mask();
    let jac = if cfg.split_dataset {
        let m = horizon.min(history.len()).max(1);
        let parts = batch
            .split(m)?
            .iter()
            .map(|b| statistic(problem, b, cfg.beta_ridge))
            .collect::<Result<Vec<_>>>()?;
        finite_diff_jacobian_split(history, theta, &parts, horizon, mask.as_deref())?
    } else {
        finite_diff_jacobian_masked(history, theta, f_hat, horizon, mask.as_deref())?
    };

    let loss = &problem.loss;
    match cfg.estimator {
        Estimator::RegressionReparam => grad_regression(batch, theta, loss, &jac.matrix),
        Estimator::GaussianClosedForm | Estimator::Reinforce => {
            let g1 = grad1(batch, theta, loss)?;
            let covs = match cfg.covariance {
                CovarianceSource::Known => problem.env.group_covariances()?,
                CovarianceSource::Sample => group_covariances(batch, problem.env.groups(), f_hat)?,
            };
            let g2 = if cfg.estimator == Estimator::Reinforce {
                let score = GaussianScore::new(&covs)?;
                grad2_reinforce(batch, theta, loss, f_hat, &jac.matrix, &score)?
            } else {
                grad2_gaussian(batch, theta, loss, f_hat, &jac.matrix, &covs)?
            };
            GradEstimate::new(g1, g2)
        }
    }
}

/// Tolerance on the gradient norm for the iterative RRM solver.
pub const RRM_TOL: f64 = 1e-8;
/// Iteration cap for the iterative RRM solver.
pub const RRM_MAX_ITERS: usize = 10_000;

/// Empirical risk minimizer on `batch`, projected onto the domain.
///
/// Linear losses are minimized over the box coordinatewise (a coefficient
/// `≥ 0` sends the coordinate to its lower bound). Squared loss uses the ridge
/// normal equations. Cross-entropy runs damped Newton from `warm`.
pub fn rrm_argmin(problem: &Problem, batch: &Batch, warm: &[f64]) -> Result<Vec<f64>> {
    let domain = &problem.domain;
    let raw = match problem.loss {
        LossSpec::LinearCost | LossSpec::LinearRevenue => {
            // mean loss = s·θᵀz̄, so its coefficient vector is s·z̄ = ∇₁ at any θ
            let coef = grad1(batch, warm, &problem.loss)?;
            let mut out = Vec::with_capacity(coef.len());
            for (i, c) in coef.iter().enumerate() {
                let v = if *c >= 0.0 {
                    domain.lo()[i]
                } else {
                    domain.hi()[i]
                };
                if !v.is_finite() {
                    return Err(Error::Unsupported(format!(
                        "linear risk has no minimizer along unbounded coordinate {i}"
                    )));
                }
                out.push(v);
            }
            out
        }
        LossSpec::RidgeSquared { lambda } => estimate_beta(batch, lambda * batch.len() as f64)?,
        LossSpec::RidgeCrossEntropy { lambda } => logistic_newton(batch, warm, lambda)?,
    };
    Ok(domain.project(&raw))
}

/// Minimizes mean ridge cross-entropy with Newton steps and Armijo backtracking,
/// falling back to the negative gradient when the Newton direction fails.
fn logistic_newton(batch: &Batch, warm: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let loss = LossSpec::RidgeCrossEntropy { lambda };
    let mut theta = warm.to_vec();
    let mut value = batch_loss(batch, &theta, &loss)?;
    for _ in 0..RRM_MAX_ITERS {
        let g = grad1(batch, &theta, &loss)?;
        if norm(&g) <= RRM_TOL {
            return Ok(theta);
        }
        let hess = logistic_hessian(batch, &theta, lambda);
        let mut dir: Vec<f64> = match Cholesky::new(&hess).and_then(|c| c.solve(&g)) {
            Ok(s) => s.iter().map(|v| -v).collect(),
            Err(_) => g.iter().map(|v| -v).collect(),
        };
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let v = batch_loss(batch, &cand, &loss)?;
            if v <= value + 1e-4 * step * slope {
                theta = cand;
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no decrease is representable; accept if already near stationary
            if norm(&g) <= 1e3 * RRM_TOL {
                return Ok(theta);
            }
            return Err(Error::NonConvergence(format!(
                "line search stalled with gradient norm {:e}",
                norm(&g)
            )));
        }
    }
    Err(Error::NonConvergence(format!(
        "cross-entropy risk minimizer not reached in {RRM_MAX_ITERS} iterations"
    )))
}

fn logistic_hessian(batch: &Batch, theta: &[f64], lambda: f64) -> Matrix {
    let p = theta.len();
    let mut h = Matrix::zeros(p, p);
    let mut v = vec![0.0; p];
    v[0] = 1.0;
    for i in 0..batch.len() {
        let x = batch.row(i);
        v[1..].copy_from_slice(x);
        let u = dot(theta, &v);
        let s = 1.0 / (1.0 + (-u).exp());
        let w = s * (1.0 - s);
        for a in 0..p {
            for b in 0..p {
                h[(a, b)] += w * v[a] * v[b];
            }
        }
    }
    let n = batch.len() as f64;
    for a in 0..p {
        for b in 0..p {
            h[(a, b)] /= n;
        }
        h[(a, a)] += lambda;
    }
    h
}
