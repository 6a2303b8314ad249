//! Numerical checks of the gradient-error, horizon and convergence behaviour
//! of PerfGD in the population limit.
//!
//! The model here is one-dimensional: `𝒟(θ) = 𝒩(f(θ), σ²)` with `ℓ(z; θ) = θz`.
//! Expectations are evaluated exactly, so the only error sources are the
//! injected noise on `f̂` and the finite-difference slope.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::BoxDomain;
use crate::error::{Error, Result};
use crate::estim::{finite_diff_jacobian_split, History};
use crate::seed::RngSeed;

/// Fewest Monte Carlo repetitions a sweep accepts.
pub const MIN_REPS: usize = 30;

/// Constants of the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConstants {
    /// Bound `F` on `|f′|`.
    pub f_bound: f64,
    /// Bound `M` on `|f″|`.
    pub m_bound: f64,
    /// Upper gradient bound `G`.
    pub g_upper: f64,
    /// Lower gradient bound / stopping threshold `g`.
    pub g_lower: f64,
    pub ell_max: f64,
    pub lipschitz: f64,
    /// Bound `δ` on `|f̂ − f|`.
    pub delta: f64,
    /// Subgaussian scale `τ` of the `f̂` error.
    pub tau: f64,
    /// Failure probability `γ`.
    pub gamma_fail: f64,
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("f_bound", self.f_bound),
            ("m_bound", self.m_bound),
            ("g_upper", self.g_upper),
            ("g_lower", self.g_lower),
            ("ell_max", self.ell_max),
            ("lipschitz", self.lipschitz),
            ("delta", self.delta),
            ("tau", self.tau),
            ("gamma_fail", self.gamma_fail),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.g_lower > self.g_upper {
            return Err(Error::Config("g must not exceed G".into()));
        }
        Ok(())
    }

    /// Step size `√(1/(MG²T) + δ/(MGg))` from the bounded-error analysis,
    /// up to its unstated constant.
    pub fn bounded_error_step_size(&self, t: usize) -> Result<f64> {
        self.validate()?;
        let (m, g_up, g) = (self.m_bound, self.g_upper, self.g_lower);
        Ok((1.0 / (m * g_up * g_up * t as f64) + self.delta / (m * g_up * g)).sqrt())
    }

    /// Step size and horizon prescribed for subgaussian `f̂` errors, up to
    /// their unstated constants. The horizon is rounded up and at least 1.
    pub fn long_horizon_prescription(&self, t: usize) -> Result<(f64, usize)> {
        self.validate()?;
        let (m, g_up, g, tau) = (self.m_bound, self.g_upper, self.g_lower, self.tau);
        let log = (t as f64 / self.gamma_fail).ln();
        if !(log > 0.0) {
            return Err(Error::Config("need T > γ".into()));
        }
        let eta = g.powf(2.0 / 3.0)
            / (m.sqrt()
                * g_up.powf(5.0 / 3.0)
                * tau.powf(1.0 / 3.0)
                * log.powf(1.0 / 6.0)
                * (t as f64).powf(5.0 / 6.0));
        let h = tau.powf(0.4) * log.powf(0.2) / (m.powf(0.4) * g.powf(0.8)) * eta.powf(-0.8);
        Ok((eta, (h.ceil() as usize).max(1)))
    }
}

/// Stopping threshold `g = c·δ^{1/5}`.
pub fn stopping_rule(delta: f64, c: f64) -> Result<f64> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Config(format!("δ must be positive, got {delta}")));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    Ok(c * delta.powf(0.2))
}

/// Mean map `f(θ)` of the one-dimensional model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanMap {
    /// `a0 + a1·θ`.
    Affine { a0: f64, a1: f64 },
    /// `a0 + a1·θ + a2·θ²`.
    Quadratic { a0: f64, a1: f64, a2: f64 },
    /// `√(a1·θ + a0)`.
    Sqrt { a0: f64, a1: f64 },
}

impl MeanMap {
    pub fn value(&self, theta: f64) -> Result<f64> {
        match *self {
            MeanMap::Affine { a0, a1 } => Ok(a0 + a1 * theta),
            MeanMap::Quadratic { a0, a1, a2 } => Ok(a0 + a1 * theta + a2 * theta * theta),
            MeanMap::Sqrt { a0, a1 } => {
                let arg = a1 * theta + a0;
                if arg < 0.0 {
                    return Err(Error::Domain(format!("a1·θ + a0 = {arg} < 0")));
                }
                Ok(arg.sqrt())
            }
        }
    }

    pub fn derivative(&self, theta: f64) -> Result<f64> {
        match *self {
            MeanMap::Affine { a1, .. } => Ok(a1),
            MeanMap::Quadratic { a1, a2, .. } => Ok(a1 + 2.0 * a2 * theta),
            MeanMap::Sqrt { a0, a1 } => {
                let arg = a1 * theta + a0;
                if arg <= 0.0 {
                    return Err(Error::Domain(format!("a1·θ + a0 = {arg} ≤ 0")));
                }
                Ok(a1 / (2.0 * arg.sqrt()))
            }
        }
    }
}

/// `𝒟(θ) = 𝒩(f(θ), σ²)` with loss `ℓ = θz`, evaluated with exact expectations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationModel {
    pub mean: MeanMap,
    pub variance: f64,
}

impl PopulationModel {
    pub fn loss(&self, theta: f64) -> Result<f64> {
        Ok(theta * self.mean.value(theta)?)
    }

    /// `∇𝓛(θ) = f(θ) + θ·f′(θ)`.
    pub fn grad(&self, theta: f64) -> Result<f64> {
        Ok(self.mean.value(theta)? + theta * self.mean.derivative(theta)?)
    }

    /// PerfGD gradient with exact integrals, an estimate `f̂` of `f(θ)` and a
    /// slope estimate `ĵ`:
    /// `f(θ) + 𝔼_{𝒩(f, σ²)}[θz·ĵ(z − f̂)/σ²] = f + θĵ(σ² + f(f − f̂))/σ²`.
    pub fn estimated_grad(&self, theta: f64, f_hat: f64, j_hat: f64) -> Result<f64> {
        let f = self.mean.value(theta)?;
        let s2 = self.variance;
        Ok(f + theta * j_hat * (s2 + f * (f - f_hat)) / s2)
    }
}

/// Measured error or variance per value of a swept quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis_name: String,
    pub axis: Vec<f64>,
    pub values: Vec<f64>,
    /// Monte Carlo standard error of each value.
    pub std_errors: Vec<f64>,
    pub reps: usize,
    /// Least-squares slope of `ln(value)` against `ln(axis)` when every value is positive.
    pub log_log_slope: Option<f64>,
    /// Late-iteration level for convergence curves.
    pub plateau: Option<f64>,
}

impl SweepResult {
    /// Index of the smallest value.
    pub fn argmin(&self) -> Option<usize> {
        self.values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::Config(format!(
            "need at least {MIN_REPS} repetitions, got {reps}"
        )));
    }
    Ok(())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> f64 {
    (2.0 * rng.random::<f64>() - 1.0) * delta
}

/// Unbiased sample variance, shifted by the first value so identical samples
/// give exactly zero.
fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let k = xs[0];
    let s: f64 = xs.iter().map(|x| x - k).sum();
    let s2: f64 = xs.iter().map(|x| (x - k) * (x - k)).sum();
    ((s2 - s * s / n) / (n - 1.0)).max(0.0)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (sample_variance(xs) / n).sqrt())
}

/// Slope of `ln y` on `ln x`; `None` unless every pair is positive.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Mean `|∇̂𝓛 − ∇𝓛|` at a fixed `θ` for each step size in `etas`.
///
/// The previous deployment sits one exact gradient step behind,
/// `θ_prev = θ + η∇𝓛(θ)`. Both `f̂` values carry independent `U(−δ, δ)` errors
/// and the slope is the single-step difference quotient.
pub fn grad_error_sweep_eta(
    model: &PopulationModel,
    theta: f64,
    delta: f64,
    etas: &[f64],
    reps: usize,
    seed: RngSeed,
) -> Result<SweepResult> {
    check_reps(reps)?;
    if !(delta >= 0.0) {
        return Err(Error::Config(format!("δ must be ≥ 0, got {delta}")));
    }
    let truth = model.grad(theta)?;
    let f_t = model.mean.value(theta)?;
    let mut values = Vec::with_capacity(etas.len());
    let mut std_errors = Vec::with_capacity(etas.len());
    let mut errs = vec![0.0; reps];
    for (k, &eta) in etas.iter().enumerate() {
        if !(eta > 0.0) {
            return Err(Error::Config(format!("η must be positive, got {eta}")));
        }
        let theta_prev = theta + eta * truth;
        let f_prev = model.mean.value(theta_prev)?;
        let mut rng = seed.stream(k as u64).rng();
        for e in errs.iter_mut() {
            let fh_t = f_t + uniform(&mut rng, delta);
            let fh_prev = f_prev + uniform(&mut rng, delta);
            let j_hat = (fh_prev - fh_t) / (theta_prev - theta);
            *e = (model.estimated_grad(theta, fh_t, j_hat)? - truth).abs();
        }
        let (m, se) = mean_se(&errs);
        values.push(m);
        std_errors.push(se);
    }
    Ok(SweepResult {
        axis_name: "eta".into(),
        log_log_slope: log_log_slope(etas, &values),
        axis: etas.to_vec(),
        values,
        std_errors,
        reps,
        plateau: None,
    })
}

/// Variance of the split-sample slope estimate for each horizon in `horizons`.
///
/// `f(θ) = a0 + a1·θ` is linear, so the estimate is unbiased and only the
/// `𝒩(0, τ²)` errors on `f̂` matter. The history is monotone with
/// `θ_{t−i} = θ_t + i·spacing`; the current batch is split so that each
/// difference uses its own independent estimate of `f(θ_t)`.
pub fn horizon_variance_sweep(
    a0: f64,
    a1: f64,
    tau: f64,
    horizons: &[usize],
    spacing: f64,
    reps: usize,
    seed: RngSeed,
) -> Result<SweepResult> {
    check_reps(reps)?;
    if !(tau >= 0.0) || spacing == 0.0 || !spacing.is_finite() {
        return Err(Error::Config(
            "need τ ≥ 0 and non-zero finite spacing".into(),
        ));
    }
    let f = |th: f64| a0 + a1 * th;
    let theta_t = 0.0;
    let mut values = Vec::with_capacity(horizons.len());
    let mut std_errors = Vec::with_capacity(horizons.len());
    let mut slopes = vec![0.0; reps];
    for (k, &h) in horizons.iter().enumerate() {
        if h == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut rng = seed.stream(k as u64).rng();
        for s in slopes.iter_mut() {
            let mut hist = History::with_capacity(h);
            // oldest first, so the newest entry is θ_t + spacing
            for i in (1..=h).rev() {
                let th = theta_t + i as f64 * spacing;
                let noise: f64 = rng.sample(StandardNormal);
                hist.push(vec![th], vec![f(th) + tau * noise])?;
            }
            let parts: Vec<Vec<f64>> = (0..h)
                .map(|_| {
                    let noise: f64 = rng.sample(StandardNormal);
                    vec![f(theta_t) + tau * noise]
                })
                .collect();
            let jac = finite_diff_jacobian_split(&hist, &[theta_t], &parts, h, None)?;
            *s = jac.matrix[(0, 0)];
        }
        let n = reps as f64;
        let var = sample_variance(&slopes);
        values.push(var);
        // standard error of a Gaussian sample variance
        std_errors.push(var * (2.0 / (n - 1.0)).sqrt());
    }
    let axis: Vec<f64> = horizons.iter().map(|&h| h as f64).collect();
    Ok(SweepResult {
        axis_name: "horizon".into(),
        log_log_slope: log_log_slope(&axis, &values),
        axis,
        values,
        std_errors,
        reps,
        plateau: None,
    })
}

/// Settings for [`convergence_curve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub theta0: f64,
    pub eta: f64,
    pub iters: usize,
    /// Bound of the `U(−δ, δ)` error injected into every `f̂`.
    pub delta: f64,
    pub reps: usize,
    pub seed: RngSeed,
}

/// Population-limit PerfGD with `H = 1` on `domain`; records
/// `min_{s ≤ t} |∇𝓛(θ_s)|²` averaged over repetitions.
///
/// The first step is a plain RGD step. When two consecutive iterates coincide
/// the previous slope estimate is reused. The plateau is the mean of
/// `|∇𝓛(θ_t)|²` over the last quarter of iterations, averaged over repetitions.
pub fn convergence_curve(
    model: &PopulationModel,
    domain: &BoxDomain,
    cfg: &CurveConfig,
) -> Result<SweepResult> {
    check_reps(cfg.reps)?;
    if domain.dim() != 1 {
        return Err(Error::Dimension {
            context: "convergence_curve domain",
            expected: 1,
            got: domain.dim(),
        });
    }
    if !(cfg.eta > 0.0) || cfg.iters == 0 || !(cfg.delta >= 0.0) {
        return Err(Error::Config("need η > 0, iters ≥ 1 and δ ≥ 0".into()));
    }
    let t_len = cfg.iters + 1;
    let tail_start = t_len - (t_len / 4).max(1);
    let mut min_sum = vec![0.0; t_len];
    let mut min_sq = vec![0.0; t_len];
    let mut plateaus = Vec::with_capacity(cfg.reps);
    for r in 0..cfg.reps {
        let mut rng = cfg.seed.stream(r as u64).rng();
        let mut theta = domain.project(&[cfg.theta0])[0];
        let mut prev: Option<(f64, f64)> = None;
        let mut j_hat = 0.0;
        let mut best = f64::INFINITY;
        let mut tail = 0.0;
        for t in 0..t_len {
            let g_true = model.grad(theta)?;
            let sq = g_true * g_true;
            best = best.min(sq);
            min_sum[t] += best;
            min_sq[t] += best * best;
            if t >= tail_start {
                tail += sq;
            }
            let f_hat = model.mean.value(theta)? + uniform(&mut rng, cfg.delta);
            let step = match prev {
                None => model.mean.value(theta)?,
                Some((th_p, f_p)) => {
                    if th_p != theta {
                        j_hat = (f_p - f_hat) / (th_p - theta);
                    }
                    model.estimated_grad(theta, f_hat, j_hat)?
                }
            };
            prev = Some((theta, f_hat));
            theta = domain.project(&[theta - cfg.eta * step])[0];
        }
        plateaus.push(tail / (t_len - tail_start) as f64);
    }
    let n = cfg.reps as f64;
    let values: Vec<f64> = min_sum.iter().map(|s| s / n).collect();
    let std_errors = values
        .iter()
        .zip(&min_sq)
        .map(|(m, s2)| (((s2 / n - m * m).max(0.0)) * n / (n - 1.0) / n).sqrt())
        .collect();
    let (plateau, _) = mean_se(&plateaus);
    Ok(SweepResult {
        axis_name: "iteration".into(),
        axis: (0..t_len).map(|t| t as f64).collect(),
        values,
        std_errors,
        reps: cfg.reps,
        log_log_slope: None,
        plateau: Some(plateau),
    })
}

/// `n` points spaced evenly in log between `lo` and `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
