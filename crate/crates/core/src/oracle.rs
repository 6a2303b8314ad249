//! Ground truth: exact performative losses `𝓛(θ) = 𝔼_{𝒟(θ)}[ℓ(z; θ)]`, their
//! gradients, the analytic optimal and stable points, and a brute-force grid
//! search to cross-check them.
//!
//! Supported pairings are the ones the experiments use: linear cost on the
//! scalar Gaussian families, linear revenue on pricing, ridge cross-entropy on
//! classification and ridge squared loss on regression.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{check_dim, Error, Result};
use crate::grad::LossSpec;
use crate::linalg::dot;
use crate::opt::Problem;

/// Absolute tolerance of the adaptive Gauss–Hermite rule.
pub const QUAD_TOL: f64 = 1e-8;
const QUAD_START: usize = 20;
const QUAD_MAX: usize = 640;

/// Gauss–Hermite nodes and weights for `∫ g(x) e^{−x²} dx`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Config("quadrature needs at least one node".into()));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-14 * (1.0 + z.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence(format!("Hermite root {i} of {n}")));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// `𝔼[g(X)]` for `X ~ 𝒩(mean, sd²)` with a vector-valued `g` of length `dim`,
/// doubling the node count until successive rules agree to [`QUAD_TOL`].
pub fn gaussian_expectation<F>(mean: f64, sd: f64, dim: usize, g: F) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    let rule = |n: usize| -> Result<Vec<f64>> {
        let (x, w) = gauss_hermite(n)?;
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let scale = core::f64::consts::SQRT_2 * sd;
        for (xi, wi) in x.iter().zip(&w) {
            g(mean + scale * xi, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += wi * b;
            }
        }
        let norm = 1.0 / core::f64::consts::PI.sqrt();
        for a in &mut acc {
            *a *= norm;
        }
        Ok(acc)
    };
    let mut n = QUAD_START;
    let mut prev = rule(n)?;
    while n < QUAD_MAX {
        n *= 2;
        let next = rule(n)?;
        let diff = prev
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if diff <= QUAD_TOL {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NonConvergence(format!(
        "Gauss–Hermite rule did not settle within {QUAD_MAX} nodes"
    )))
}

#[inline]
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn linear_sign(problem: &Problem) -> Result<f64> {
    match problem.loss {
        LossSpec::LinearCost => Ok(1.0),
        LossSpec::LinearRevenue => Ok(-1.0),
        _ => Err(Error::Unsupported(format!(
            "closed form for {:?} with {:?}",
            problem.env.family(),
            problem.loss
        ))),
    }
}

/// `d m/dθ` of the pooled feature mean `m(θ)`.
fn pooled_mean_jacobian(env: &EnvSpec, theta: &[f64]) -> Result<crate::linalg::Matrix> {
    let j = env.true_jacobian(theta)?;
    match env {
        EnvSpec::GaussianMixture { components } => {
            let s: f64 = components
                .iter()
                .enumerate()
                .map(|(i, c)| c.weight * j[(i, 0)])
                .sum();
            Ok(crate::linalg::Matrix::diagonal(&[s]))
        }
        _ => Ok(j),
    }
}

struct ClassTerms {
    weights: [f64; 2],
    sds: [f64; 2],
}

fn class_terms(env: &EnvSpec) -> Option<ClassTerms> {
    match env {
        EnvSpec::Classification {
            spam_rate,
            var_legit,
            var_spam,
            ..
        } => Some(ClassTerms {
            weights: [1.0 - spam_rate, *spam_rate],
            sds: [var_legit.sqrt(), var_spam.sqrt()],
        }),
        _ => None,
    }
}

fn regression_consts(problem: &Problem) -> Result<(f64, f64, f64, f64, f64)> {
    match (&problem.env, problem.loss) {
        (
            EnvSpec::Regression {
                mu_x,
                var_x,
                a0,
                a1,
                noise_var,
            },
            LossSpec::RidgeSquared { lambda },
        ) => Ok((mu_x * mu_x + var_x, *a0, *a1, *noise_var, lambda)),
        _ => Err(Error::Unsupported("regression constants".into())),
    }
}

/// Exact performative loss `𝓛(θ)`.
pub fn closed_form_loss(problem: &Problem, theta: &[f64]) -> Result<f64> {
    problem.validate()?;
    check_dim("closed_form_loss θ", problem.param_dim(), theta.len())?;
    let env = &problem.env;
    match env {
        EnvSpec::Regression { .. } => {
            let (c, a0, a1, noise, lambda) = regression_consts(problem)?;
            let th = theta[0];
            let gap = th - (a0 + a1 * th);
            Ok(0.5 * c * gap * gap + 0.5 * noise + 0.5 * lambda * th * th)
        }
        EnvSpec::Classification { .. } => {
            let LossSpec::RidgeCrossEntropy { lambda } = problem.loss else {
                return Err(Error::Unsupported(
                    "classification needs cross-entropy".into(),
                ));
            };
            let terms = class_terms(env).ok_or(Error::Unsupported("classification".into()))?;
            let means = env.true_f(theta)?;
            let mut total = 0.5 * lambda * dot(theta, theta);
            for (y, ((&m, &sd), &w)) in means.iter().zip(&terms.sds).zip(&terms.weights).enumerate()
            {
                let yf = y as f64;
                let e = gaussian_expectation(m, sd, 1, |x, out| {
                    let u = theta[0] + theta[1] * x;
                    out[0] = softplus(u) - yf * u;
                })?;
                total += w * e[0];
            }
            Ok(total)
        }
        _ => {
            let s = linear_sign(problem)?;
            Ok(s * dot(theta, &env.population_mean(theta)?))
        }
    }
}

/// Exact `∇𝓛(θ)`.
pub fn analytic_perf_grad(problem: &Problem, theta: &[f64]) -> Result<Vec<f64>> {
    grad_parts(problem, theta).map(|(g1, g2)| g1.iter().zip(&g2).map(|(a, b)| a + b).collect())
}

/// Exact `∇₁𝓛(θ) = 𝔼_{𝒟(θ)}[∇_θ ℓ(z; θ)]`, the gradient with the distribution frozen.
pub fn analytic_grad1(problem: &Problem, theta: &[f64]) -> Result<Vec<f64>> {
    grad_parts(problem, theta).map(|(g1, _)| g1)
}

fn grad_parts(problem: &Problem, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    problem.validate()?;
    check_dim("analytic gradient θ", problem.param_dim(), theta.len())?;
    let env = &problem.env;
    match env {
        EnvSpec::Regression { .. } => {
            let (c, a0, a1, _, lambda) = regression_consts(problem)?;
            let th = theta[0];
            let gap = th - (a0 + a1 * th);
            Ok((vec![c * gap + lambda * th], vec![-c * gap * a1]))
        }
        EnvSpec::Classification { .. } => {
            let LossSpec::RidgeCrossEntropy { lambda } = problem.loss else {
                return Err(Error::Unsupported(
                    "classification needs cross-entropy".into(),
                ));
            };
            let terms = class_terms(env).ok_or(Error::Unsupported("classification".into()))?;
            let means = env.true_f(theta)?;
            let jac = env.true_jacobian(theta)?;
            let mut g1: Vec<f64> = theta.iter().map(|t| lambda * t).collect();
            let mut g2 = vec![0.0; 2];
            for y in 0..2 {
                let yf = y as f64;
                // (σ(u) − y)·(1, x) and ∂ℓ/∂x = (σ(u) − y)·θ₁
                let e = gaussian_expectation(means[y], terms.sds[y], 3, |x, out| {
                    let r = sigmoid(theta[0] + theta[1] * x) - yf;
                    out[0] = r;
                    out[1] = r * x;
                    out[2] = r * theta[1];
                })?;
                let w = terms.weights[y];
                g1[0] += w * e[0];
                g1[1] += w * e[1];
                for (k, g) in g2.iter_mut().enumerate() {
                    *g += w * e[2] * jac[(y, k)];
                }
            }
            Ok((g1, g2))
        }
        _ => {
            let s = linear_sign(problem)?;
            let m = env.population_mean(theta)?;
            let mj = pooled_mean_jacobian(env, theta)?;
            let g1 = m.iter().map(|v| s * v).collect();
            let g2 = mj.tr_mul_vec(theta)?.iter().map(|v| s * v).collect();
            Ok((g1, g2))
        }
    }
}

/// Optimal and stable points with their performative losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta_opt: Vec<f64>,
    pub theta_stab: Option<Vec<f64>>,
    pub loss_at_opt: f64,
    pub loss_at_stab: Option<f64>,
}

/// Unprojected `(θ_OPT, θ_STAB)` from the closed-form expressions.
pub fn analytic_optima(problem: &Problem) -> Result<(Vec<f64>, Vec<f64>)> {
    problem.validate()?;
    let unsupported = || {
        Err(Error::Unsupported(format!(
            "no closed-form optimum for {:?} with {:?}",
            problem.env.family(),
            problem.loss
        )))
    };
    match (&problem.env, problem.loss) {
        (EnvSpec::LinearMeanGaussian { a0, a1, .. }, LossSpec::LinearCost) => {
            Ok((vec![-a0 / (2.0 * a1)], vec![-a0 / a1]))
        }
        (EnvSpec::SqrtMeanGaussian { a0, a1, .. }, LossSpec::LinearCost) => {
            Ok((vec![-2.0 * a0 / (3.0 * a1)], vec![-a0 / a1]))
        }
        (EnvSpec::GaussianMixture { components }, LossSpec::LinearCost) => {
            // 𝓛(θ) = θ(Bθ + A) with pooled intercept A and slope B
            let a: f64 = components.iter().map(|c| c.weight * c.a0).sum();
            let b: f64 = components.iter().map(|c| c.weight * c.a1).sum();
            Ok((vec![-0.5 * a / b], vec![-a / b]))
        }
        (EnvSpec::Pricing { mu0, epsilon, .. }, LossSpec::LinearRevenue) => Ok((
            mu0.iter().map(|m| m / (2.0 * epsilon)).collect(),
            mu0.iter().map(|m| m / epsilon).collect(),
        )),
        (EnvSpec::Regression { .. }, LossSpec::RidgeSquared { .. }) => {
            let (c, a0, a1, _, lambda) = regression_consts(problem)?;
            let opt = c * a0 / (c * (1.0 - a1) + lambda / (1.0 - a1));
            let stab = c * a0 / (c * (1.0 - a1) + lambda);
            Ok((vec![opt], vec![stab]))
        }
        _ => unsupported(),
    }
}

/// Ground truth projected onto the domain; `None` where no closed form exists
/// (classification).
pub fn analytic_ground_truth(problem: &Problem) -> Result<Option<GroundTruth>> {
    if let EnvSpec::Classification { .. } = problem.env {
        problem.validate()?;
        return Ok(None);
    }
    let (opt, stab) = analytic_optima(problem)?;
    let opt = problem.domain.project(&opt);
    let stab = problem.domain.project(&stab);
    Ok(Some(GroundTruth {
        loss_at_opt: closed_form_loss(problem, &opt)?,
        loss_at_stab: Some(closed_form_loss(problem, &stab)?),
        theta_opt: opt,
        theta_stab: Some(stab),
    }))
}

fn axis(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Unsupported(
            "grid search over an unbounded domain".into(),
        ));
    }
    let n = ((hi - lo) / step).round() as usize;
    Ok((0..=n).map(|i| (lo + i as f64 * step).min(hi)).collect())
}

/// Brute-force minimizer of [`closed_form_loss`] on a grid of spacing `step`
/// over the domain.
///
/// Dense product grid for `p ≤ 2`; cyclic coordinate descent over per-axis
/// grids otherwise. Ties go to the first grid point in index order.
pub fn grid_search_opt(problem: &Problem, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("grid step {step} must be positive")));
    }
    let dom = &problem.domain;
    let axes = (0..dom.dim())
        .map(|i| axis(dom.lo()[i], dom.hi()[i], step))
        .collect::<Result<Vec<_>>>()?;
    match axes.len() {
        1 => {
            let mut best = (f64::INFINITY, axes[0][0]);
            for &x in &axes[0] {
                let v = closed_form_loss(problem, &[x])?;
                if v < best.0 {
                    best = (v, x);
                }
            }
            Ok(vec![best.1])
        }
        2 => {
            let mut best = (f64::INFINITY, [axes[0][0], axes[1][0]]);
            for &x in &axes[0] {
                for &y in &axes[1] {
                    let v = closed_form_loss(problem, &[x, y])?;
                    if v < best.0 {
                        best = (v, [x, y]);
                    }
                }
            }
            Ok(best.1.to_vec())
        }
        _ => {
            let mut cur: Vec<f64> = axes.iter().map(|a| a[a.len() / 2]).collect();
            let mut value = closed_form_loss(problem, &cur)?;
            for _ in 0..1000 {
                let mut moved = false;
                for (i, ax) in axes.iter().enumerate() {
                    let mut best = (f64::INFINITY, cur[i]);
                    let mut trial = cur.clone();
                    for &x in ax {
                        trial[i] = x;
                        let v = closed_form_loss(problem, &trial)?;
                        if v < best.0 {
                            best = (v, x);
                        }
                    }
                    if best.0 < value {
                        value = best.0;
                        cur[i] = best.1;
                        moved = true;
                    }
                }
                if !moved {
                    return Ok(cur);
                }
            }
            Err(Error::NonConvergence("grid coordinate descent".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BoxDomain, PRICING_MU0};
    use approx::assert_relative_eq;

    fn toy() -> Problem {
        Problem::new(
            EnvSpec::LinearMeanGaussian {
                a0: 1.0,
                a1: 1.0,
                variance: 0.1,
            },
            LossSpec::LinearCost,
            BoxDomain::cube(1, -1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn regression() -> Problem {
        Problem::new(
            EnvSpec::Regression {
                mu_x: 1.67,
                var_x: 1.0,
                a0: 1.67,
                a1: 1.67,
                noise_var: 4.12,
            },
            LossSpec::RidgeSquared { lambda: 3.33 },
            BoxDomain::cube(1, -10.0, 10.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hermite_rule_moments() {
        let e = gaussian_expectation(0.0, 1.0, 3, |x, o| {
            o[0] = x * x;
            o[1] = x.powi(4);
            o[2] = x.exp();
        })
        .unwrap();
        assert_relative_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e[1], 3.0, epsilon = 1e-11);
        assert_relative_eq!(e[2], 0.5f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn toy_loss_and_gradient() {
        let p = toy();
        assert_relative_eq!(
            closed_form_loss(&p, &[-0.25]).unwrap(),
            -0.1875,
            epsilon = 1e-15
        );
        assert_relative_eq!(analytic_perf_grad(&p, &[-0.5]).unwrap()[0], 0.0);
        assert_relative_eq!(analytic_perf_grad(&p, &[0.0]).unwrap()[0], 1.0);
    }

    #[test]
    fn pricing_loss_at_optimum() {
        let p = Problem::new(
            EnvSpec::pricing(PRICING_MU0.to_vec(), 1.5),
            LossSpec::LinearRevenue,
            BoxDomain::cube(5, 0.0, 5.0).unwrap(),
        )
        .unwrap();
        let opt: Vec<f64> = PRICING_MU0.iter().map(|m| m / 3.0).collect();
        let want = -dot(&PRICING_MU0, &PRICING_MU0) / 6.0;
        assert_relative_eq!(closed_form_loss(&p, &opt).unwrap(), want, epsilon = 1e-12);

        let stab: Vec<f64> = PRICING_MU0.iter().map(|m| m / 1.5).collect();
        let g1 = analytic_grad1(&p, &stab).unwrap();
        let g = analytic_perf_grad(&p, &stab).unwrap();
        for i in 0..5 {
            assert!(g1[i].abs() < 1e-12);
            assert_relative_eq!(g[i], 1.5 * stab[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn regression_optima() {
        let p = regression();
        let (opt, stab) = analytic_optima(&p).unwrap();
        assert!((opt[0] + 0.843).abs() < 1e-3);
        assert!((stab[0] - 7.995).abs() < 1e-3);
        assert!(analytic_perf_grad(&p, &opt).unwrap()[0].abs() < 1e-12);
        assert!(analytic_grad1(&p, &stab).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn sqrt_optima() {
        let p = Problem::new(
            EnvSpec::SqrtMeanGaussian {
                a0: 1.0,
                a1: 1.0,
                variance: 1.0,
            },
            LossSpec::LinearCost,
            BoxDomain::cube(1, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let gt = analytic_ground_truth(&p).unwrap().unwrap();
        assert_relative_eq!(gt.theta_opt[0], -2.0 / 3.0);
        assert_eq!(gt.theta_stab.unwrap()[0], -1.0);
    }

    #[test]
    fn grid_matches_toy_optimum() {
        let g = grid_search_opt(&toy(), 1e-3).unwrap();
        assert!((g[0] + 0.5).abs() <= 1e-3);
    }

    #[test]
    fn grid_ties_pick_first_point() {
        // a0 = a1 = 0: 𝓛 ≡ 0
        let p = Problem::new(
            EnvSpec::LinearMeanGaussian {
                a0: 0.0,
                a1: 0.0,
                variance: 1.0,
            },
            LossSpec::LinearCost,
            BoxDomain::cube(1, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(grid_search_opt(&p, 0.1).unwrap(), vec![-1.0]);
    }

    #[test]
    fn classification_has_no_closed_form_optimum() {
        let p = Problem::new(
            EnvSpec::Classification {
                spam_rate: 0.5,
                mu_legit: 1.0,
                var_legit: 0.25,
                mu_spam: -1.0,
                var_spam: 0.25,
                epsilon: 3.0,
            },
            LossSpec::RidgeCrossEntropy { lambda: 1e-2 },
            BoxDomain::cube(2, -10.0, 10.0).unwrap(),
        )
        .unwrap();
        assert_eq!(analytic_ground_truth(&p).unwrap(), None);
        // at θ = 0 every prediction is ½
        assert_relative_eq!(
            closed_form_loss(&p, &[0.0, 0.0]).unwrap(),
            core::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }
}
