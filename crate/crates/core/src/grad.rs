//! Losses and estimators for the two parts of the performative gradient
//! `∇𝓛 = ∇₁𝓛 + ∇₂𝓛`.
//!
//! `∇₁𝓛` is the plain sample average of `∇_θ ℓ`. `∇₂𝓛` accounts for the shift in
//! the distribution: with an estimated statistic `f̂` and Jacobian `J ≈ df/dθ`
//! it averages `ℓ(z; θ) · Jᵀ ∂_w log p(z; f̂)` over the batch. For Gaussian
//! groups the score is `Σ⁻¹ (z − f̂)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, Point};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};

/// Pointwise loss `ℓ(z; θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// `ℓ = θᵀz`.
    LinearCost,
    /// `ℓ = −θᵀz` (negated revenue).
    LinearRevenue,
    /// Logistic cross-entropy with bias, `θ = (θ₀, w)`, `h = σ(θ₀ + wᵀx)`,
    /// plus `(λ/2)‖θ‖²`.
    RidgeCrossEntropy { lambda: f64 },
    /// `½(θᵀx − y)² + (λ/2)‖θ‖²`.
    RidgeSquared { lambda: f64 },
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

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::RidgeCrossEntropy { lambda } | LossSpec::RidgeSquared { lambda }
                if !(*lambda >= 0.0) || !lambda.is_finite() =>
            {
                Err(Error::Spec(format!("ridge strength {lambda} must be ≥ 0")))
            }
            _ => Ok(()),
        }
    }

    /// Parameter dimension matching a `d`-dimensional feature row.
    pub fn param_dim(&self, feature_dim: usize) -> usize {
        match self {
            LossSpec::RidgeCrossEntropy { .. } => feature_dim + 1,
            _ => feature_dim,
        }
    }

    fn ridge(&self) -> f64 {
        match self {
            LossSpec::RidgeCrossEntropy { lambda } | LossSpec::RidgeSquared { lambda } => *lambda,
            _ => 0.0,
        }
    }

    fn check(&self, point: &Point<'_>, theta: &[f64]) -> Result<()> {
        check_dim("loss θ", self.param_dim(point.features.len()), theta.len())?;
        match self {
            LossSpec::RidgeCrossEntropy { .. } if point.label.is_none() => Err(Error::Spec(
                "cross-entropy loss needs labelled samples".into(),
            )),
            LossSpec::RidgeSquared { .. } if point.response.is_none() => Err(Error::Spec(
                "squared loss needs samples with responses".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Linear predictor `θ₀ + wᵀx` for the logistic model.
    fn logit(theta: &[f64], x: &[f64]) -> f64 {
        theta[0] + dot(&theta[1..], x)
    }

    pub fn value(&self, point: &Point<'_>, theta: &[f64]) -> Result<f64> {
        self.check(point, theta)?;
        let z = point.features;
        let ridge = 0.5 * self.ridge() * dot(theta, theta);
        Ok(match self {
            LossSpec::LinearCost => dot(theta, z),
            LossSpec::LinearRevenue => -dot(theta, z),
            LossSpec::RidgeCrossEntropy { .. } => {
                let u = Self::logit(theta, z);
                let y = f64::from(point.label.unwrap_or(0));
                softplus(u) - y * u + ridge
            }
            LossSpec::RidgeSquared { .. } => {
                let r = dot(theta, z) - point.response.unwrap_or(0.0);
                0.5 * r * r + ridge
            }
        })
    }

    /// Writes `∇_θ ℓ(z; θ)` into `out`.
    pub fn grad_theta(&self, point: &Point<'_>, theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(point, theta)?;
        check_dim("loss gradient buffer", theta.len(), out.len())?;
        let z = point.features;
        match self {
            LossSpec::LinearCost => out.copy_from_slice(z),
            LossSpec::LinearRevenue => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o = -v;
                }
            }
            LossSpec::RidgeCrossEntropy { lambda } => {
                let y = f64::from(point.label.unwrap_or(0));
                let resid = sigmoid(Self::logit(theta, z)) - y;
                out[0] = resid + lambda * theta[0];
                for ((o, x), t) in out[1..].iter_mut().zip(z).zip(&theta[1..]) {
                    *o = resid * x + lambda * t;
                }
            }
            LossSpec::RidgeSquared { lambda } => {
                let r = dot(theta, z) - point.response.unwrap_or(0.0);
                for ((o, x), t) in out.iter_mut().zip(z).zip(theta) {
                    *o = r * x + lambda * t;
                }
            }
        }
        Ok(())
    }

    /// `∂ℓ/∂y`, defined for the squared loss only.
    pub fn dl_dy(&self, point: &Point<'_>, theta: &[f64]) -> Result<f64> {
        self.check(point, theta)?;
        match self {
            LossSpec::RidgeSquared { .. } => {
                Ok(-(dot(theta, point.features) - point.response.unwrap_or(0.0)))
            }
            _ => Err(Error::Unsupported(
                "∂ℓ/∂y for a loss without a response".into(),
            )),
        }
    }
}

/// Pointwise loss; free-function form of [`LossSpec::value`].
pub fn loss_value(loss: &LossSpec, point: &Point<'_>, theta: &[f64]) -> Result<f64> {
    loss.value(point, theta)
}

/// Mean loss over the batch, an estimate of `𝓛(θ)` when the batch came from `𝒟(θ)`.
pub fn batch_loss(batch: &Batch, theta: &[f64], loss: &LossSpec) -> Result<f64> {
    let mut total = 0.0;
    for pt in batch.points() {
        total += loss.value(&pt, theta)?;
    }
    Ok(total / batch.len() as f64)
}

/// `∇̂₁𝓛 = (1/n) Σ ∇_θ ℓ(zᵢ; θ)`.
pub fn grad1(batch: &Batch, theta: &[f64], loss: &LossSpec) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    for pt in batch.points() {
        loss.grad_theta(&pt, theta, &mut g)?;
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += v;
        }
    }
    let n = batch.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// `∂_w log p(z; w)` for the distribution family of each sample group.
pub trait ScoreFunction {
    /// Writes the score of `z` at parameter `w` for group `group` into `out`.
    fn score(&self, group: usize, z: &[f64], w: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Score of a Gaussian with known covariance: `Σ⁻¹ (z − w)`.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    factors: Vec<Cholesky>,
}

impl GaussianScore {
    pub fn new(covariances: &[Matrix]) -> Result<Self> {
        let factors = covariances
            .iter()
            .map(Cholesky::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { factors })
    }
}

impl ScoreFunction for GaussianScore {
    fn score(&self, group: usize, z: &[f64], w: &[f64], out: &mut [f64]) -> Result<()> {
        let chol = self
            .factors
            .get(group)
            .ok_or_else(|| Error::Estimation(format!("no covariance for group {group}")))?;
        for ((o, zi), wi) in out.iter_mut().zip(z).zip(w) {
            *o = zi - wi;
        }
        chol.solve_in_place(out)
    }
}

/// Shared accumulation of `(1/n) Σᵢ ℓ(zᵢ; θ) · J_{g(i)}ᵀ sᵢ` where `sᵢ` is the
/// score of sample `i` in its group `g(i)` and `J_g` is that group's block of rows.
fn score_term_mean<F>(
    batch: &Batch,
    theta: &[f64],
    loss: &LossSpec,
    f_hat: &[f64],
    jac: &Matrix,
    mut score: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64], &[f64], &mut [f64]) -> Result<()>,
{
    let d = batch.dim();
    let p = theta.len();
    check_dim("Jacobian columns", p, jac.cols())?;
    check_dim("Jacobian rows vs f̂", f_hat.len(), jac.rows())?;
    if !f_hat.len().is_multiple_of(d) || f_hat.is_empty() {
        return Err(Error::Dimension {
            context: "f̂ must stack whole feature blocks",
            expected: d,
            got: f_hat.len(),
        });
    }
    let groups = f_hat.len() / d;
    let mut acc = vec![0.0; p];
    let mut s = vec![0.0; d];
    for i in 0..batch.len() {
        let g = batch.group(i);
        if g >= groups {
            return Err(Error::Estimation(format!(
                "sample group {g} ≥ {groups} groups"
            )));
        }
        let pt = batch.point(i);
        let l = loss.value(&pt, theta)?;
        score(g, pt.features, &f_hat[g * d..(g + 1) * d], &mut s)?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Estimation(format!("non-finite score at sample {i}")));
        }
        for (r, &sr) in s.iter().enumerate() {
            let c = l * sr;
            for (a, &jv) in acc.iter_mut().zip(jac.row(g * d + r)) {
                *a += jv * c;
            }
        }
    }
    let n = batch.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Gaussian closed form `(1/n) Σ ℓ(zᵢ; θ) Jᵀ Σ⁻¹ (zᵢ − f̂)`.
///
/// For grouped batches (mixture clusters, class labels) each sample uses its
/// group's mean, covariance and Jacobian block; summing over all samples and
/// dividing by `n` weights the per-group estimators by `nᵢ/n`.
pub fn grad2_gaussian(
    batch: &Batch,
    theta: &[f64],
    loss: &LossSpec,
    f_hat: &[f64],
    jac: &Matrix,
    covariances: &[Matrix],
) -> Result<Vec<f64>> {
    let d = batch.dim();
    let factors = covariances
        .iter()
        .map(|c| {
            check_dim("covariance size", d, c.rows())?;
            Cholesky::new(c)
        })
        .collect::<Result<Vec<_>>>()?;
    check_dim("covariance count", f_hat.len() / d.max(1), factors.len())?;
    score_term_mean(batch, theta, loss, f_hat, jac, |g, z, w, out| {
        for ((o, zi), wi) in out.iter_mut().zip(z).zip(w) {
            *o = zi - wi;
        }
        factors[g].solve_in_place(out)
    })
}

/// REINFORCE-style estimate `(1/n) Σ ℓ(zᵢ; θ) Jᵀ ∂_w log p(zᵢ; f̂)`.
pub fn grad2_reinforce(
    batch: &Batch,
    theta: &[f64],
    loss: &LossSpec,
    f_hat: &[f64],
    jac: &Matrix,
    score: &dyn ScoreFunction,
) -> Result<Vec<f64>> {
    score_term_mean(batch, theta, loss, f_hat, jac, |g, z, w, out| {
        score.score(g, z, w, out)
    })
}

/// Both gradient parts and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEstimate {
    pub grad1: Vec<f64>,
    pub grad2: Vec<f64>,
    pub total: Vec<f64>,
}

impl GradEstimate {
    pub fn new(grad1: Vec<f64>, grad2: Vec<f64>) -> Result<Self> {
        check_dim("GradEstimate", grad1.len(), grad2.len())?;
        let total: Vec<f64> = grad1.iter().zip(&grad2).map(|(a, b)| a + b).collect();
        if total.iter().any(|v| !v.is_finite()) {
            return Err(Error::Estimation("non-finite gradient estimate".into()));
        }
        Ok(Self {
            grad1,
            grad2,
            total,
        })
    }

    /// Only the first part; the distribution-shift term is zero.
    pub fn first_order(grad1: Vec<f64>) -> Result<Self> {
        let zeros = vec![0.0; grad1.len()];
        Self::new(grad1, zeros)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.total, &self.total).sqrt()
    }
}

/// Reparameterized gradient for `y = β(θ)ᵀx + noise`:
/// `(1/n) Σ [∇_θ ℓ(xᵢ, yᵢ; θ) + (∂ℓ/∂y)(xᵢ, yᵢ; θ) · J_βᵀ xᵢ]`.
pub fn grad_regression(
    batch: &Batch,
    theta: &[f64],
    loss: &LossSpec,
    jac_beta: &Matrix,
) -> Result<GradEstimate> {
    check_dim("Jβ rows", batch.dim(), jac_beta.rows())?;
    check_dim("Jβ cols", theta.len(), jac_beta.cols())?;
    let p = theta.len();
    let mut g1 = vec![0.0; p];
    let mut g2 = vec![0.0; p];
    let mut buf = vec![0.0; p];
    for pt in batch.points() {
        loss.grad_theta(&pt, theta, &mut buf)?;
        for (a, v) in g1.iter_mut().zip(&buf) {
            *a += v;
        }
        let dy = loss.dl_dy(&pt, theta)?;
        let jx = jac_beta.tr_mul_vec(pt.features)?;
        for (a, v) in g2.iter_mut().zip(&jx) {
            *a += dy * v;
        }
    }
    let n = batch.len() as f64;
    for v in g1.iter_mut().chain(g2.iter_mut()) {
        *v /= n;
    }
    GradEstimate::new(g1, g2)
}
