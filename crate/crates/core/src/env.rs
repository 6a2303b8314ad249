//! Performative distribution maps `𝒟(θ)`, seeded sampling, ground-truth
//! sufficient statistics and the box-shaped parameter domain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Needed without std; shadowed by inherent methods when std is linked.
#[allow(unused_imports)]
use num_traits::Float as _;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::seed::RngSeed;

/// Baseline pricing demand `μ₀` used by the pricing preset.
pub const PRICING_MU0: [f64; 5] = [6.55, 6.72, 6.60, 6.54, 6.42];

/// Coordinatewise bounds `lo ≤ θ ≤ hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("BoxDomain::new", lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::Spec(
                "domain must have at least one coordinate".into(),
            ));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(Error::Spec(format!(
                    "bad bounds [{l}, {h}] on coordinate {i}"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^p`.
    pub fn cube(p: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; p], vec![hi; p])
    }

    pub fn unbounded(p: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; p],
            hi: vec![f64::INFINITY; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
    }

    /// Euclidean projection onto the box, i.e. a coordinatewise clamp.
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&t, (&l, &h))| t.max(l).min(h))
            .collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&t, (&l, &h))| l <= t && t <= h)
    }

    /// Midpoint of each bounded coordinate; 0 for unbounded sides.
    pub fn centroid(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| match (l.is_finite(), h.is_finite()) {
                (true, true) => 0.5 * (l + h),
                (true, false) => l.max(0.0),
                (false, true) => h.min(0.0),
                (false, false) => 0.0,
            })
            .collect()
    }
}

/// Model parameters together with the domain they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    values: Vec<f64>,
    domain: BoxDomain,
}

impl Params {
    pub fn new(values: Vec<f64>, domain: BoxDomain) -> Result<Self> {
        check_dim("Params::new", domain.dim(), values.len())?;
        Ok(Self { values, domain })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Euclidean projection of `θ` onto its domain.
pub fn project(theta: &Params) -> Params {
    Params {
        values: theta.domain.project(&theta.values),
        domain: theta.domain.clone(),
    }
}

/// One component of a one-dimensional Gaussian mixture with mean `a1·θ + a0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub a0: f64,
    pub a1: f64,
    pub variance: f64,
}

/// Declarative description of a performative distribution map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    /// `z ~ 𝒩(a1·θ + a0, σ²)`.
    LinearMeanGaussian { a0: f64, a1: f64, variance: f64 },
    /// `z ~ 𝒩(√(a1·θ + a0), σ²)`.
    SqrtMeanGaussian { a0: f64, a1: f64, variance: f64 },
    /// `z ~ Σᵢ γᵢ 𝒩(a_{i,1}·θ + a_{i,0}, σᵢ²)`, cluster labels observed.
    GaussianMixture { components: Vec<MixtureComponent> },
    /// Demand `z ~ 𝒩(μ₀ − ε·θ, Σ)`; `Σ` defaults to the identity.
    Pricing {
        mu0: Vec<f64>,
        epsilon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariance: Option<Vec<Vec<f64>>>,
    },
    /// Spam model: `y ~ Bernoulli(γ)`, `x | y=0 ~ 𝒩(μ₀, σ₀²)`,
    /// `x | y=1 ~ 𝒩(μ₁ − ε·θ₁, σ₁²)` for `θ = (θ₀, θ₁)`.
    Classification {
        spam_rate: f64,
        mu_legit: f64,
        var_legit: f64,
        mu_spam: f64,
        var_spam: f64,
        epsilon: f64,
    },
    /// `x ~ 𝒩(μ_x, σ_x²)`, `y = β(θ)·x + 𝒩(0, σ_y²)` with `β(θ) = a0 + a1·θ`.
    Regression {
        mu_x: f64,
        var_x: f64,
        a0: f64,
        a1: f64,
        noise_var: f64,
    },
}

/// Family tag of an [`EnvSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LinearMeanGaussian,
    SqrtMeanGaussian,
    GaussianMixture,
    Pricing,
    Classification,
    Regression,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Spec(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Spec(format!("{name} must be finite, got {v}")))
    }
}

impl EnvSpec {
    /// Pricing environment with the identity covariance.
    pub fn pricing(mu0: Vec<f64>, epsilon: f64) -> Self {
        EnvSpec::Pricing {
            mu0,
            epsilon,
            covariance: None,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            EnvSpec::LinearMeanGaussian { .. } => Family::LinearMeanGaussian,
            EnvSpec::SqrtMeanGaussian { .. } => Family::SqrtMeanGaussian,
            EnvSpec::GaussianMixture { .. } => Family::GaussianMixture,
            EnvSpec::Pricing { .. } => Family::Pricing,
            EnvSpec::Classification { .. } => Family::Classification,
            EnvSpec::Regression { .. } => Family::Regression,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::LinearMeanGaussian { a0, a1, variance }
            | EnvSpec::SqrtMeanGaussian { a0, a1, variance } => {
                finite("a0", *a0)?;
                finite("a1", *a1)?;
                positive("variance", *variance)
            }
            EnvSpec::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::Spec("mixture needs at least one component".into()));
                }
                let mut total = 0.0;
                for c in components {
                    finite("a0", c.a0)?;
                    finite("a1", c.a1)?;
                    positive("variance", c.variance)?;
                    if !(c.weight >= 0.0) || !c.weight.is_finite() {
                        return Err(Error::Spec(format!("mixture weight {} < 0", c.weight)));
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Spec(format!(
                        "mixture weights sum to {total}, not 1"
                    )));
                }
                Ok(())
            }
            EnvSpec::Pricing { mu0, epsilon, .. } => {
                if mu0.is_empty() {
                    return Err(Error::Spec("pricing needs at least one good".into()));
                }
                for &m in mu0 {
                    finite("mu0", m)?;
                }
                finite("epsilon", *epsilon)?;
                self.pricing_cholesky().map(|_| ())
            }
            EnvSpec::Classification {
                spam_rate,
                mu_legit,
                var_legit,
                mu_spam,
                var_spam,
                epsilon,
            } => {
                if !(0.0..=1.0).contains(spam_rate) {
                    return Err(Error::Spec(format!("spam_rate {spam_rate} outside [0, 1]")));
                }
                finite("mu_legit", *mu_legit)?;
                finite("mu_spam", *mu_spam)?;
                finite("epsilon", *epsilon)?;
                positive("var_legit", *var_legit)?;
                positive("var_spam", *var_spam)
            }
            EnvSpec::Regression {
                mu_x,
                var_x,
                a0,
                a1,
                noise_var,
            } => {
                finite("mu_x", *mu_x)?;
                finite("a0", *a0)?;
                finite("a1", *a1)?;
                positive("var_x", *var_x)?;
                positive("noise_var", *noise_var)
            }
        }
    }

    /// Dimension `p` of `θ`.
    pub fn param_dim(&self) -> usize {
        match self {
            EnvSpec::Pricing { mu0, .. } => mu0.len(),
            EnvSpec::Classification { .. } => 2,
            _ => 1,
        }
    }

    /// Dimension `d` of one feature row.
    pub fn feature_dim(&self) -> usize {
        match self {
            EnvSpec::Pricing { mu0, .. } => mu0.len(),
            _ => 1,
        }
    }

    /// Number of sample groups whose means make up `f(θ)`.
    pub fn groups(&self) -> usize {
        match self {
            EnvSpec::GaussianMixture { components } => components.len(),
            EnvSpec::Classification { .. } => 2,
            _ => 1,
        }
    }

    /// Dimension `k` of the sufficient statistic `f(θ)`.
    pub fn stat_dim(&self) -> usize {
        self.groups() * self.feature_dim()
    }

    /// Free entries of `df/dθ` when the environment's structure is partly known.
    ///
    /// Classification: the legitimate-mail mean does not move and the spam mean
    /// depends on `θ₁` only, so only entry `(1, 1)` is estimated.
    pub fn jacobian_mask(&self) -> Option<Vec<Vec<bool>>> {
        match self {
            EnvSpec::Classification { .. } => Some(vec![vec![false, false], vec![false, true]]),
            _ => None,
        }
    }

    fn pricing_cholesky(&self) -> Result<Cholesky> {
        let EnvSpec::Pricing {
            mu0, covariance, ..
        } = self
        else {
            return Err(Error::Unsupported(
                "covariance factor outside pricing".into(),
            ));
        };
        let d = mu0.len();
        let cov = match covariance {
            None => Matrix::identity(d),
            Some(rows) => {
                let m = Matrix::from_rows(rows)
                    .map_err(|_| Error::Spec("pricing covariance rows are ragged".into()))?;
                if m.rows() != d || m.cols() != d {
                    return Err(Error::Spec(format!(
                        "pricing covariance must be {d}×{d}, got {}×{}",
                        m.rows(),
                        m.cols()
                    )));
                }
                if !m.is_symmetric(1e-12 * (1.0 + m.frobenius_norm())) {
                    return Err(Error::Spec("pricing covariance is not symmetric".into()));
                }
                m
            }
        };
        Cholesky::new(&cov)
            .map_err(|_| Error::Spec("pricing covariance is not positive definite".into()))
    }

    /// Known covariance of each sample group, in group order.
    pub fn group_covariances(&self) -> Result<Vec<Matrix>> {
        Ok(match self {
            EnvSpec::LinearMeanGaussian { variance, .. }
            | EnvSpec::SqrtMeanGaussian { variance, .. } => vec![Matrix::diagonal(&[*variance])],
            EnvSpec::GaussianMixture { components } => components
                .iter()
                .map(|c| Matrix::diagonal(&[c.variance]))
                .collect(),
            EnvSpec::Pricing {
                mu0, covariance, ..
            } => vec![match covariance {
                None => Matrix::identity(mu0.len()),
                Some(rows) => Matrix::from_rows(rows)?,
            }],
            EnvSpec::Classification {
                var_legit,
                var_spam,
                ..
            } => vec![
                Matrix::diagonal(&[*var_legit]),
                Matrix::diagonal(&[*var_spam]),
            ],
            EnvSpec::Regression { noise_var, .. } => vec![Matrix::diagonal(&[*noise_var])],
        })
    }

    fn sqrt_arg(a0: f64, a1: f64, theta: f64) -> Result<f64> {
        let arg = a1 * theta + a0;
        if arg < 0.0 || arg.is_nan() {
            Err(Error::Domain(format!(
                "a1·θ + a0 = {arg} < 0 at θ = {theta}; square-root mean undefined"
            )))
        } else {
            Ok(arg)
        }
    }

    /// Exact sufficient statistic `f(θ)`: component means concatenated in group
    /// order, or `β(θ)` for regression.
    pub fn true_f(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim("EnvSpec::true_f", self.param_dim(), theta.len())?;
        Ok(match self {
            EnvSpec::LinearMeanGaussian { a0, a1, .. } => vec![a1 * theta[0] + a0],
            EnvSpec::SqrtMeanGaussian { a0, a1, .. } => {
                vec![Self::sqrt_arg(*a0, *a1, theta[0])?.sqrt()]
            }
            EnvSpec::GaussianMixture { components } => {
                components.iter().map(|c| c.a1 * theta[0] + c.a0).collect()
            }
            EnvSpec::Pricing { mu0, epsilon, .. } => mu0
                .iter()
                .zip(theta)
                .map(|(m, t)| m - epsilon * t)
                .collect(),
            EnvSpec::Classification {
                mu_legit,
                mu_spam,
                epsilon,
                ..
            } => vec![*mu_legit, mu_spam - epsilon * theta[1]],
            EnvSpec::Regression { a0, a1, .. } => vec![a0 + a1 * theta[0]],
        })
    }

    /// Exact `df/dθ` (`k × p`).
    pub fn true_jacobian(&self, theta: &[f64]) -> Result<Matrix> {
        check_dim("EnvSpec::true_jacobian", self.param_dim(), theta.len())?;
        Ok(match self {
            EnvSpec::LinearMeanGaussian { a1, .. } | EnvSpec::Regression { a1, .. } => {
                Matrix::diagonal(&[*a1])
            }
            EnvSpec::SqrtMeanGaussian { a0, a1, .. } => {
                let arg = Self::sqrt_arg(*a0, *a1, theta[0])?;
                if arg == 0.0 {
                    return Err(Error::Domain(
                        "square-root mean not differentiable at a1·θ + a0 = 0".into(),
                    ));
                }
                Matrix::diagonal(&[a1 / (2.0 * arg.sqrt())])
            }
            EnvSpec::GaussianMixture { components } => Matrix::from_row_major(
                components.len(),
                1,
                components.iter().map(|c| c.a1).collect(),
            )?,
            EnvSpec::Pricing { mu0, epsilon, .. } => Matrix::diagonal(&vec![-epsilon; mu0.len()]),
            EnvSpec::Classification { epsilon, .. } => {
                Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, -epsilon]])?
            }
        })
    }

    /// Population mean of the feature vector `z` under `𝒟(θ)` (mixtures pooled).
    pub fn population_mean(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            EnvSpec::GaussianMixture { components } => {
                check_dim("EnvSpec::population_mean", 1, theta.len())?;
                Ok(vec![components
                    .iter()
                    .map(|c| c.weight * (c.a1 * theta[0] + c.a0))
                    .sum()])
            }
            EnvSpec::LinearMeanGaussian { .. }
            | EnvSpec::SqrtMeanGaussian { .. }
            | EnvSpec::Pricing { .. } => self.true_f(theta),
            EnvSpec::Classification { .. } | EnvSpec::Regression { .. } => Err(Error::Unsupported(
                format!("pooled feature mean for {:?}", self.family()),
            )),
        }
    }

    /// Draws `n` i.i.d. samples from `𝒟(θ)`; bit-reproducible for a fixed seed.
    pub fn sample(&self, theta: &[f64], n: usize, seed: RngSeed) -> Result<Batch> {
        let mut rng = seed.rng();
        self.sample_with(theta, n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        n: usize,
        rng: &mut R,
    ) -> Result<Batch> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Spec("sample size must be at least 1".into()));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("θ[{i}] is not finite")));
        }
        let mean = self.true_f(theta)?;
        match self {
            EnvSpec::LinearMeanGaussian { variance, .. }
            | EnvSpec::SqrtMeanGaussian { variance, .. } => {
                let sd = variance.sqrt();
                let z = (0..n).map(|_| mean[0] + sd * std_normal(rng)).collect();
                Batch::new(z, 1)
            }
            EnvSpec::GaussianMixture { components } => {
                let mut z = Vec::with_capacity(n);
                let mut clusters = Vec::with_capacity(n);
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = components.len() - 1;
                    for (j, c) in components.iter().enumerate() {
                        acc += c.weight;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    let c = &components[pick];
                    let x = std_normal(rng);
                    z.push(mean[pick] + c.variance.sqrt() * x);
                    clusters.push(pick);
                }
                Batch::new(z, 1)?.with_clusters(clusters)
            }
            EnvSpec::Pricing { .. } => {
                let chol = self.pricing_cholesky()?;
                let d = mean.len();
                let mut z = Vec::with_capacity(n * d);
                let mut xi = vec![0.0; d];
                for _ in 0..n {
                    for v in xi.iter_mut() {
                        *v = std_normal(rng);
                    }
                    let colored = chol.lower_mul(&xi)?;
                    z.extend(mean.iter().zip(&colored).map(|(m, c)| m + c));
                }
                Batch::new(z, d)
            }
            EnvSpec::Classification {
                spam_rate,
                var_legit,
                var_spam,
                ..
            } => {
                let (sd0, sd1) = (var_legit.sqrt(), var_spam.sqrt());
                let mut x = Vec::with_capacity(n);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let y = u8::from(u < *spam_rate);
                    let xi = std_normal(rng);
                    x.push(if y == 1 {
                        mean[1] + sd1 * xi
                    } else {
                        mean[0] + sd0 * xi
                    });
                    labels.push(y);
                }
                Batch::new(x, 1)?.with_labels(labels)
            }
            EnvSpec::Regression {
                mu_x,
                var_x,
                noise_var,
                ..
            } => {
                let beta = mean[0];
                let (sdx, sdy) = (var_x.sqrt(), noise_var.sqrt());
                let mut xs = Vec::with_capacity(n);
                let mut ys = Vec::with_capacity(n);
                for _ in 0..n {
                    let x = mu_x + sdx * std_normal(rng);
                    let y = beta * x + sdy * std_normal(rng);
                    xs.push(x);
                    ys.push(y);
                }
                Batch::new(xs, 1)?.with_responses(ys)
            }
        }
    }
}

#[inline]
fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws a batch; free-function form of [`EnvSpec::sample`].
pub fn sample(spec: &EnvSpec, theta: &Params, n: usize, seed: RngSeed) -> Result<Batch> {
    spec.sample(theta.values(), n, seed)
}

/// Exact `f(θ)`; free-function form of [`EnvSpec::true_f`].
pub fn true_f(spec: &EnvSpec, theta: &Params) -> Result<Vec<f64>> {
    spec.true_f(theta.values())
}
