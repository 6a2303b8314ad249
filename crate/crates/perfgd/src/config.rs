//! Experiment configuration documents and the built-in presets.

use std::path::Path;

use perfgd_core::env::{BoxDomain, EnvSpec, MixtureComponent, PRICING_MU0};
use perfgd_core::grad::LossSpec;
use perfgd_core::opt::{Estimator, HorizonMode, OptimConfig, Optimizer, Problem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// One experiment: a problem, the drivers to compare and the trial plan.
///
/// `optim` is shared by every driver. The PerfGD-only fields (`horizon`,
/// `init_steps`, `estimator`, ...) are ignored by RGD and RRM, and `optim.seed`
/// is replaced by `base_seed + trial` in every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvSpec,
    pub loss: LossSpec,
    pub domain: BoxDomain,
    pub optimizers: Vec<Optimizer>,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub format: Format,
}

fn default_trials() -> usize {
    10
}

fn default_output() -> String {
    "results".into()
}

impl ExperimentConfig {
    pub fn problem(&self) -> Result<Problem> {
        Ok(Problem::new(
            self.env.clone(),
            self.loss,
            self.domain.clone(),
        )?)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(BenchError::Config(m));
        if self.name.trim().is_empty() {
            return cfg_err("field `name` must not be empty".into());
        }
        if self.name.contains(['/', '\\']) {
            return cfg_err("field `name` must not contain path separators".into());
        }
        if self.optimizers.is_empty() {
            return cfg_err("field `optimizers` must list at least one of rrm, rgd, perfgd".into());
        }
        let mut seen = self.optimizers.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.optimizers.len() {
            return cfg_err("field `optimizers` lists a driver twice".into());
        }
        if self.trials == 0 {
            return cfg_err("field `trials` must be at least 1".into());
        }
        // deserialization bypasses the bounds check
        BoxDomain::new(self.domain.lo().to_vec(), self.domain.hi().to_vec())
            .map_err(|e| BenchError::Config(format!("field `domain`: {e}")))?;
        self.problem()
            .map_err(|e| BenchError::Config(format!("fields `env`/`loss`/`domain`: {e}")))?;
        self.optim
            .validate()
            .map_err(|e| BenchError::Config(format!("field `optim`: {e}")))?;
        if self.optimizers.contains(&Optimizer::Perfgd) {
            let regression = matches!(self.env, EnvSpec::Regression { .. });
            let reparam = self.optim.estimator == Estimator::RegressionReparam;
            if regression != reparam {
                return cfg_err(format!(
                    "field `optim.estimator`: {:?} does not match the {:?} environment",
                    self.optim.estimator,
                    self.env.family()
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses and validates a JSON experiment config. Syntax errors carry the
/// line and column; validation errors name the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        BenchError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// A preset name or a path to a JSON config.
pub fn load(arg: &str) -> Result<ExperimentConfig> {
    if let Some(cfg) = preset(arg) {
        return Ok(cfg);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(BenchError::Config(format!(
            "`{arg}` is neither a preset ({}) nor an existing file",
            PRESETS.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    parse_config(&text)
}

pub const PRESETS: [&str; 6] = [
    "toy_linear",
    "toy_sqrt",
    "mixture",
    "pricing",
    "classification",
    "regression",
];

fn all_optimizers() -> Vec<Optimizer> {
    vec![Optimizer::Rrm, Optimizer::Rgd, Optimizer::Perfgd]
}

fn unit_interval() -> BoxDomain {
    BoxDomain::cube(1, -1.0, 1.0).expect("valid bounds")
}

fn base(
    name: &str,
    env: EnvSpec,
    loss: LossSpec,
    domain: BoxDomain,
    optim: OptimConfig,
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        env,
        loss,
        domain,
        optimizers: all_optimizers(),
        optim,
        trials: 10,
        base_seed: 0,
        output: default_output(),
        format: Format::Csv,
    }
}

/// Built-in experiment by name.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "toy_linear" => base(
            name,
            EnvSpec::LinearMeanGaussian {
                a0: 1.0,
                a1: 1.0,
                variance: 0.1,
            },
            LossSpec::LinearCost,
            unit_interval(),
            OptimConfig {
                samples: 1000,
                max_iters: 200,
                horizon: 4,
                ..OptimConfig::default()
            },
        ),
        "toy_sqrt" => base(
            name,
            EnvSpec::SqrtMeanGaussian {
                a0: 1.0,
                a1: 1.0,
                variance: 1.0,
            },
            LossSpec::LinearCost,
            unit_interval(),
            OptimConfig {
                samples: 500,
                max_iters: 200,
                horizon: 4,
                init_steps: Some(1),
                ..OptimConfig::default()
            },
        ),
        "mixture" => base(
            name,
            EnvSpec::GaussianMixture {
                components: vec![
                    MixtureComponent {
                        weight: 0.5,
                        a0: -0.5,
                        a1: 1.0,
                        variance: 1.0,
                    },
                    MixtureComponent {
                        weight: 0.5,
                        a0: 1.0,
                        a1: -0.3,
                        variance: 0.25,
                    },
                ],
            },
            LossSpec::LinearCost,
            unit_interval(),
            full_history(1000, 1),
        ),
        "pricing" => base(
            name,
            EnvSpec::pricing(PRICING_MU0.to_vec(), 1.5),
            LossSpec::LinearRevenue,
            BoxDomain::cube(5, 0.0, 5.0).expect("valid bounds"),
            full_history(500, 14),
        ),
        "classification" => base(
            name,
            EnvSpec::Classification {
                spam_rate: 0.5,
                mu_legit: 1.0,
                var_legit: 0.25,
                mu_spam: -1.0,
                var_spam: 0.25,
                epsilon: 3.0,
            },
            LossSpec::RidgeCrossEntropy { lambda: 1e-2 },
            BoxDomain::cube(2, -10.0, 10.0).expect("valid bounds"),
            full_history(500, 1),
        ),
        "regression" => base(
            name,
            EnvSpec::Regression {
                mu_x: 1.67,
                var_x: 1.0,
                a0: 1.67,
                a1: 1.67,
                noise_var: 4.12,
            },
            LossSpec::RidgeSquared { lambda: 3.33 },
            BoxDomain::cube(1, -10.0, 10.0).expect("valid bounds"),
            OptimConfig {
                estimator: Estimator::RegressionReparam,
                ..full_history(500, 1)
            },
        ),
        _ => return None,
    };
    Some(cfg)
}

fn full_history(samples: usize, init_steps: usize) -> OptimConfig {
    OptimConfig {
        samples,
        max_iters: 100,
        horizon: 1,
        horizon_mode: HorizonMode::FullHistory,
        init_steps: Some(init_steps),
        ..OptimConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(parse_config(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn empty_optimizer_list_rejected() {
        let mut cfg = preset("toy_linear").unwrap();
        cfg.optimizers.clear();
        assert!(matches!(cfg.validate(), Err(BenchError::Config(_))));
    }

    #[test]
    fn defaults_fill_in() {
        let text = r#"{
            "name": "t",
            "env": {"family": "linear_mean_gaussian", "a0": 1, "a1": 1, "variance": 0.1},
            "loss": {"kind": "linear_cost"},
            "domain": {"lo": [-1], "hi": [1]},
            "optimizers": ["rgd"]
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.optim.eta, 0.1);
        assert_eq!(cfg.optim.samples, 500);
    }

    #[test]
    fn unknown_field_reports_location() {
        let text = "{\n  \"name\": \"t\",\n  \"bogus\": 1\n}";
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn hash_tracks_constants() {
        let a = preset("pricing").unwrap();
        let mut b = a.clone();
        b.optim.eta = 0.11;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), preset("pricing").unwrap().hash());
    }
}
