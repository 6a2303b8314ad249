use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perfgd::config::{self, Format};
use perfgd::emit;
use perfgd::error::{BenchError, Result};
use perfgd::run::run_experiment;
use perfgd_core::env::BoxDomain;
use perfgd_core::oracle::analytic_ground_truth;
use perfgd_core::theory::{
    convergence_curve, grad_error_sweep_eta, horizon_variance_sweep, log_grid, CurveConfig,
    MeanMap, PopulationModel,
};
use perfgd_core::RngSeed;

#[derive(Parser)]
#[command(
    name = "perfgd",
    version,
    about = "Compare RRM, RGD and PerfGD on synthetic performative problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a preset name or a JSON config file.
    Run {
        config: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Run a population-limit sweep and print it as CSV.
    Theory {
        #[command(subcommand)]
        sweep: Sweep,
    },
    /// Print the analytic optimal and stable points of a preset as JSON.
    GroundTruth { preset: String },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Sweep {
    /// Gradient error against step size, quadratic mean map.
    Eta {
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long, default_value_t = 13)]
        points: usize,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Variance of the split slope estimate against horizon, linear mean map.
    Horizon {
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        horizons: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        spacing: f64,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Min-so-far squared gradient norm on the toy problem.
    Convergence {
        #[arg(long, default_value_t = 1e-4)]
        delta: f64,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            trials,
            seed,
            out,
            format,
        } => {
            let mut cfg = config::load(&config)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(f) = format {
                cfg.format = match f {
                    FormatArg::Csv => Format::Csv,
                    FormatArg::Json => Format::Json,
                };
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output));
            let result = run_experiment(&cfg)?;
            for block in &result.optimizers {
                for t in &block.trials {
                    if let Some(err) = &t.error {
                        eprintln!(
                            "{} trial {} aborted: {err}",
                            block.optimizer.name(),
                            t.trial
                        );
                    }
                }
            }
            let (data, meta) = emit::emit(&result, &cfg, &dir, cfg.format)?;
            println!("{}", data.display());
            println!("{}", meta.display());
            Ok(())
        }
        Command::Theory { sweep } => {
            let result = match sweep {
                Sweep::Eta {
                    delta,
                    theta,
                    points,
                    reps,
                    seed,
                } => {
                    let model = PopulationModel {
                        mean: MeanMap::Quadratic {
                            a0: 1.0,
                            a1: 1.0,
                            a2: 1.0,
                        },
                        variance: 1.0,
                    };
                    let etas = log_grid(1e-3, 1.0, points);
                    grad_error_sweep_eta(&model, theta, delta, &etas, reps, RngSeed(seed))?
                }
                Sweep::Horizon {
                    tau,
                    horizons,
                    spacing,
                    reps,
                    seed,
                } => {
                    horizon_variance_sweep(1.0, 1.0, tau, &horizons, spacing, reps, RngSeed(seed))?
                }
                Sweep::Convergence {
                    delta,
                    eta,
                    iters,
                    reps,
                    seed,
                } => {
                    let model = PopulationModel {
                        mean: MeanMap::Affine { a0: 1.0, a1: 1.0 },
                        variance: 0.1,
                    };
                    let domain = BoxDomain::cube(1, -1.0, 1.0)?;
                    let cfg = CurveConfig {
                        theta0: 0.0,
                        eta,
                        iters,
                        delta,
                        reps,
                        seed: RngSeed(seed),
                    };
                    convergence_curve(&model, &domain, &cfg)?
                }
            };
            print!("{}", emit::sweep_csv(&result));
            if let Some(s) = result.log_log_slope {
                eprintln!("log-log slope: {s}");
            }
            if let Some(p) = result.plateau {
                eprintln!("plateau: {p}");
            }
            Ok(())
        }
        Command::GroundTruth { preset } => {
            let cfg = config::preset(&preset).ok_or_else(|| {
                BenchError::Config(format!(
                    "unknown preset `{preset}`; expected one of {}",
                    config::PRESETS.join(", ")
                ))
            })?;
            match analytic_ground_truth(&cfg.problem()?)? {
                Some(gt) => println!(
                    "{}",
                    serde_json::to_string_pretty(&gt).expect("ground truth serializes")
                ),
                None => println!("null"),
            }
            if matches!(cfg.env.family(), perfgd_core::Family::Classification) {
                eprintln!("no closed form for this preset");
            }
            Ok(())
        }
    }
}
