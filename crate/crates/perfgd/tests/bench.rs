use std::process::Command;

use perfgd::config::{preset, ExperimentConfig, Format, PRESETS};
use perfgd::emit::{csv_header, emit, parse_json, to_csv, to_json};
use perfgd::run::run_experiment;
use perfgd_core::env::EnvSpec;
use perfgd_core::grad::LossSpec;
use perfgd_core::opt::{Estimator, HorizonMode, Optimizer};

fn quick(name: &str, trials: usize, iters: usize) -> ExperimentConfig {
    let mut cfg = preset(name).unwrap();
    cfg.trials = trials;
    cfg.optim.max_iters = iters;
    cfg
}

#[test]
fn pricing_csv_shape() {
    let cfg = preset("pricing").unwrap();
    let csv = to_csv(&run_experiment(&cfg).unwrap());
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, csv_header(5));
    assert_eq!(header.split(',').count(), 8 + 5);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 13));
    for opt in ["rrm", "rgd", "perfgd"] {
        let agg = rows.iter().filter(|r| r[1] == opt && r[2] == "agg").count();
        let per_trial = rows.iter().filter(|r| r[1] == opt && r[2] != "agg").count();
        assert_eq!(agg, 101, "{opt}");
        assert_eq!(per_trial, 10 * 101, "{opt}");
    }
}

#[test]
fn aggregate_means_match_per_trial_rows() {
    let cfg = quick("mixture", 7, 30);
    let csv = to_csv(&run_experiment(&cfg).unwrap());
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    // columns: experiment, optimizer, trial, iter, theta_0, loss_mean, loss_sem, gradnorm_mean, gradnorm_sem
    for opt in ["rrm", "rgd", "perfgd"] {
        for it in 0..=30 {
            let it_s = it.to_string();
            let per: Vec<&Vec<String>> = rows
                .iter()
                .filter(|r| r[1] == opt && r[3] == it_s && r[2] != "agg")
                .collect();
            let agg = rows
                .iter()
                .find(|r| r[1] == opt && r[3] == it_s && r[2] == "agg")
                .unwrap();
            for col in [4, 5, 7] {
                let vals: Vec<f64> = per.iter().map(|r| r[col].parse().unwrap()).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let got: f64 = agg[col].parse().unwrap();
                assert!(
                    (got - mean).abs() <= 1e-12 * (1.0 + mean.abs()),
                    "{opt} iter {it} col {col}"
                );
            }
            let vals: Vec<f64> = per.iter().map(|r| r[5].parse().unwrap()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sem =
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) / n).sqrt();
            let got: f64 = agg[6].parse().unwrap();
            assert!((got - sem).abs() <= 1e-12 * (1.0 + sem));
        }
    }
}

#[test]
fn single_trial_has_empty_sem_and_matches_trajectory() {
    let cfg = quick("toy_linear", 1, 10);
    let r = run_experiment(&cfg).unwrap();
    for block in &r.optimizers {
        let rec = block.trials[0].record.as_ref().unwrap();
        for (a, it) in block.aggregate.iter().zip(&rec.iterations) {
            assert_eq!(a.loss_sem, None);
            assert_eq!(a.gradnorm_sem, None);
            assert_eq!(a.theta_mean, it.theta);
            assert_eq!(a.loss_mean, it.loss);
        }
    }
    let csv = to_csv(&r);
    let agg = csv.lines().find(|l| l.contains(",agg,")).unwrap();
    let cells: Vec<&str> = agg.split(',').collect();
    assert_eq!(cells[6], "");
    assert_eq!(cells[8], "");
}

#[test]
fn json_round_trip_is_bit_exact() {
    let r = run_experiment(&quick("classification", 3, 15)).unwrap();
    let doc = parse_json(&to_json(&r)).unwrap();
    assert_eq!(doc.experiment, r.experiment);
    for (b, o) in doc.optimizers.iter().zip(&r.optimizers) {
        assert_eq!(b.optimizer, o.optimizer);
        assert_eq!(b.aggregate.len(), o.aggregate.len());
        for (x, y) in b.aggregate.iter().zip(&o.aggregate) {
            assert_eq!(x.loss_mean.to_bits(), y.loss_mean.to_bits());
            assert_eq!(
                x.oracle_loss_mean.map(f64::to_bits),
                y.oracle_loss_mean.map(f64::to_bits)
            );
            for (u, v) in x.theta_mean.iter().zip(&y.theta_mean) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
        assert_eq!(b.aggregate, o.aggregate);
    }
}

#[test]
fn output_independent_of_thread_count() {
    // the pool size is read per run, so both runs see their own setting
    let cfg = quick("toy_sqrt", 4, 20);
    std::env::set_var("PERFGD_THREADS", "1");
    let a = to_csv(&run_experiment(&cfg).unwrap());
    std::env::set_var("PERFGD_THREADS", "3");
    let b = to_csv(&run_experiment(&cfg).unwrap());
    std::env::remove_var("PERFGD_THREADS");
    assert_eq!(a, b);
}

#[test]
fn emit_writes_data_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick("regression", 2, 5);
    let r = run_experiment(&cfg).unwrap();
    for format in [Format::Csv, Format::Json] {
        let (data, meta) = emit(&r, &cfg, dir.path(), format).unwrap();
        assert!(data.exists());
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(meta).unwrap()).unwrap();
        assert_eq!(m["config_hash"], cfg.hash());
        let opt = m["ground_truth"]["theta_opt"][0].as_f64().unwrap();
        assert!((opt - -0.8427).abs() < 1e-3);
    }
}

#[test]
fn emit_reports_path_on_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = quick("toy_linear", 1, 2);
    let r = run_experiment(&cfg).unwrap();
    let err = emit(&r, &cfg, &blocker.join("sub"), Format::Csv).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("sub"), "{err}");
}

#[test]
fn preset_constants() {
    // published experiment constants
    let sqrt = preset("toy_sqrt").unwrap();
    assert_eq!(
        sqrt.env,
        EnvSpec::SqrtMeanGaussian {
            a0: 1.0,
            a1: 1.0,
            variance: 1.0
        }
    );
    assert_eq!(
        (
            sqrt.optim.samples,
            sqrt.optim.horizon,
            sqrt.optim.init_steps()
        ),
        (500, 4, 1)
    );
    assert_eq!(sqrt.optim.horizon_mode, HorizonMode::Window);

    let mix = preset("mixture").unwrap();
    let EnvSpec::GaussianMixture { components } = &mix.env else {
        panic!("mixture preset")
    };
    let flat: Vec<[f64; 4]> = components
        .iter()
        .map(|c| [c.weight, c.a0, c.a1, c.variance])
        .collect();
    assert_eq!(flat, vec![[0.5, -0.5, 1.0, 1.0], [0.5, 1.0, -0.3, 0.25]]);
    assert_eq!((mix.optim.samples, mix.optim.init_steps()), (1000, 1));
    assert_eq!(mix.optim.horizon_mode, HorizonMode::FullHistory);

    let pricing = preset("pricing").unwrap();
    assert_eq!(
        pricing.env,
        EnvSpec::pricing(vec![6.55, 6.72, 6.60, 6.54, 6.42], 1.5)
    );
    assert_eq!(pricing.domain.lo(), &[0.0; 5]);
    assert_eq!(pricing.domain.hi(), &[5.0; 5]);
    assert_eq!(pricing.loss, LossSpec::LinearRevenue);
    assert_eq!(
        (pricing.optim.samples, pricing.optim.init_steps()),
        (500, 14)
    );
    assert_eq!(pricing.optim.horizon_mode, HorizonMode::FullHistory);

    let class = preset("classification").unwrap();
    assert_eq!(
        class.env,
        EnvSpec::Classification {
            spam_rate: 0.5,
            mu_legit: 1.0,
            var_legit: 0.25,
            mu_spam: -1.0,
            var_spam: 0.25,
            epsilon: 3.0
        }
    );
    assert_eq!(class.loss, LossSpec::RidgeCrossEntropy { lambda: 1e-2 });
    assert_eq!((class.optim.samples, class.optim.init_steps()), (500, 1));

    let reg = preset("regression").unwrap();
    assert_eq!(
        reg.env,
        EnvSpec::Regression {
            mu_x: 1.67,
            var_x: 1.0,
            a0: 1.67,
            a1: 1.67,
            noise_var: 4.12
        }
    );
    assert_eq!(reg.loss, LossSpec::RidgeSquared { lambda: 3.33 });
    assert_eq!(reg.optim.samples, 500);
    assert_eq!(reg.optim.estimator, Estimator::RegressionReparam);

    let toy = preset("toy_linear").unwrap();
    assert_eq!(
        toy.env,
        EnvSpec::LinearMeanGaussian {
            a0: 1.0,
            a1: 1.0,
            variance: 0.1
        }
    );
    assert_eq!(toy.optim.samples, 1000);

    for name in PRESETS {
        let cfg = preset(name).unwrap();
        assert_eq!(cfg.optim.eta, 0.1, "{name}");
        assert_eq!(cfg.trials, 10, "{name}");
        assert_eq!(
            cfg.optimizers,
            vec![Optimizer::Rrm, Optimizer::Rgd, Optimizer::Perfgd]
        );
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_perfgd"))
}

#[test]
fn cli_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["run", "toy_linear", "--trials", "2", "--seed", "5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("toy_linear.csv")).unwrap();
    assert!(csv.starts_with("experiment,optimizer,trial,iter,theta_0,"));
    assert!(dir.path().join("toy_linear.meta.json").exists());

    let bad = cli().args(["run", "no_such_preset"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let cfg_path = dir.path().join("bad.json");
    std::fs::write(&cfg_path, r#"{"name": "x", "optimizers": []}"#).unwrap();
    let bad = cli().arg("run").arg(&cfg_path).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    // a file where the output directory should go
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let io = cli()
        .args(["run", "toy_linear", "--trials", "1", "--out"])
        .arg(blocker.join("d"))
        .output()
        .unwrap();
    assert_eq!(io.status.code(), Some(2));

    let gt = cli().args(["ground-truth", "pricing"]).output().unwrap();
    assert!(gt.status.success());
    let v: serde_json::Value = serde_json::from_slice(&gt.stdout).unwrap();
    assert!((v["theta_opt"][0].as_f64().unwrap() - 6.55 / 3.0).abs() < 1e-12);

    let sweep = cli()
        .args(["theory", "horizon", "--reps", "100"])
        .output()
        .unwrap();
    assert!(sweep.status.success());
    let text = String::from_utf8(sweep.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("horizon,value,std_error"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn custom_config_file_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(
        &path,
        r#"{
            "name": "custom",
            "env": {"family": "linear_mean_gaussian", "a0": 1, "a1": 1, "variance": 0.1},
            "loss": {"kind": "linear_cost"},
            "domain": {"lo": [-1], "hi": [1]},
            "optimizers": ["perfgd"],
            "trials": 2,
            "optim": {"max_iters": 5}
        }"#,
    )
    .unwrap();
    let cfg = perfgd::config::load(path.to_str().unwrap()).unwrap();
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.optimizers.len(), 1);
    assert_eq!(r.optimizers[0].aggregate.len(), 6);
}
