//! Shape properties of the population-limit sweeps.

use perfgd_core::theory::{
    convergence_curve, grad_error_sweep_eta, horizon_variance_sweep, log_grid, stopping_rule,
    CurveConfig, MeanMap, PopulationModel,
};
use perfgd_core::{BoxDomain, RngSeed};

fn quadratic() -> PopulationModel {
    PopulationModel {
        mean: MeanMap::Quadratic {
            a0: 1.0,
            a1: 1.0,
            a2: 1.0,
        },
        variance: 1.0,
    }
}

fn toy() -> PopulationModel {
    PopulationModel {
        mean: MeanMap::Affine { a0: 1.0, a1: 1.0 },
        variance: 0.1,
    }
}

#[test]
fn exact_slope_error_grows_linearly_in_eta() {
    let etas = log_grid(1e-3, 1.0, 13);
    let s = grad_error_sweep_eta(&quadratic(), 0.5, 0.0, &etas, 30, RngSeed(1)).unwrap();
    let slope = s.log_log_slope.unwrap();
    assert!((slope - 1.0).abs() <= 0.2, "{slope}");
}

#[test]
fn noisy_estimate_error_is_u_shaped() {
    let etas = log_grid(1e-3, 1.0, 13);
    for delta in [1e-4, 1e-3] {
        let s = grad_error_sweep_eta(&quadratic(), 0.5, delta, &etas, 200, RngSeed(2)).unwrap();
        let k = s.argmin().unwrap();
        assert!(k > 0 && k + 1 < etas.len(), "δ={delta}: argmin {k}");
        // small steps: the δ/η term dominates
        assert!(s.values[0] > s.values[k]);
    }
}

#[test]
fn horizon_variance_decays_fast_enough() {
    let s = horizon_variance_sweep(1.0, 1.0, 0.1, &[2, 4, 8, 16], 0.05, 500, RngSeed(3)).unwrap();
    assert!(s.values.windows(2).all(|w| w[1] < w[0]), "{:?}", s.values);
    assert!(s.log_log_slope.unwrap() <= -1.5);
}

#[test]
fn exact_population_perfgd_reaches_stationarity() {
    let cfg = CurveConfig {
        theta0: 0.0,
        eta: 0.1,
        iters: 200,
        delta: 0.0,
        reps: 30,
        seed: RngSeed(4),
    };
    let s = convergence_curve(&toy(), &BoxDomain::cube(1, -1.0, 1.0).unwrap(), &cfg).unwrap();
    assert!(*s.values.last().unwrap() <= 1e-4);
    assert!(s.values.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn stopping_rule_monotone_and_homogeneous() {
    let mut last = 0.0;
    for d in log_grid(1e-8, 1.0, 9) {
        let v = stopping_rule(d, 1.0).unwrap();
        assert!(v > last);
        last = v;
        let scaled = stopping_rule(d, 3.5).unwrap();
        assert!((scaled - 3.5 * v).abs() <= 1e-15 * scaled);
    }
}
