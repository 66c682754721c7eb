//! Monte Carlo harness checks against closed-form values.

use aps_core::allocation::tracking_parameter;
use aps_core::simulator::{
    mse, run_experiment, run_experiment_with_workers, sample_local, CrnEnvironment, ExperimentConfig,
    LocalAveragingSpec, StrategyId,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn two_arm(n: u64, r: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(vec![vec![0.99, 0.01], vec![0.7, 0.3]], n);
    cfg.replications = r;
    cfg.seed = 5;
    cfg
}

#[test]
fn local_sampler_is_uniform_on_the_segment() {
    let spec = LocalAveragingSpec {
        radii: vec![0.1 * std::f64::consts::SQRT_2],
        seed: 0,
    };
    let p = vec![vec![0.5, 0.5]];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n)
        .map(|_| sample_local(&spec, &p, &mut rng).unwrap().pmfs[0][1])
        .collect();
    xs.sort_by(f64::total_cmp);
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = ((x - 0.4) / 0.2).clamp(0.0, 1.0);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic Kolmogorov-Smirnov critical value at the 1e-3 level.
    let critical = 1.949 / (n as f64).sqrt();
    assert!(d < critical, "D = {d}, critical {critical}");
    assert!(xs[0] >= 0.4 - 1e-12 && xs[n - 1] <= 0.6 + 1e-12);
}

#[test]
fn empirical_mse_matches_tracking_over_count() {
    let p = [0.7, 0.3];
    let t = 40u64;
    let runs = 20_000;
    let mut env = CrnEnvironment::new(&[p.to_vec()], 3, 0);
    let values: Vec<f64> = (0..runs)
        .map(|_| {
            let ones = (0..t).filter(|_| env.draw(0) == 1).count() as f64;
            let est = [1.0 - ones / t as f64, ones / t as f64];
            mse(&p, &est).unwrap()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / runs as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0)).sqrt();
    let expected = tracking_parameter(&p) / t as f64;
    assert!((mean - expected).abs() < 3.0 * sd / (runs as f64).sqrt(), "{mean} vs {expected}");
}

#[test]
fn reports_are_reproducible_and_independent_of_workers() {
    let mut cfg = two_arm(300, 24);
    cfg.strategies = StrategyId::ALL.to_vec();
    let a = run_experiment_with_workers(&cfg, 1).unwrap();
    let b = run_experiment_with_workers(&cfg, 3).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let mut other = cfg.clone();
    other.seed = 6;
    assert_ne!(run_experiment(&other).unwrap(), a);
}

#[test]
fn fixed_strategies_match_closed_forms() {
    let mut cfg = two_arm(2500, 400);
    cfg.strategies = vec![StrategyId::Oracle, StrategyId::Uniform];
    let report = run_experiment(&cfg).unwrap();
    let oracle = report.strategy("oracle").unwrap().last();
    assert!((oracle.oracle_value - 1.7592e-4).abs() < 1e-9);
    assert!(oracle.regret.abs() < 3.0 * oracle.regret_se, "{} ± {}", oracle.regret, oracle.regret_se);
    assert_eq!(report.strategy("oracle").unwrap().final_counts, vec![113.0, 2387.0]);

    let uniform = report.strategy("uniform").unwrap().last();
    assert!((uniform.mse[1] - 3.36e-4).abs() < 3.0 * uniform.mse_se[1]);
    assert!(uniform.mse[1] > oracle.oracle_value);
    for s in &report.strategies {
        for c in &s.checkpoints {
            assert!(c.mse.iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn csv_rows_cover_every_checkpoint() {
    let mut cfg = two_arm(100, 4);
    cfg.strategies = vec![StrategyId::BayesUcb, StrategyId::Uniform];
    let report = run_experiment(&cfg).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("strategy,n,metric,value\n"));
    let grid = cfg.checkpoint_grid();
    for n in &grid {
        assert!(text.contains(&format!("bayes-ucb,{n},regret,")));
        assert!(text.contains(&format!("bayes-ucb,{n},bound_arm1,")));
    }
    assert!(!text.contains("uniform,100,bound_arm0"));
    assert_eq!(report.strategy("bayes-ucb").unwrap().event_failure_rate, Some(0.0));
}

#[test]
fn local_averaging_runs_are_deterministic() {
    let mut cfg = two_arm(200, 6);
    cfg.local_averaging = Some(LocalAveragingSpec {
        radii: vec![0.005, 0.05],
        seed: 9,
    });
    let a = run_experiment(&cfg).unwrap();
    assert_eq!(a, run_experiment(&cfg).unwrap());
    let fixed = run_experiment(&two_arm(200, 6)).unwrap();
    assert_ne!(a.strategy("oracle").unwrap().last().oracle_value, fixed.strategy("oracle").unwrap().last().oracle_value);
}
