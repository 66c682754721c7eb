//! Sample allocation: the known-variance oracle, arm selection for the
//! adaptive strategies, and the batch allocator for surveys with an
//! overall-estimate target.

mod batch;
mod strategy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{
    batch_allocate, check_feasibility, solve_min_lambda, BatchAllocation, BatchConstraintSpec,
    FeasibilityVerdict,
};
pub use strategy::{
    run_bayes_ucb, run_strategy, ArmSource, RunDiagnostics, RunStatus, RunSummary, SamplerConfig,
    StepOutcome, Strategy, Trajectory,
};

/// Per-arm MSE of the empirical estimator after `count` samples when the
/// arm's tracking parameter is `c`: `c / count`, infinite at `count = 0`.
///
/// The infinite value at zero samples makes every arm get sampled once
/// before any ratio comparison happens.
pub fn tracking(c: f64, count: f64) -> f64 {
    if count <= 0.0 {
        f64::INFINITY
    } else {
        c / count
    }
}

/// Tracking parameter `sum_l p_l (1 - p_l)` of a pmf.
pub fn tracking_parameter(pmf: &[f64]) -> f64 {
    pmf.iter().map(|p| p * (1.0 - p)).sum()
}

/// Arm maximizing `tracking(bounds[k], counts[k])`; ties go to the lowest
/// index.
pub fn select_arm(bounds: &[f64], counts: &[u64]) -> Result<usize> {
    Error::check_len("counts", bounds.len(), counts.len())?;
    if bounds.is_empty() {
        return Err(Error::invalid("bounds", "need at least one arm"));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, (&u, &t)) in bounds.iter().zip(counts).enumerate() {
        let score = tracking(u, t as f64);
        if score > best_score {
            best = k;
            best_score = score;
        }
    }
    Ok(best)
}

/// Rounds non-negative reals to integers summing to `total`: floors first,
/// then one extra unit to the largest fractional parts (lowest index on
/// ties).
pub fn largest_remainder(values: &[f64], total: u64) -> Vec<u64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut rounded: Vec<u64> = values.iter().map(|v| v.max(0.0).floor() as u64).collect();
    let assigned: u64 = rounded.iter().sum();
    if assigned > total {
        // Only reachable when the inputs overshoot `total`; trim from the
        // smallest remainders.
        let mut excess = assigned - total;
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| rounded[j].cmp(&rounded[i]).then(i.cmp(&j)));
        for &k in order.iter().cycle() {
            if excess == 0 {
                break;
            }
            if rounded[k] > 0 {
                rounded[k] -= 1;
                excess -= 1;
            }
        }
        return rounded;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    let frac = |k: usize| values[k].max(0.0) - values[k].max(0.0).floor();
    order.sort_by(|&i, &j| frac(j).total_cmp(&frac(i)).then(i.cmp(&j)));
    let remaining = total - assigned;
    for &k in order.iter().cycle().take(remaining as usize) {
        rounded[k] += 1;
    }
    rounded
}

/// Closed-form solution of the min-max allocation with known variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAllocation {
    /// Real-valued allocation `c_k N / sum_i c_i`.
    pub real: Vec<f64>,
    /// Optimum `sum_k c_k / N`.
    pub value: f64,
    /// Largest-remainder rounding summing to `N`.
    pub rounded: Vec<u64>,
    /// Set when every tracking parameter was zero and the allocation fell
    /// back to uniform.
    pub degenerate: bool,
}

/// Solves the known-variance allocation problem for budget `budget`.
pub fn oracle_allocate(c: &[f64], budget: u64) -> Result<OracleAllocation> {
    if c.is_empty() {
        return Err(Error::invalid("c", "need at least one arm"));
    }
    if let Some(bad) = c.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("c", format!("tracking parameters must be non-negative, got {bad}")));
    }
    if budget == 0 {
        return Err(Error::invalid("budget", "need a positive budget"));
    }
    let n = budget as f64;
    let sum: f64 = c.iter().sum();
    let degenerate = sum == 0.0;
    let real: Vec<f64> = if degenerate {
        vec![n / c.len() as f64; c.len()]
    } else {
        c.iter().map(|v| v * n / sum).collect()
    };
    let rounded = largest_remainder(&real, budget);
    Ok(OracleAllocation {
        real,
        value: sum / n,
        rounded,
        degenerate,
    })
}
