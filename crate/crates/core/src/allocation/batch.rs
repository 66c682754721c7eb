//! Batch allocation balancing per-arm MSE targets against the MSE of a
//! population-weighted overall estimate.
//!
//! For a batch of `B` samples the allocator solves
//!
//! ```text
//! min lambda  s.t.  u_k / (T_k + tau_k)               <= theta_k lambda   (each k)
//!                   sum_k w_k^2 u_k / (T_k + tau_k)   <= theta_0 lambda
//!                   sum_k tau_k = B,  tau >= 0
//! ```
//!
//! Feasibility is monotone in `lambda`, so the outer loop bisects on it.
//! For a fixed `lambda` the per-arm targets become floors on `tau`, and the
//! budget left over is spent minimizing the overall term: its KKT
//! conditions equalize `w_k^2 u_k / (T_k + tau_k)^2` over the arms above
//! their floors (water-filling).

use serde::{Deserialize, Serialize};

use super::largest_remainder;
use crate::error::{Error, Result};

const WEIGHT_TOLERANCE: f64 = 1e-9;
const LAMBDA_RTOL: f64 = 1e-12;
const BINDING_RTOL: f64 = 1e-6;
/// Slack on the `lambda <= 1` feasibility verdict, absorbing bisection error.
const VERDICT_TOLERANCE: f64 = 1e-9;

/// Accuracy targets, population weights, and batch size.
///
/// A target of `None` leaves that constraint out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConstraintSpec {
    pub targets: Vec<Option<f64>>,
    pub overall_target: Option<f64>,
    pub weights: Vec<f64>,
    pub batch_size: u64,
}

impl BatchConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::invalid("weights", "need at least one arm"));
        }
        Error::check_len("targets", k, self.targets.len())?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "need a positive batch size"));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights", format!("weights must be non-negative, got {w}")));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::invalid("weights", format!("weights must sum to 1, got {total}")));
        }
        for t in self.targets.iter().chain(std::iter::once(&self.overall_target)).flatten() {
            if !(*t > 0.0 && t.is_finite()) {
                return Err(Error::invalid("targets", format!("targets must be positive and finite, got {t}")));
            }
        }
        if self.targets.iter().all(Option::is_none) && self.overall_target.is_none() {
            return Err(Error::invalid("targets", "at least one target must be set"));
        }
        Ok(())
    }

    pub fn arms(&self) -> usize {
        self.weights.len()
    }
}

/// Solution of the batch problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchAllocation {
    /// Real-valued allocation, summing to the batch size.
    pub tau: Vec<f64>,
    /// Largest-remainder rounding of `tau`.
    pub rounded: Vec<u64>,
    /// Achieved objective at `tau`.
    pub lambda: f64,
    /// Per-arm constraints holding with equality at the solution.
    pub binding: Vec<bool>,
    pub overall_binding: bool,
}

/// Normalized constraint values `u_k / (theta_k (T_k + tau_k))` and
/// `sum_k w_k^2 u_k / (theta_0 (T_k + tau_k))`; `lambda` is their maximum.
fn constraint_levels(
    u: &[f64],
    counts: &[f64],
    tau: &[f64],
    spec: &BatchConstraintSpec,
) -> (Vec<f64>, f64) {
    let per_arm = (0..u.len())
        .map(|k| match spec.targets[k] {
            Some(theta) if u[k] > 0.0 => u[k] / (theta * (counts[k] + tau[k])),
            _ => 0.0,
        })
        .collect();
    let overall = match spec.overall_target {
        Some(theta) => overall_mse(u, counts, tau, &spec.weights) / theta,
        None => 0.0,
    };
    (per_arm, overall)
}

fn overall_mse(u: &[f64], counts: &[f64], tau: &[f64], weights: &[f64]) -> f64 {
    (0..u.len())
        .map(|k| {
            let num = weights[k] * weights[k] * u[k];
            if num == 0.0 {
                0.0
            } else {
                num / (counts[k] + tau[k])
            }
        })
        .sum()
}

/// Spends `budget` on top of `floors`, minimizing the weighted overall MSE.
fn water_fill(u: &[f64], counts: &[f64], weights: &[f64], floors: &[f64], budget: f64) -> Vec<f64> {
    let k = u.len();
    let used: f64 = floors.iter().sum();
    if used >= budget {
        return floors.to_vec();
    }
    let gain: Vec<f64> = (0..k).map(|i| weights[i] * u[i].sqrt()).collect();
    if gain.iter().all(|g| *g == 0.0) {
        let extra = (budget - used) / k as f64;
        return floors.iter().map(|f| f + extra).collect();
    }
    let fill = |s: f64| -> Vec<f64> { (0..k).map(|i| floors[i].max(s * gain[i] - counts[i])).collect() };
    let total = |s: f64| fill(s).iter().sum::<f64>();

    let mut hi = 1.0;
    while total(hi) < budget {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    // Solve the level exactly on the arms above their floors.
    let level = 0.5 * (lo + hi);
    let active: Vec<usize> = (0..k).filter(|&i| gain[i] > 0.0 && level * gain[i] - counts[i] > floors[i]).collect();
    if active.is_empty() {
        return fill(hi);
    }
    let pinned: f64 = (0..k).filter(|i| !active.contains(i)).map(|i| floors[i]).sum();
    let g: f64 = active.iter().map(|&i| gain[i]).sum();
    let t: f64 = active.iter().map(|&i| counts[i]).sum();
    let exact = (budget - pinned + t) / g;
    let tau = fill(exact);
    if (tau.iter().sum::<f64>() - budget).abs() <= 1e-9 * budget.max(1.0) {
        tau
    } else {
        fill(hi)
    }
}

/// The allocation at a fixed `lambda`, or `None` when no allocation of the
/// budget meets every constraint at that level.
fn allocation_at(
    lambda: f64,
    u: &[f64],
    counts: &[f64],
    spec: &BatchConstraintSpec,
    budget: f64,
) -> Option<Vec<f64>> {
    let floors: Vec<f64> = (0..u.len())
        .map(|k| match spec.targets[k] {
            Some(theta) if u[k] > 0.0 => (u[k] / (theta * lambda) - counts[k]).max(0.0),
            _ => 0.0,
        })
        .collect();
    if floors.iter().sum::<f64>() > budget {
        return None;
    }
    let tau = water_fill(u, counts, &spec.weights, &floors, budget);
    if let Some(theta) = spec.overall_target {
        if overall_mse(u, counts, &tau, &spec.weights) > theta * lambda {
            return None;
        }
    }
    Some(tau)
}

/// Minimizes `lambda` for real-valued prior counts `counts` and a real
/// budget. Shared by the batch allocator and the feasibility check.
pub fn solve_min_lambda(
    u: &[f64],
    counts: &[f64],
    spec: &BatchConstraintSpec,
    budget: f64,
) -> Result<(Vec<f64>, f64)> {
    spec.validate()?;
    let k = spec.arms();
    Error::check_len("bounds", k, u.len())?;
    Error::check_len("counts", k, counts.len())?;
    if let Some(bad) = u.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("bounds", format!("variance bounds must be non-negative, got {bad}")));
    }
    if let Some(bad) = counts.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("counts", format!("counts must be non-negative, got {bad}")));
    }
    if !(budget > 0.0) {
        return Err(Error::invalid("budget", "need a positive budget"));
    }

    let uniform = vec![budget / k as f64; k];
    let (per_arm, overall) = constraint_levels(u, counts, &uniform, spec);
    let mut hi = per_arm.iter().cloned().fold(overall, f64::max);
    if hi == 0.0 {
        // Nothing is constrained by positive variance: any split is optimal.
        let floors = vec![0.0; k];
        return Ok((water_fill(u, counts, &spec.weights, &floors, budget), 0.0));
    }
    let mut best = allocation_at(hi, u, counts, spec, budget).unwrap_or(uniform);
    let mut lo = 0.0;
    for _ in 0..400 {
        if hi - lo <= LAMBDA_RTOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match allocation_at(mid, u, counts, spec, budget) {
            Some(tau) => {
                hi = mid;
                best = tau;
            }
            None => lo = mid,
        }
    }
    let (per_arm, overall) = constraint_levels(u, counts, &best, spec);
    let achieved = per_arm.iter().cloned().fold(overall, f64::max);
    Ok((best, achieved))
}

/// Allocates one batch of `spec.batch_size` samples given current variance
/// bounds `u` and counts `counts`.
pub fn batch_allocate(u: &[f64], counts: &[u64], spec: &BatchConstraintSpec) -> Result<BatchAllocation> {
    let counts_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let budget = spec.batch_size as f64;
    let (tau, lambda) = solve_min_lambda(u, &counts_f, spec, budget)?;
    let rounded = largest_remainder(&tau, spec.batch_size);
    let (per_arm, overall) = constraint_levels(u, &counts_f, &tau, spec);
    let binding = per_arm
        .iter()
        .map(|&v| lambda > 0.0 && v >= lambda * (1.0 - BINDING_RTOL))
        .collect();
    let overall_binding = lambda > 0.0 && overall >= lambda * (1.0 - BINDING_RTOL);
    Ok(BatchAllocation {
        tau,
        rounded,
        lambda,
        binding,
        overall_binding,
    })
}

/// Verdict on whether the targets are achievable with a budget of `N`
/// samples when the tracking parameters `c` are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub lambda: f64,
    pub feasible: bool,
    pub allocation: Vec<f64>,
    pub rounded: Vec<u64>,
}

/// Solves the known-variance version of the batch problem from zero counts
/// with the whole budget; the targets are achievable iff the optimum is at
/// most one.
pub fn check_feasibility(spec: &BatchConstraintSpec, c: &[f64], budget: u64) -> Result<FeasibilityVerdict> {
    if budget == 0 {
        return Err(Error::invalid("budget", "need a positive budget"));
    }
    let zeros = vec![0.0; c.len()];
    let (allocation, lambda) = solve_min_lambda(c, &zeros, spec, budget as f64)?;
    let rounded = largest_remainder(&allocation, budget);
    Ok(FeasibilityVerdict {
        lambda,
        feasible: lambda <= 1.0 + VERDICT_TOLERANCE,
        allocation,
        rounded,
    })
}
