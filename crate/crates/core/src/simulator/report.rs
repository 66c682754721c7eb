use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ReplicationRecord};
use crate::allocation::{oracle_allocate, tracking_parameter};
use crate::error::Result;

/// Metrics at one checkpoint, averaged over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub n: u64,
    /// Optimal worst-arm MSE with known variances after `n` samples.
    pub oracle_value: f64,
    /// Worst per-arm mean MSE minus `oracle_value`.
    pub regret: f64,
    pub regret_se: f64,
    /// Mean over replications of the worst arm's MSE, a more pessimistic
    /// figure than the worst mean.
    pub mean_max_mse: f64,
    pub mean_max_mse_se: f64,
    pub mse: Vec<f64>,
    pub mse_se: Vec<f64>,
    pub counts: Vec<f64>,
    pub bounds: Option<Vec<f64>>,
    pub bounds_se: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub checkpoints: Vec<CheckpointStats>,
    /// Mean and standard error of the per-arm counts after the last sample.
    pub final_counts: Vec<f64>,
    pub final_counts_se: Vec<f64>,
    /// Fraction of replications in which some interval missed its true
    /// value; only reported for the interval-based strategy.
    pub event_failure_rate: Option<f64>,
}

impl StrategyReport {
    pub fn at(&self, n: u64) -> Option<&CheckpointStats> {
        self.checkpoints.iter().find(|c| c.n == n)
    }

    pub fn last(&self) -> &CheckpointStats {
        self.checkpoints.last().expect("reports have at least one checkpoint")
    }
}

/// Difference in final regret between two strategies, with a standard error
/// from the per-replication paired differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub first: String,
    pub second: String,
    pub n: u64,
    /// Regret of `first` minus regret of `second`.
    pub difference: f64,
    pub se: f64,
}

impl PairedComparison {
    pub fn z_score(&self) -> f64 {
        if self.se > 0.0 {
            self.difference / self.se
        } else if self.difference == 0.0 {
            0.0
        } else {
            self.difference.signum() * f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub budget: u64,
    pub replications: usize,
    pub seed: u64,
    /// Real-valued known-variance allocation for the configured pmfs.
    pub oracle_allocation: Vec<f64>,
    pub strategies: Vec<StrategyReport>,
    pub paired: Vec<PairedComparison>,
}

fn mean_se(values: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

impl RegretReport {
    pub(crate) fn aggregate(cfg: &ExperimentConfig, grid: &[u64], records: &[Vec<ReplicationRecord>]) -> Self {
        let k = cfg.arms();
        let mut strategies = Vec::with_capacity(cfg.strategies.len());
        // Arm with the largest mean MSE at the last checkpoint, per strategy.
        let mut worst_arm = Vec::with_capacity(cfg.strategies.len());
        for (s, id) in cfg.strategies.iter().enumerate() {
            let runs = || records.iter().map(move |r| &r[s]);
            let mut checkpoints = Vec::with_capacity(grid.len());
            for (c, &n) in grid.iter().enumerate() {
                let per_arm: Vec<(f64, f64)> = (0..k).map(|a| mean_se(runs().map(|r| r.mse[c][a]))).collect();
                let mse: Vec<f64> = per_arm.iter().map(|v| v.0).collect();
                let mse_se: Vec<f64> = per_arm.iter().map(|v| v.1).collect();
                let worst = argmax(&mse);
                let (oracle_value, _) = mean_se(runs().map(|r| r.oracle_value[c]));
                let (mean_max_mse, mean_max_mse_se) =
                    mean_se(runs().map(|r| r.mse[c].iter().cloned().fold(f64::NEG_INFINITY, f64::max)));
                let counts = (0..k).map(|a| mean_se(runs().map(|r| r.counts[c][a] as f64)).0).collect();
                let has_bounds = records[0][s].bounds.is_some();
                let (bounds, bounds_se) = if has_bounds {
                    let b: Vec<(f64, f64)> = (0..k)
                        .map(|a| mean_se(runs().map(|r| r.bounds.as_ref().map_or(f64::NAN, |b| b[c][a]))))
                        .collect();
                    (Some(b.iter().map(|v| v.0).collect()), Some(b.iter().map(|v| v.1).collect()))
                } else {
                    (None, None)
                };
                checkpoints.push(CheckpointStats {
                    n,
                    oracle_value,
                    regret: mse[worst] - oracle_value,
                    regret_se: mse_se[worst],
                    mean_max_mse,
                    mean_max_mse_se,
                    mse,
                    mse_se,
                    counts,
                    bounds,
                    bounds_se,
                });
            }
            worst_arm.push(argmax(&checkpoints.last().expect("non-empty grid").mse));
            let last = grid.len() - 1;
            let finals: Vec<(f64, f64)> = (0..k).map(|a| mean_se(runs().map(|r| r.counts[last][a] as f64))).collect();
            let events: Vec<bool> = runs().filter_map(|r| r.event.map(|e| e.holds())).collect();
            let event_failure_rate =
                (!events.is_empty()).then(|| events.iter().filter(|h| !**h).count() as f64 / events.len() as f64);
            strategies.push(StrategyReport {
                strategy: id.name().to_string(),
                checkpoints,
                final_counts: finals.iter().map(|v| v.0).collect(),
                final_counts_se: finals.iter().map(|v| v.1).collect(),
                event_failure_rate,
            });
        }

        let last = grid.len() - 1;
        let mut paired = Vec::new();
        for a in 0..cfg.strategies.len() {
            for b in a + 1..cfg.strategies.len() {
                let diffs = records
                    .iter()
                    .map(|r| r[a].mse[last][worst_arm[a]] - r[b].mse[last][worst_arm[b]]);
                let (difference, se) = mean_se(diffs);
                paired.push(PairedComparison {
                    first: cfg.strategies[a].name().to_string(),
                    second: cfg.strategies[b].name().to_string(),
                    n: grid[last],
                    difference,
                    se,
                });
            }
        }

        let c: Vec<f64> = cfg.pmfs.iter().map(|p| tracking_parameter(p)).collect();
        let oracle_allocation = oracle_allocate(&c, cfg.budget).map(|o| o.real).unwrap_or_default();
        RegretReport {
            budget: cfg.budget,
            replications: cfg.replications,
            seed: cfg.seed,
            oracle_allocation,
            strategies,
            paired,
        }
    }

    pub fn strategy(&self, name: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.strategy == name)
    }

    pub fn comparison(&self, first: &str, second: &str) -> Option<PairedComparison> {
        self.paired.iter().find_map(|p| {
            if p.first == first && p.second == second {
                Some(p.clone())
            } else if p.first == second && p.second == first {
                Some(PairedComparison {
                    first: first.to_string(),
                    second: second.to_string(),
                    n: p.n,
                    difference: -p.difference,
                    se: p.se,
                })
            } else {
                None
            }
        })
    }

    /// Flat `(strategy, n, metric, value)` rows.
    pub fn rows(&self) -> Vec<(String, u64, String, f64)> {
        let mut rows = Vec::new();
        for s in &self.strategies {
            for c in &s.checkpoints {
                let mut push = |metric: String, value: f64| rows.push((s.strategy.clone(), c.n, metric, value));
                push("oracle_value".into(), c.oracle_value);
                push("regret".into(), c.regret);
                push("regret_se".into(), c.regret_se);
                push("mean_max_mse".into(), c.mean_max_mse);
                push("mean_max_mse_se".into(), c.mean_max_mse_se);
                for (k, v) in c.mse.iter().enumerate() {
                    push(format!("mse_arm{k}"), *v);
                }
                for (k, v) in c.counts.iter().enumerate() {
                    push(format!("count_arm{k}"), *v);
                }
                if let Some(b) = &c.bounds {
                    for (k, v) in b.iter().enumerate() {
                        push(format!("bound_arm{k}"), *v);
                    }
                }
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| crate::Error::Io(e.to_string());
        w.write_record(["strategy", "n", "metric", "value"]).map_err(io)?;
        for (s, n, metric, value) in self.rows() {
            w.write_record([s, n.to_string(), metric, format!("{value:e}")]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}
