//! Monte Carlo harness comparing sampling strategies on known pmfs.

mod local;
mod report;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{largest_remainder, oracle_allocate, run_strategy, tracking_parameter, SamplerConfig, Strategy};
use crate::bounds::{BaselineKind, DeltaSchedule, IntervalSet};
use crate::error::{Error, Result};
use crate::posterior::PriorSpec;

pub use local::{sample_local, LocalAveragingSpec, LocalSample, MIN_ACCEPTANCE};
pub use report::{CheckpointStats, PairedComparison, RegretReport, StrategyReport};

const SIMPLEX_TOLERANCE: f64 = 1e-12;
const DEFAULT_CHECKPOINTS: usize = 50;
/// Stream offset separating perturbation draws from outcome draws.
const LOCAL_STREAM: u64 = 1 << 63;

/// Squared l2 distance between two pmfs.
pub fn mse(p: &[f64], estimate: &[f64]) -> Result<f64> {
    Error::check_len("estimate", p.len(), estimate.len())?;
    Ok(p.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyId {
    BayesUcb,
    HoeffdingUcb,
    EmpiricalBernstein,
    Oracle,
    Uniform,
}

impl StrategyId {
    pub const ALL: [StrategyId; 5] = [
        StrategyId::BayesUcb,
        StrategyId::HoeffdingUcb,
        StrategyId::EmpiricalBernstein,
        StrategyId::Oracle,
        StrategyId::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::BayesUcb => "bayes-ucb",
            StrategyId::HoeffdingUcb => "hoeffding-ucb",
            StrategyId::EmpiricalBernstein => "empirical-bernstein",
            StrategyId::Oracle => "oracle",
            StrategyId::Uniform => "uniform",
        }
    }

    fn strategy(self, pmfs: &[Vec<f64>], budget: u64) -> Result<Strategy> {
        Ok(match self {
            StrategyId::BayesUcb => Strategy::BayesUcb,
            StrategyId::HoeffdingUcb => Strategy::Baseline { bound: BaselineKind::HoeffdingStyle },
            StrategyId::EmpiricalBernstein => Strategy::Baseline { bound: BaselineKind::EmpiricalBernstein },
            StrategyId::Oracle => {
                let c: Vec<f64> = pmfs.iter().map(|p| tracking_parameter(p)).collect();
                Strategy::Fixed { allocation: oracle_allocate(&c, budget)?.rounded }
            }
            StrategyId::Uniform => Strategy::Fixed {
                allocation: largest_remainder(&vec![budget as f64 / pmfs.len() as f64; pmfs.len()], budget),
            },
        })
    }
}

impl std::fmt::Display for StrategyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_replications() -> usize {
    2000
}

fn default_strategies() -> Vec<StrategyId> {
    vec![StrategyId::BayesUcb, StrategyId::HoeffdingUcb, StrategyId::Oracle, StrategyId::Uniform]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// True pmf of each arm, one row per arm.
    pub pmfs: Vec<Vec<f64>>,
    pub budget: u64,
    /// Confidence scale; `1 / budget` when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyId>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Dirichlet prior; all-ones when absent.
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub local_averaging: Option<LocalAveragingSpec>,
    /// Steps at which metrics are recorded; log-spaced when absent.
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
}

impl ExperimentConfig {
    pub fn new(pmfs: Vec<Vec<f64>>, budget: u64) -> Self {
        Self {
            pmfs,
            budget,
            eta: None,
            strategies: default_strategies(),
            replications: default_replications(),
            seed: 0,
            prior: None,
            local_averaging: None,
            checkpoints: None,
        }
    }

    pub fn arms(&self) -> usize {
        self.pmfs.len()
    }

    pub fn symbols(&self) -> usize {
        self.pmfs.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pmfs.is_empty() {
            return Err(Error::invalid("pmfs", "need at least one arm"));
        }
        let l = self.symbols();
        if l < 2 {
            return Err(Error::invalid("pmfs", "need at least two symbols"));
        }
        for (k, row) in self.pmfs.iter().enumerate() {
            Error::check_len("pmfs", l, row.len())?;
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::invalid("pmfs", format!("row {k} is not a pmf (sum {sum})")));
            }
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget", "need a positive budget"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications", "need at least one replication"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("strategies", "need at least one strategy"));
        }
        if self.strategies.contains(&StrategyId::EmpiricalBernstein) && l != 2 {
            return Err(Error::Unsupported("empirical-bernstein needs two symbols".into()));
        }
        if let Some(prior) = &self.prior {
            Error::check_len("prior.arms", self.arms(), prior.arms())?;
            Error::check_len("prior.symbols", l, prior.symbols())?;
        }
        if let Some(spec) = &self.local_averaging {
            Error::check_len("local_averaging.radii", self.arms(), spec.radii.len())?;
        }
        if let Some(points) = &self.checkpoints {
            if points.is_empty() || points.iter().any(|&n| n == 0 || n > self.budget) {
                return Err(Error::invalid("checkpoints", "checkpoints must lie in 1..=budget"));
            }
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<DeltaSchedule> {
        let eta = self.eta.unwrap_or(1.0 / self.budget as f64);
        DeltaSchedule::new(self.arms(), self.symbols(), self.budget, eta)
    }

    fn prior_spec(&self) -> Result<PriorSpec> {
        match &self.prior {
            Some(p) => Ok(p.clone()),
            None => PriorSpec::uniform(self.arms(), self.symbols()),
        }
    }

    /// Sorted, de-duplicated checkpoints, always ending at the budget.
    pub fn checkpoint_grid(&self) -> Vec<u64> {
        let mut grid = match &self.checkpoints {
            Some(points) => points.clone(),
            None => log_grid(self.arms() as u64, self.budget, DEFAULT_CHECKPOINTS),
        };
        grid.push(self.budget);
        grid.sort_unstable();
        grid.dedup();
        grid
    }
}

/// `count` log-spaced integers from `start` to `end` inclusive, duplicates
/// removed.
pub fn log_grid(start: u64, end: u64, count: usize) -> Vec<u64> {
    let start = start.clamp(1, end);
    if count <= 1 || start == end {
        return vec![end];
    }
    let (a, b) = ((start as f64).ln(), (end as f64).ln());
    let mut grid: Vec<u64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as u64)
        .map(|n| n.clamp(start, end))
        .collect();
    grid.dedup();
    grid
}

/// Sticky record of whether every true probability has stayed inside its
/// interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTracker {
    /// First step at which some interval missed its true value.
    pub violated_at: Option<u64>,
}

impl EventTracker {
    pub fn holds(&self) -> bool {
        self.violated_at.is_none()
    }
}

/// Updates `tracker` with the intervals in force at `step`.
pub fn track_event(tracker: EventTracker, intervals: &IntervalSet, pmfs: &[Vec<f64>], step: u64) -> EventTracker {
    if tracker.violated_at.is_some() || intervals.contains(pmfs) {
        tracker
    } else {
        EventTracker { violated_at: Some(step) }
    }
}

/// Outcome source replaying per-arm random streams, so that the `j`-th draw
/// from an arm is the same under every strategy.
#[derive(Debug, Clone)]
pub struct CrnEnvironment {
    streams: Vec<ChaCha8Rng>,
    cumulative: Vec<Vec<f64>>,
}

impl CrnEnvironment {
    pub fn new(pmfs: &[Vec<f64>], seed: u64, replication: u64) -> Self {
        let streams = (0..pmfs.len() as u64)
            .map(|arm| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((replication << 20) | arm);
                rng
            })
            .collect();
        let cumulative = pmfs
            .iter()
            .map(|p| {
                p.iter()
                    .scan(0.0, |acc, v| {
                        *acc += v;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        Self { streams, cumulative }
    }

    /// Draws an outcome from `arm`.
    pub fn draw(&mut self, arm: usize) -> usize {
        let u: f64 = self.streams[arm].random();
        let cdf = &self.cumulative[arm];
        cdf.iter().position(|&c| u < c).unwrap_or_else(|| {
            // Rounding left the last cumulative value below one; fall back to
            // the last symbol with positive mass.
            cdf.windows(2).rposition(|w| w[1] > w[0]).map_or(0, |i| i + 1)
        })
    }
}

impl crate::allocation::ArmSource for CrnEnvironment {
    fn sample(&mut self, arm: usize) -> Result<usize> {
        Ok(self.draw(arm))
    }
}

/// Per-strategy measurements from one replication.
#[derive(Debug, Clone)]
pub(crate) struct ReplicationRecord {
    /// `mse[c][k]` at checkpoint `c`.
    pub mse: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
    pub bounds: Option<Vec<Vec<f64>>>,
    pub event: Option<EventTracker>,
    pub oracle_value: Vec<f64>,
}

fn replicate(
    cfg: &ExperimentConfig,
    prior: &PriorSpec,
    schedule: &DeltaSchedule,
    grid: &[u64],
    replication: u64,
) -> Result<Vec<ReplicationRecord>> {
    let pmfs = match &cfg.local_averaging {
        Some(spec) => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(LOCAL_STREAM | replication);
            sample_local(spec, &cfg.pmfs, &mut rng)?.pmfs
        }
        None => cfg.pmfs.clone(),
    };
    let c_total: f64 = pmfs.iter().map(|p| tracking_parameter(p)).sum();
    let oracle_value: Vec<f64> = grid.iter().map(|&n| c_total / n as f64).collect();
    let sampler = SamplerConfig::new(prior.clone(), *schedule, cfg.budget);
    let (k, l) = (cfg.arms(), cfg.symbols());

    cfg.strategies
        .iter()
        .map(|id| {
            let strategy = id.strategy(&pmfs, cfg.budget)?;
            let mut env = CrnEnvironment::new(&pmfs, cfg.seed, replication);
            let mut next = 0;
            let mut mse_rows = Vec::with_capacity(grid.len());
            let mut count_rows = Vec::with_capacity(grid.len());
            let mut bound_rows = Vec::with_capacity(grid.len());
            let mut event = EventTracker::default();
            let mut err = None;
            let summary = run_strategy(&strategy, &sampler, &mut env, |out| {
                if let Some(intervals) = out.intervals {
                    event = track_event(event, intervals, &pmfs, out.step);
                }
                if next < grid.len() && grid[next] == out.step {
                    next += 1;
                    let row: Result<Vec<f64>> = (0..k)
                        .map(|arm| {
                            let estimate = out.state.empirical_pmf(arm).unwrap_or_else(|| vec![1.0 / l as f64; l]);
                            mse(&pmfs[arm], &estimate)
                        })
                        .collect();
                    match row {
                        Ok(row) => mse_rows.push(row),
                        Err(e) => err = Some(e),
                    }
                    count_rows.push(out.state.counts().to_vec());
                    if let Some(b) = out.bounds {
                        bound_rows.push(b.to_vec());
                    }
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            if let crate::allocation::RunStatus::Truncated { message, .. } = summary.status {
                return Err(Error::Environment(message));
            }
            Ok(ReplicationRecord {
                mse: mse_rows,
                counts: count_rows,
                bounds: (!bound_rows.is_empty()).then_some(bound_rows),
                event: strategy_uses_intervals(*id).then_some(event),
                oracle_value: oracle_value.clone(),
            })
        })
        .collect()
}

fn strategy_uses_intervals(id: StrategyId) -> bool {
    id == StrategyId::BayesUcb
}

/// Runs every strategy on every replication and aggregates the results.
///
/// Replications run on the current rayon pool; the report does not depend on
/// the number of threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RegretReport> {
    cfg.validate()?;
    let prior = cfg.prior_spec()?;
    let schedule = cfg.schedule()?;
    let grid = cfg.checkpoint_grid();
    let records: Vec<Vec<ReplicationRecord>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| replicate(cfg, &prior, &schedule, &grid, r))
        .collect::<Result<_>>()?;
    Ok(RegretReport::aggregate(cfg, &grid, &records))
}

/// [`run_experiment`] on a dedicated pool of `workers` threads.
pub fn run_experiment_with_workers(cfg: &ExperimentConfig, workers: usize) -> Result<RegretReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    pool.install(|| run_experiment(cfg))
}
