use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{overall_mse, SurveyDataset};
use crate::allocation::{batch_allocate, check_feasibility, oracle_allocate, BatchConstraintSpec};
use crate::bounds::{refresh_arm, variance_ucb, DeltaSchedule, IntervalSet};
use crate::error::{Error, Result};
use crate::posterior::{PosteriorState, PriorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub batch_size: u64,
    /// Monte Carlo replays of the adaptive collection.
    pub replications: usize,
    pub seed: u64,
    /// Confidence scale for the replay's intervals; `1 / N` when absent.
    pub eta: Option<f64>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            batch_size: 100,
            replications: 200,
            seed: 0,
            eta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub category: String,
    pub weight: f64,
    pub positivity: f64,
    pub actual: u64,
    /// Known-variance allocation ignoring the overall estimate.
    pub oracle: u64,
    pub oracle_real: f64,
    /// Known-variance allocation under the per-category and overall targets.
    pub constrained: u64,
    pub constrained_real: f64,
    /// Mean final count over adaptive replays.
    pub adaptive: f64,
    pub adaptive_se: f64,
    /// `|adaptive - constrained_real| / constrained_real`.
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub budget: u64,
    pub batch_size: u64,
    pub replications: usize,
    pub targets: Vec<f64>,
    pub overall_target: f64,
    /// Optimal normalized level of the constrained problem; the targets are
    /// achievable iff it is at most one.
    pub constrained_lambda: f64,
    pub feasible: bool,
    pub rows: Vec<ComparisonRow>,
    /// Plug-in overall MSE under the actual, oracle, constrained, and mean
    /// adaptive allocations.
    pub overall_mse: [f64; 4],
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "category",
            "weight",
            "positivity",
            "actual",
            "oracle",
            "constrained",
            "adaptive",
            "adaptive_se",
            "relative_gap",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.category.clone(),
                r.weight.to_string(),
                r.positivity.to_string(),
                r.actual.to_string(),
                r.oracle.to_string(),
                r.constrained.to_string(),
                format!("{:.3}", r.adaptive),
                format!("{:.3}", r.adaptive_se),
                format!("{:.4}", r.relative_gap),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn max_relative_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.relative_gap).fold(0.0, f64::max)
    }
}

fn constraint_spec(ds: &SurveyDataset, batch_size: u64) -> BatchConstraintSpec {
    let (targets, overall) = ds.resolved_targets();
    BatchConstraintSpec {
        targets: targets.into_iter().map(Some).collect(),
        overall_target: Some(overall),
        weights: ds.weights(),
        batch_size,
    }
}

/// Simulates batched collection of the full budget against Bernoulli
/// categories with the observed positivities; returns final counts.
///
/// Before each batch the posterior intervals are refreshed once and the
/// batch is split by [`batch_allocate`] on the resulting variance bounds.
pub fn replay_adaptive(ds: &SurveyDataset, options: &CompareOptions, replication: u64) -> Result<Vec<u64>> {
    let k = ds.categories.len();
    let n = ds.budget();
    let schedule = match options.eta {
        Some(eta) => DeltaSchedule::new(k, 2, n, eta)?,
        None => DeltaSchedule::with_default_eta(k, 2, n)?,
    };
    let positivity: Vec<f64> = ds.categories.iter().map(|c| c.positivity().unwrap_or(0.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(replication);

    let mut state = PosteriorState::new(&PriorSpec::uniform(k, 2)?);
    let mut intervals = IntervalSet::full(k, 2);
    let mut spec = constraint_spec(ds, options.batch_size);
    let mut spent = 0;
    while spent < n {
        spec.batch_size = options.batch_size.min(n - spent);
        let mut bounds = Vec::with_capacity(k);
        for arm in 0..k {
            refresh_arm(&mut intervals, &state, &schedule, arm)?;
            bounds.push(match variance_ucb(&intervals, arm) {
                Ok(v) => v.value,
                Err(Error::Infeasible { .. }) => 0.5,
                Err(e) => return Err(e),
            });
        }
        let batch = batch_allocate(&bounds, state.counts(), &spec)?;
        for (arm, &size) in batch.rounded.iter().enumerate() {
            if size == 0 {
                continue;
            }
            let positives = Binomial::new(size, positivity[arm])
                .map_err(|e| Error::invalid("positivity", e.to_string()))?
                .sample(&mut rng);
            state.observe_counts(arm, &[size - positives, positives])?;
        }
        spent += spec.batch_size;
    }
    Ok(state.counts().to_vec())
}

/// Compares the collected allocation with the known-variance oracle, the
/// constrained oracle, and the mean adaptive replay, all at the same budget.
pub fn compare_allocations(ds: &SurveyDataset, options: &CompareOptions) -> Result<ComparisonTable> {
    ds.validate()?;
    if options.batch_size == 0 {
        return Err(Error::invalid("batch_size", "need a positive batch size"));
    }
    if options.replications == 0 {
        return Err(Error::invalid("replications", "need at least one replication"));
    }
    let n = ds.budget();
    if n == 0 {
        return Err(Error::invalid("budget", "dataset has no samples and no budget"));
    }
    let c = ds.plug_in_tracking();
    let weights = ds.weights();
    let oracle = oracle_allocate(&c, n)?;
    let spec = constraint_spec(ds, 1);
    let verdict = check_feasibility(&spec, &c, n)?;

    let replays: Vec<Vec<u64>> = (0..options.replications as u64)
        .into_par_iter()
        .map(|r| replay_adaptive(ds, options, r))
        .collect::<Result<_>>()?;
    let r = replays.len() as f64;

    let mut rows = Vec::with_capacity(ds.categories.len());
    let mut adaptive_mean = Vec::with_capacity(ds.categories.len());
    for (k, cat) in ds.categories.iter().enumerate() {
        let mean = replays.iter().map(|t| t[k] as f64).sum::<f64>() / r;
        let var = if r > 1.0 {
            replays.iter().map(|t| (t[k] as f64 - mean).powi(2)).sum::<f64>() / (r - 1.0)
        } else {
            0.0
        };
        let target = verdict.allocation[k];
        let relative_gap = if target > 0.0 {
            (mean - target).abs() / target
        } else if mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        adaptive_mean.push(mean);
        rows.push(ComparisonRow {
            category: cat.name.clone(),
            weight: cat.weight,
            positivity: cat.positivity().unwrap_or(0.0),
            actual: cat.samples,
            oracle: oracle.rounded[k],
            oracle_real: oracle.real[k],
            constrained: verdict.rounded[k],
            constrained_real: target,
            adaptive: mean,
            adaptive_se: (var / r).sqrt(),
            relative_gap,
        });
    }
    let real_mse = |t: &[f64]| -> f64 {
        (0..c.len())
            .map(|k| if c[k] == 0.0 { 0.0 } else { weights[k] * weights[k] * c[k] / t[k] })
            .sum()
    };
    let (targets, overall_target) = ds.resolved_targets();
    Ok(ComparisonTable {
        budget: n,
        batch_size: options.batch_size,
        replications: options.replications,
        targets,
        overall_target,
        constrained_lambda: verdict.lambda,
        feasible: verdict.feasible,
        overall_mse: [
            overall_mse(&weights, &c, &ds.samples()),
            overall_mse(&weights, &c, &oracle.rounded),
            overall_mse(&weights, &c, &verdict.rounded),
            real_mse(&adaptive_mean),
        ],
        rows,
    })
}
