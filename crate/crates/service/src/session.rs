//! Survey sessions: definitions, batch recording, recommendations.

use std::collections::HashSet;

use aps_core::allocation::{batch_allocate, BatchConstraintSpec};
use aps_core::bounds::{refresh_arm, variance_ucb, DeltaSchedule, IntervalSet};
use aps_core::posterior::{PosteriorState, PriorSpec, Truncation};
use aps_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Prior on one category's positivity: Beta parameters `[negative,
/// positive]` and an optional support window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryPrior {
    #[serde(default)]
    pub alpha: Option<[f64; 2]>,
    #[serde(default)]
    pub truncation: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryDef {
    pub name: String,
    pub weight: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub prior: Option<CategoryPrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionDefinition {
    pub categories: Vec<CategoryDef>,
    /// Total number of samples the survey plans to collect.
    pub budget: u64,
    #[serde(default)]
    pub overall_target: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
}

impl SessionDefinition {
    fn validate(&self) -> Result<(), ServiceError> {
        if self.categories.is_empty() {
            return Err(ServiceError::validation("categories", "need at least one category"));
        }
        let mut names = HashSet::new();
        for c in &self.categories {
            if c.name.trim().is_empty() {
                return Err(ServiceError::validation("categories.name", "category names must be non-empty"));
            }
            if !names.insert(c.name.as_str()) {
                return Err(ServiceError::validation("categories.name", format!("duplicate category `{}`", c.name)));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(ServiceError::validation("weights", format!("weight of `{}` must be non-negative", c.name)));
            }
            if let Some(t) = c.theta {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(ServiceError::validation("theta", format!("target of `{}` must be positive", c.name)));
                }
            }
        }
        let sum: f64 = self.categories.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(ServiceError::validation("weights", format!("weights must sum to 1, got {sum}")));
        }
        if let Some(t) = self.overall_target {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ServiceError::validation("overall_target", "overall target must be positive"));
            }
        }
        if self.budget == 0 {
            return Err(ServiceError::validation("budget", "budget must be positive"));
        }
        Ok(())
    }

    fn prior(&self) -> Result<PriorSpec, ServiceError> {
        let alphas = self
            .categories
            .iter()
            .map(|c| match c.prior.as_ref().and_then(|p| p.alpha) {
                Some(a) => a.to_vec(),
                None => vec![1.0, 1.0],
            })
            .collect();
        let mut prior = PriorSpec::dirichlet(alphas)?;
        for (k, c) in self.categories.iter().enumerate() {
            if let Some([lower, upper]) = c.prior.as_ref().and_then(|p| p.truncation) {
                prior = prior.with_truncation(k, Truncation::new(lower, upper)?)?;
            }
        }
        Ok(prior)
    }

    /// Targets for the batch problem. Without any target the overall MSE
    /// alone is minimized.
    fn targets(&self) -> (Vec<Option<f64>>, Option<f64>) {
        let per_category: Vec<Option<f64>> = self.categories.iter().map(|c| c.theta).collect();
        let overall = match self.overall_target {
            None if per_category.iter().all(Option::is_none) => Some(1.0),
            other => other,
        };
        (per_category, overall)
    }
}

/// Samples and positives for one category in one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryCounts {
    pub samples: u64,
    pub positives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRecord {
    /// One entry per category, in definition order.
    pub counts: Vec<CategoryCounts>,
}

impl BatchRecord {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c.samples).sum()
    }
}

/// Target overrides for a what-if recommendation; absent fields keep the
/// session's values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetOverrides {
    #[serde(default)]
    pub targets: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub overall_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub batch_size: u64,
    /// Real-valued split of the batch.
    pub tau: Vec<f64>,
    /// Integer split summing to `batch_size`.
    pub allocation: Vec<u64>,
    pub lambda: f64,
    pub bounds: Vec<f64>,
    pub counts: Vec<u64>,
    pub targets: Vec<Option<f64>>,
    pub overall_target: Option<f64>,
    pub binding: Vec<bool>,
    pub overall_binding: bool,
    pub state_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEstimate {
    pub name: String,
    pub weight: f64,
    pub samples: u64,
    pub positives: u64,
    pub posterior_mean: f64,
    /// Observed positive fraction; absent before the first sample.
    pub empirical: Option<f64>,
    /// Current interval on the positivity.
    pub interval: [f64; 2],
    pub variance_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallSummary {
    /// Weighted mean of the empirical positivities; absent while any
    /// category is unsampled.
    pub estimate: Option<f64>,
    /// Weighted mean of the posterior means.
    pub posterior_mean: f64,
    /// Plug-in MSE of `estimate`.
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub total_samples: u64,
    pub categories: Vec<CategoryEstimate>,
    pub overall: OverallSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub definition: SessionDefinition,
    pub batches: Vec<BatchRecord>,
    pub state_hash: String,
    pub estimates: Estimates,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    definition: SessionDefinition,
    schedule: DeltaSchedule,
    state: PosteriorState,
    intervals: IntervalSet,
    batches: Vec<BatchRecord>,
}

#[derive(Serialize)]
struct HashedState<'a> {
    id: &'a str,
    definition: &'a SessionDefinition,
    state: &'a PosteriorState,
    intervals: &'a IntervalSet,
    batches: &'a [BatchRecord],
}

impl Session {
    pub fn new(id: String, definition: SessionDefinition) -> Result<Self, ServiceError> {
        definition.validate()?;
        let prior = definition.prior()?;
        let k = definition.categories.len();
        let schedule = match definition.eta {
            Some(eta) => DeltaSchedule::new(k, 2, definition.budget, eta)?,
            None => DeltaSchedule::with_default_eta(k, 2, definition.budget)?,
        };
        let state = PosteriorState::new(&prior);
        let mut session = Self {
            id,
            definition,
            schedule,
            state,
            intervals: IntervalSet::full(k, 2),
            batches: Vec::new(),
        };
        session.refresh()?;
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn definition(&self) -> &SessionDefinition {
        &self.definition
    }

    pub fn state(&self) -> &PosteriorState {
        &self.state
    }

    pub fn intervals(&self) -> &IntervalSet {
        &self.intervals
    }

    pub fn batches(&self) -> &[BatchRecord] {
        &self.batches
    }

    fn refresh(&mut self) -> Result<(), ServiceError> {
        for arm in 0..self.state.arms() {
            refresh_arm(&mut self.intervals, &self.state, &self.schedule, arm)?;
        }
        Ok(())
    }

    /// Checks a batch against this session without applying it.
    pub fn check_batch(&self, batch: &BatchRecord) -> Result<(), ServiceError> {
        let k = self.definition.categories.len();
        if batch.counts.len() != k {
            return Err(ServiceError::validation(
                "counts",
                format!("expected {k} category entries, got {}", batch.counts.len()),
            ));
        }
        for (c, def) in batch.counts.iter().zip(&self.definition.categories) {
            if c.positives > c.samples {
                return Err(ServiceError::validation(
                    "counts",
                    format!("`{}`: positives ({}) exceed samples ({})", def.name, c.positives, c.samples),
                ));
            }
        }
        Ok(())
    }

    /// Adds a batch to the posterior and refreshes the intervals once.
    /// Returns `false` for an empty batch, which changes nothing.
    pub fn apply(&mut self, batch: &BatchRecord) -> Result<bool, ServiceError> {
        self.check_batch(batch)?;
        if batch.total() == 0 {
            return Ok(false);
        }
        for (arm, c) in batch.counts.iter().enumerate() {
            self.state.observe_counts(arm, &[c.samples - c.positives, c.positives])?;
        }
        self.refresh()?;
        self.batches.push(batch.clone());
        Ok(true)
    }

    pub fn bounds(&self) -> Vec<f64> {
        (0..self.state.arms())
            .map(|arm| variance_ucb(&self.intervals, arm).map_or(0.5, |v| v.value))
            .collect()
    }

    pub fn state_hash(&self) -> String {
        let snapshot = HashedState {
            id: &self.id,
            definition: &self.definition,
            state: &self.state,
            intervals: &self.intervals,
            batches: &self.batches,
        };
        let bytes = serde_json::to_vec(&snapshot).expect("session state serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn recommend(&self, batch_size: u64, overrides: &TargetOverrides) -> Result<Recommendation, ServiceError> {
        if batch_size == 0 {
            return Err(ServiceError::validation("b", "batch size must be positive"));
        }
        let (mut targets, mut overall_target) = self.definition.targets();
        if let Some(t) = &overrides.targets {
            if t.len() != targets.len() {
                return Err(ServiceError::validation(
                    "targets",
                    format!("expected {} targets, got {}", targets.len(), t.len()),
                ));
            }
            targets = t.clone();
        }
        if overrides.overall_target.is_some() {
            overall_target = overrides.overall_target;
        }
        let spec = BatchConstraintSpec {
            targets: targets.clone(),
            overall_target,
            weights: self.definition.categories.iter().map(|c| c.weight).collect(),
            batch_size,
        };
        let bounds = self.bounds();
        let counts = self.state.counts().to_vec();
        let solved = batch_allocate(&bounds, &counts, &spec)?;
        Ok(Recommendation {
            batch_size,
            tau: solved.tau,
            allocation: solved.rounded,
            lambda: solved.lambda,
            bounds,
            counts,
            targets,
            overall_target,
            binding: solved.binding,
            overall_binding: solved.overall_binding,
            state_hash: self.state_hash(),
        })
    }

    pub fn estimates(&self) -> Estimates {
        let bounds = self.bounds();
        let categories: Vec<CategoryEstimate> = self
            .definition
            .categories
            .iter()
            .enumerate()
            .map(|(k, def)| {
                let outcomes = self.state.outcomes(k);
                let (lo, hi) = self.intervals.interval(k, 1);
                CategoryEstimate {
                    name: def.name.clone(),
                    weight: def.weight,
                    samples: self.state.count(k),
                    positives: outcomes[1],
                    posterior_mean: self.state.posterior_mean(k)[1],
                    empirical: self.state.empirical_pmf(k).map(|p| p[1]),
                    interval: [lo, hi],
                    variance_bound: bounds[k],
                }
            })
            .collect();
        let estimate = categories
            .iter()
            .map(|c| c.empirical.map(|p| c.weight * p))
            .sum::<Option<f64>>();
        let mse = estimate.map(|_| {
            categories
                .iter()
                .map(|c| {
                    let p = c.empirical.unwrap_or(0.0);
                    c.weight * c.weight * 2.0 * p * (1.0 - p) / c.samples as f64
                })
                .sum()
        });
        Estimates {
            total_samples: self.state.counts().iter().sum(),
            overall: OverallSummary {
                estimate,
                posterior_mean: categories.iter().map(|c| c.weight * c.posterior_mean).sum(),
                mse,
            },
            categories,
        }
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            definition: self.definition.clone(),
            batches: self.batches.clone(),
            state_hash: self.state_hash(),
            estimates: self.estimates(),
        }
    }
}

impl From<CoreError> for ServiceError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput { field, reason } => ServiceError::validation(field, reason),
            CoreError::DimensionMismatch { field, .. } => ServiceError::validation(field, e.to_string()),
            CoreError::Unsupported(_) | CoreError::Degenerate(_) | CoreError::Survey(_) => {
                ServiceError::Validation {
                    field: None,
                    message: e.to_string(),
                }
            }
            other => ServiceError::Internal(other.to_string()),
        }
    }
}
