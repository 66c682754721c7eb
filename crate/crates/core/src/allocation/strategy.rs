//! Sequential sampling loops: the posterior-interval UCB rule, the
//! frequentist baselines, and fixed allocations.

use serde::{Deserialize, Serialize};

use super::select_arm;
use crate::bounds::{baseline_ucb, refresh_arm, variance_ucb, BaselineKind, DeltaSchedule, IntervalSet};
use crate::error::{Error, Result};
use crate::posterior::{PosteriorState, PriorSpec, SampleRecord};

/// Source of outcomes for a requested arm.
pub trait ArmSource {
    /// Draws one symbol index in `0..L` from `arm`.
    fn sample(&mut self, arm: usize) -> Result<usize>;
}

impl<F: FnMut(usize) -> Result<usize>> ArmSource for F {
    fn sample(&mut self, arm: usize) -> Result<usize> {
        self(arm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Strategy {
    /// Upper confidence bounds on the variance from posterior intervals.
    BayesUcb,
    /// Upper confidence bounds from a concentration inequality.
    Baseline { bound: BaselineKind },
    /// Predetermined per-arm counts, visited in interleaved order.
    Fixed { allocation: Vec<u64> },
}

impl Strategy {
    fn uses_intervals(&self) -> bool {
        matches!(self, Strategy::BayesUcb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub prior: PriorSpec,
    pub schedule: DeltaSchedule,
    pub budget: u64,
    /// Per-arm loss weights multiplying the variance bounds; all ones when
    /// `None`.
    pub loss_weights: Option<Vec<f64>>,
}

impl SamplerConfig {
    pub fn new(prior: PriorSpec, schedule: DeltaSchedule, budget: u64) -> Self {
        Self {
            prior,
            schedule,
            budget,
            loss_weights: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let (k, l) = (self.prior.arms(), self.prior.symbols());
        Error::check_len("schedule.arms", k, self.schedule.arms())?;
        Error::check_len("schedule.symbols", l, self.schedule.symbols())?;
        if self.budget == 0 {
            return Err(Error::invalid("budget", "need a positive budget"));
        }
        if let Some(w) = &self.loss_weights {
            Error::check_len("loss_weights", k, w.len())?;
            if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("loss_weights", format!("weights must be positive, got {bad}")));
            }
        }
        Ok(())
    }
}

/// What happened at one step, passed to the observer after the posterior
/// update.
#[derive(Debug)]
pub struct StepOutcome<'a> {
    /// 1-based step index `n`.
    pub step: u64,
    pub arm: usize,
    pub symbol: usize,
    /// Variance bounds used to choose `arm`; `None` for fixed allocations.
    pub bounds: Option<&'a [f64]>,
    /// Intervals in force when `arm` was chosen (posterior-interval
    /// strategy only).
    pub intervals: Option<&'a IntervalSet>,
    /// Posterior after recording `symbol`.
    pub state: &'a PosteriorState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunStatus {
    Complete,
    /// The arm source failed at `step`; the run stopped there.
    Truncated { step: u64, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    /// Interval updates whose intersection with the previous interval was
    /// empty.
    pub empty_intersections: u64,
    /// Steps where the interval box missed the simplex and the bound fell
    /// back to its vacuous value.
    pub infeasible_bounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub counts: Vec<u64>,
    /// Empirical pmfs, uniform for arms never sampled.
    pub estimates: Vec<Vec<f64>>,
    pub unsampled: Vec<bool>,
    /// Variance bounds after the final sample; `None` for fixed allocations.
    pub final_bounds: Option<Vec<f64>>,
    pub final_intervals: Option<IntervalSet>,
    pub state: PosteriorState,
    pub diagnostics: RunDiagnostics,
}

/// Full record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub history: Vec<SampleRecord>,
    /// `bound_trace[n - 1]` holds the per-arm bounds used at step `n`.
    pub bound_trace: Vec<Vec<f64>>,
    pub summary: RunSummary,
}

struct BoundTracker {
    intervals: Option<IntervalSet>,
    bounds: Vec<f64>,
    infeasible: u64,
}

impl BoundTracker {
    fn new(strategy: &Strategy, k: usize, l: usize) -> Self {
        Self {
            intervals: strategy.uses_intervals().then(|| IntervalSet::full(k, l)),
            bounds: vec![1.0 - 1.0 / l as f64; k],
            infeasible: 0,
        }
    }

    /// Brings the bounds up to date with `state`. Only `changed` arms are
    /// refreshed for the interval strategy: an untouched arm's new raw
    /// interval is wider than the last one, so intersecting leaves it as is.
    fn refresh(
        &mut self,
        strategy: &Strategy,
        state: &PosteriorState,
        schedule: &DeltaSchedule,
        changed: Option<usize>,
    ) -> Result<()> {
        match strategy {
            Strategy::BayesUcb => {
                let intervals = self.intervals.as_mut().expect("interval strategy keeps intervals");
                let arms: Vec<usize> = match changed {
                    Some(arm) => vec![arm],
                    None => (0..state.arms()).collect(),
                };
                for arm in arms {
                    refresh_arm(intervals, state, schedule, arm)?;
                    self.bounds[arm] = match variance_ucb(intervals, arm) {
                        Ok(v) => v.value,
                        Err(Error::Infeasible { .. }) => {
                            self.infeasible += 1;
                            1.0 - 1.0 / state.symbols() as f64
                        }
                        Err(e) => return Err(e),
                    };
                }
            }
            Strategy::Baseline { bound } => {
                for arm in 0..state.arms() {
                    self.bounds[arm] = baseline_ucb(state, schedule, arm, *bound)?.value;
                }
            }
            Strategy::Fixed { .. } => {}
        }
        Ok(())
    }
}

/// Next arm for a fixed allocation: the one furthest behind its target in
/// relative terms, lowest index on ties.
fn next_fixed_arm(allocation: &[u64], counts: &[u64]) -> usize {
    let mut best = 0;
    let mut best_ratio = f64::INFINITY;
    for (k, (&target, &count)) in allocation.iter().zip(counts).enumerate() {
        if count >= target {
            continue;
        }
        let ratio = count as f64 / target as f64;
        if ratio < best_ratio {
            best = k;
            best_ratio = ratio;
        }
    }
    best
}

/// Runs `strategy` for `config.budget` steps, calling `observer` after every
/// sample.
pub fn run_strategy<S, O>(
    strategy: &Strategy,
    config: &SamplerConfig,
    env: &mut S,
    mut observer: O,
) -> Result<RunSummary>
where
    S: ArmSource + ?Sized,
    O: FnMut(&StepOutcome<'_>),
{
    config.validate()?;
    let (k, l) = (config.prior.arms(), config.prior.symbols());
    if let Strategy::Fixed { allocation } = strategy {
        Error::check_len("allocation", k, allocation.len())?;
        let total: u64 = allocation.iter().sum();
        if total != config.budget {
            return Err(Error::invalid(
                "allocation",
                format!("fixed allocation sums to {total}, budget is {}", config.budget),
            ));
        }
    }
    if let Strategy::Baseline { bound: BaselineKind::EmpiricalBernstein } = strategy {
        if l != 2 {
            return Err(Error::Unsupported(format!("empirical-Bernstein bound needs two symbols, got {l}")));
        }
    }

    let mut state = PosteriorState::new(&config.prior);
    let mut tracker = BoundTracker::new(strategy, k, l);
    let mut status = RunStatus::Complete;
    let mut changed = None;
    let mut scores = vec![0.0; k];

    for n in 1..=config.budget {
        tracker.refresh(strategy, &state, &config.schedule, changed)?;
        let arm = match strategy {
            Strategy::Fixed { allocation } => next_fixed_arm(allocation, state.counts()),
            _ => {
                for (i, s) in scores.iter_mut().enumerate() {
                    let w = config.loss_weights.as_ref().map_or(1.0, |w| w[i]);
                    *s = w * tracker.bounds[i];
                }
                select_arm(&scores, state.counts())?
            }
        };
        let symbol = match env.sample(arm) {
            Ok(s) if s < l => s,
            Ok(s) => {
                status = RunStatus::Truncated {
                    step: n,
                    message: format!("arm {arm} returned symbol {s}, expected fewer than {l}"),
                };
                break;
            }
            Err(e) => {
                status = RunStatus::Truncated {
                    step: n,
                    message: e.to_string(),
                };
                break;
            }
        };
        // Intervals are observed as used for the choice; the update happens
        // after.
        state.observe(arm, symbol)?;
        let has_bounds = !matches!(strategy, Strategy::Fixed { .. });
        observer(&StepOutcome {
            step: n,
            arm,
            symbol,
            bounds: has_bounds.then_some(tracker.bounds.as_slice()),
            intervals: tracker.intervals.as_ref(),
            state: &state,
        });
        changed = Some(arm);
    }

    let final_bounds = if matches!(strategy, Strategy::Fixed { .. }) {
        None
    } else {
        tracker.refresh(strategy, &state, &config.schedule, changed)?;
        Some(tracker.bounds.clone())
    };
    let estimates = (0..k)
        .map(|arm| state.empirical_pmf(arm).unwrap_or_else(|| vec![1.0 / l as f64; l]))
        .collect();
    let unsampled = state.counts().iter().map(|&c| c == 0).collect();
    let diagnostics = RunDiagnostics {
        empty_intersections: tracker.intervals.as_ref().map_or(0, |i| i.empty_intersections()),
        infeasible_bounds: tracker.infeasible,
    };
    Ok(RunSummary {
        status,
        counts: state.counts().to_vec(),
        estimates,
        unsampled,
        final_bounds,
        final_intervals: tracker.intervals,
        state,
        diagnostics,
    })
}

/// Runs the posterior-interval UCB strategy and keeps the full history.
pub fn run_bayes_ucb<S: ArmSource + ?Sized>(config: &SamplerConfig, env: &mut S) -> Result<Trajectory> {
    let mut history = Vec::with_capacity(config.budget as usize);
    let mut bound_trace = Vec::with_capacity(config.budget as usize);
    let summary = run_strategy(&Strategy::BayesUcb, config, env, |out| {
        history.push(SampleRecord {
            arm: out.arm,
            symbol: out.symbol,
            step: out.step,
        });
        if let Some(b) = out.bounds {
            bound_trace.push(b.to_vec());
        }
    })?;
    Ok(Trajectory {
        history,
        bound_trace,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(k: usize, n: u64) -> SamplerConfig {
        SamplerConfig::new(
            PriorSpec::uniform(k, 2).unwrap(),
            DeltaSchedule::with_default_eta(k, 2, n).unwrap(),
            n,
        )
    }

    #[test]
    fn each_arm_sampled_before_any_repeat() {
        let mut env = |_arm: usize| Ok(0);
        let t = run_bayes_ucb(&config(4, 4), &mut env).unwrap();
        let arms: Vec<usize> = t.history.iter().map(|r| r.arm).collect();
        assert_eq!(arms, vec![0, 1, 2, 3]);
        assert_eq!(t.summary.counts, vec![1; 4]);
    }

    #[test]
    fn budget_is_conserved_and_steps_are_sequential() {
        let mut flip = 0usize;
        let mut env = |arm: usize| {
            flip += 1;
            Ok((flip + arm) % 2)
        };
        let t = run_bayes_ucb(&config(3, 200), &mut env).unwrap();
        assert_eq!(t.summary.counts.iter().sum::<u64>(), 200);
        assert_eq!(t.bound_trace.len(), 200);
        assert!(t.history.iter().enumerate().all(|(i, r)| r.step == i as u64 + 1));
        assert_eq!(t.summary.status, RunStatus::Complete);
    }

    #[test]
    fn deterministic_arm_loses_samples() {
        // Arm 0 always yields symbol 1; arm 1 alternates.
        let mut toggle = false;
        let mut env = |arm: usize| {
            if arm == 0 {
                Ok(1)
            } else {
                toggle = !toggle;
                Ok(toggle as usize)
            }
        };
        let t = run_bayes_ucb(&config(2, 400), &mut env).unwrap();
        let u0: Vec<f64> = t.bound_trace.iter().map(|b| b[0]).collect();
        assert!(u0.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let last = t.bound_trace.last().unwrap();
        assert!(last[0] < 0.35 && last[1] > 0.45, "{last:?}");
        assert!(t.summary.counts[0] < t.summary.counts[1]);
    }

    #[test]
    fn env_failure_truncates() {
        let mut calls = 0;
        let mut env = |_arm: usize| {
            calls += 1;
            if calls > 5 {
                Err(Error::Environment("sensor offline".into()))
            } else {
                Ok(1)
            }
        };
        let t = run_bayes_ucb(&config(2, 50), &mut env).unwrap();
        assert_eq!(t.history.len(), 5);
        match t.summary.status {
            RunStatus::Truncated { step, ref message } => {
                assert_eq!(step, 6);
                assert!(message.contains("sensor offline"));
            }
            RunStatus::Complete => panic!("expected truncation"),
        }
        let mut bad = |_arm: usize| Ok(7);
        let s = run_bayes_ucb(&config(2, 5), &mut bad).unwrap();
        assert!(matches!(s.summary.status, RunStatus::Truncated { step: 1, .. }));
    }

    #[test]
    fn fixed_allocation_interleaves() {
        let mut seen = Vec::new();
        let mut env = |_arm: usize| Ok(0);
        let strategy = Strategy::Fixed { allocation: vec![2, 4, 0] };
        let s = run_strategy(&strategy, &config(3, 6), &mut env, |o| seen.push(o.arm)).unwrap();
        assert_eq!(s.counts, vec![2, 4, 0]);
        assert_eq!(seen, vec![0, 1, 1, 0, 1, 1]);
        assert_eq!(s.unsampled, vec![false, false, true]);
        assert_eq!(s.estimates[2], vec![0.5, 0.5]);
        assert!(s.final_bounds.is_none());

        let wrong = Strategy::Fixed { allocation: vec![1, 1, 1] };
        assert!(run_strategy(&wrong, &config(3, 6), &mut env, |_| {}).is_err());
    }

    #[test]
    fn baseline_runs_conserve_budget() {
        let mut env = |arm: usize| Ok(arm % 2);
        for bound in [BaselineKind::HoeffdingStyle, BaselineKind::EmpiricalBernstein] {
            let s = run_strategy(&Strategy::Baseline { bound }, &config(2, 100), &mut env, |_| {}).unwrap();
            assert_eq!(s.counts.iter().sum::<u64>(), 100);
        }
    }

    #[test]
    fn loss_weights_shift_allocation() {
        let mut env = |arm: usize| Ok(arm % 2);
        let mut env2 = |arm: usize| Ok(arm % 2);
        let plain = run_strategy(&Strategy::BayesUcb, &config(2, 300), &mut env, |_| {}).unwrap();
        let mut weighted = config(2, 300);
        weighted.loss_weights = Some(vec![4.0, 1.0]);
        let w = run_strategy(&Strategy::BayesUcb, &weighted, &mut env2, |_| {}).unwrap();
        assert!(w.counts[0] > plain.counts[0]);
    }
}
