//! Confidence intervals on every `p[k][l]` and the variance upper bound
//! derived from them.
//!
//! Intervals come from the Beta marginals of the posterior at a per-step
//! level `delta_n`, and are intersected with the previous step's interval
//! so they can only shrink. The variance bound of an arm is the largest
//! `sum_l q_l (1 - q_l)` over pmfs `q` that fit inside the arm's boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{beta_quantile, beta_quantile_upper, PosteriorState, TruncatedBeta};

const MIN_TAIL: f64 = 1e-300;
const MAX_TAIL: f64 = 1.0 - 1e-16;
const SIMPLEX_SLACK: f64 = 1e-12;

/// The per-step confidence schedule `delta_n = delta / (K L n (1 + ln N))`
/// with `delta = eta * N^(-5/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaSchedule {
    arms: usize,
    symbols: usize,
    budget: u64,
    eta: f64,
}

impl DeltaSchedule {
    pub fn new(arms: usize, symbols: usize, budget: u64, eta: f64) -> Result<Self> {
        if arms == 0 {
            return Err(Error::invalid("arms", "need at least one arm"));
        }
        if symbols < 2 {
            return Err(Error::invalid("symbols", "need at least two symbols"));
        }
        if budget == 0 {
            return Err(Error::invalid("budget", "need a positive sample budget"));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid("eta", format!("must lie in (0, 1], got {eta}")));
        }
        Ok(Self {
            arms,
            symbols,
            budget,
            eta,
        })
    }

    /// Schedule with `eta = 1 / N`.
    pub fn with_default_eta(arms: usize, symbols: usize, budget: u64) -> Result<Self> {
        Self::new(arms, symbols, budget, 1.0 / budget as f64)
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Overall failure probability `eta * N^(-5/2)`.
    pub fn delta(&self) -> f64 {
        (self.eta.ln() - 2.5 * (self.budget as f64).ln()).exp()
    }

    /// `delta_n` for `1 <= n <= N`.
    pub fn delta_at(&self, n: u64) -> Result<f64> {
        if n == 0 || n > self.budget {
            return Err(Error::invalid(
                "n",
                format!("step must lie in 1..={}, got {n}", self.budget),
            ));
        }
        Ok(self.level(n))
    }

    /// `delta_n` with `n` clamped into `1..=N`. States past the budget (the
    /// final `N + 1` state, or a survey that overran its declared budget)
    /// reuse the last level.
    pub fn delta_clamped(&self, n: u64) -> f64 {
        self.level(n.clamp(1, self.budget))
    }

    fn level(&self, n: u64) -> f64 {
        let log_budget = (self.budget as f64).ln();
        self.delta() / ((self.arms * self.symbols) as f64 * n as f64 * (1.0 + log_budget))
    }
}

/// Width bound on any interval: `sqrt(2 ln(2/delta_n) / (alpha_total + 1))`.
pub fn interval_width_bound(delta_n: f64, alpha_total: f64) -> f64 {
    (2.0 * (2.0 / delta_n).ln() / (alpha_total + 1.0)).sqrt()
}

/// Bound on the gap between the variance bound and the true tracking
/// parameter when every true probability lies in its interval:
/// `sqrt(8 ln(2/delta_n) / (T + 1))`.
pub fn variance_gap_bound(delta_n: f64, count: u64) -> f64 {
    (8.0 * (2.0 / delta_n).ln() / (count as f64 + 1.0)).sqrt()
}

/// Running intervals `[lower, upper]` for every arm and symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
    /// Number of updates where the fresh interval missed the running one
    /// entirely; the running interval is kept unchanged in that case.
    empty_intersections: u64,
}

impl IntervalSet {
    /// `[0, 1]` everywhere.
    pub fn full(arms: usize, symbols: usize) -> Self {
        Self {
            lower: vec![vec![0.0; symbols]; arms],
            upper: vec![vec![1.0; symbols]; arms],
            empty_intersections: 0,
        }
    }

    /// Builds an interval set from explicit bounds.
    pub fn from_bounds(lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>>) -> Result<Self> {
        Error::check_len("upper", lower.len(), upper.len())?;
        for (lo, hi) in lower.iter().zip(&upper) {
            Error::check_len("upper", lo.len(), hi.len())?;
            for (&a, &b) in lo.iter().zip(hi) {
                if !(0.0 <= a && a <= b && b <= 1.0) {
                    return Err(Error::invalid("bounds", format!("need 0 <= a <= b <= 1, got [{a}, {b}]")));
                }
            }
        }
        Ok(Self {
            lower,
            upper,
            empty_intersections: 0,
        })
    }

    pub fn arms(&self) -> usize {
        self.lower.len()
    }

    pub fn symbols(&self) -> usize {
        self.lower.first().map_or(0, Vec::len)
    }

    pub fn lower(&self, arm: usize) -> &[f64] {
        &self.lower[arm]
    }

    pub fn upper(&self, arm: usize) -> &[f64] {
        &self.upper[arm]
    }

    pub fn interval(&self, arm: usize, symbol: usize) -> (f64, f64) {
        (self.lower[arm][symbol], self.upper[arm][symbol])
    }

    pub fn width(&self, arm: usize, symbol: usize) -> f64 {
        self.upper[arm][symbol] - self.lower[arm][symbol]
    }

    pub fn empty_intersections(&self) -> u64 {
        self.empty_intersections
    }

    /// Whether `pmfs[k][l]` lies in interval `(k, l)` for every cell.
    pub fn contains(&self, pmfs: &[Vec<f64>]) -> bool {
        pmfs.iter().enumerate().all(|(k, row)| {
            row.iter()
                .enumerate()
                .all(|(l, &p)| self.lower[k][l] <= p && p <= self.upper[k][l])
        })
    }

    /// Intersects cell `(arm, symbol)` with `[a, b]`.
    pub fn intersect(&mut self, arm: usize, symbol: usize, a: f64, b: f64) {
        let lo = a.max(self.lower[arm][symbol]);
        let hi = b.min(self.upper[arm][symbol]);
        if lo > hi {
            self.empty_intersections += 1;
            return;
        }
        self.lower[arm][symbol] = lo.clamp(0.0, 1.0);
        self.upper[arm][symbol] = hi.clamp(0.0, 1.0);
    }
}

/// Fresh (un-intersected) posterior intervals for every symbol of `arm`
/// at level `delta_n`: each tail carries `delta_n / 2`.
pub fn raw_intervals(state: &PosteriorState, arm: usize, delta_n: f64) -> Result<Vec<(f64, f64)>> {
    let tail = (0.5 * delta_n).clamp(MIN_TAIL, MAX_TAIL);
    if let Some(t) = state.truncation(arm) {
        let (a, b) = state.marginal(arm, 1);
        let (lo, hi) = match TruncatedBeta::new(a, b, t.lower, t.upper) {
            Ok(tb) => (tb.quantile(tail)?, tb.quantile_upper(tail)?),
            // All posterior mass sits beyond one end of the support: the
            // truncated posterior collapses onto that end.
            Err(Error::Degenerate(_)) => {
                let end = if a / (a + b) < t.lower { t.lower } else { t.upper };
                (end, end)
            }
            Err(e) => return Err(e),
        };
        return Ok(vec![(1.0 - hi, 1.0 - lo), (lo, hi)]);
    }
    (0..state.symbols())
        .map(|l| {
            let (a, b) = state.marginal(arm, l);
            Ok((beta_quantile(tail, a, b)?, beta_quantile_upper(tail, a, b)?))
        })
        .collect()
}

/// Recomputes and intersects the intervals of a single arm in place, at
/// the level for the state's current step.
pub fn refresh_arm(
    intervals: &mut IntervalSet,
    state: &PosteriorState,
    schedule: &DeltaSchedule,
    arm: usize,
) -> Result<()> {
    let delta_n = schedule.delta_clamped(state.step());
    for (l, (a, b)) in raw_intervals(state, arm, delta_n)?.into_iter().enumerate() {
        intervals.intersect(arm, l, a, b);
    }
    Ok(())
}

/// `E_n = [a_n, b_n] ∩ E_{n-1}` for every arm and symbol.
pub fn update_intervals(
    prev: &IntervalSet,
    state: &PosteriorState,
    schedule: &DeltaSchedule,
) -> Result<IntervalSet> {
    Error::check_len("arms", prev.arms(), state.arms())?;
    Error::check_len("symbols", prev.symbols(), state.symbols())?;
    let mut next = prev.clone();
    for k in 0..state.arms() {
        refresh_arm(&mut next, state, schedule, k)?;
    }
    Ok(next)
}

/// Optimum and maximizer of the box-constrained variance program for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceBound {
    /// Upper bound on the tracking parameter `sum_l p_l (1 - p_l)`.
    pub value: f64,
    /// The maximizing pmf; for the baseline bounds, the plug-in pmf.
    pub maximizer: Vec<f64>,
}

/// Maximizes `sum_l q_l (1 - q_l)` over pmfs with `lower <= q <= upper`.
///
/// Equivalent to minimizing `sum_l q_l^2` on the simplex, whose KKT point
/// is `q_l = clamp(level, lower_l, upper_l)` for the unique `level` that
/// makes the coordinates sum to one.
pub fn max_variance_in_box(lower: &[f64], upper: &[f64]) -> Result<VarianceBound> {
    Error::check_len("upper", lower.len(), upper.len())?;
    if lower.is_empty() {
        return Err(Error::invalid("lower", "need at least one symbol"));
    }
    if let Some((a, b)) = lower.iter().zip(upper).find(|(a, b)| !(a <= b)) {
        return Err(Error::invalid("lower", format!("box [{a}, {b}] is empty")));
    }
    let lower_sum: f64 = lower.iter().sum();
    let upper_sum: f64 = upper.iter().sum();
    if lower_sum > 1.0 + SIMPLEX_SLACK || upper_sum < 1.0 - SIMPLEX_SLACK {
        return Err(Error::Infeasible {
            lower_sum,
            upper_sum,
        });
    }

    let fill = |level: f64| -> Vec<f64> {
        lower.iter().zip(upper).map(|(&a, &b)| level.clamp(a, b)).collect()
    };
    let q = if lower_sum >= 1.0 {
        lower.to_vec()
    } else if upper_sum <= 1.0 {
        upper.to_vec()
    } else {
        let mut lo = lower.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = upper.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fill(mid).iter().sum::<f64>() < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 {
                break;
            }
        }
        let level = 0.5 * (lo + hi);
        // Solve exactly for the level on the coordinates left free.
        let free: Vec<usize> = (0..lower.len())
            .filter(|&l| lower[l] < level && level < upper[l])
            .collect();
        if free.is_empty() {
            fill(level)
        } else {
            let pinned: f64 = (0..lower.len())
                .filter(|l| !free.contains(l))
                .map(|l| level.clamp(lower[l], upper[l]))
                .sum();
            fill((1.0 - pinned) / free.len() as f64)
        }
    };
    let value = q.iter().map(|p| p * (1.0 - p)).sum();
    Ok(VarianceBound { value, maximizer: q })
}

/// Variance upper bound `u_n` of one arm from its current intervals.
pub fn variance_ucb(intervals: &IntervalSet, arm: usize) -> Result<VarianceBound> {
    if arm >= intervals.arms() {
        return Err(Error::invalid("arm", format!("index {arm} out of range")));
    }
    max_variance_in_box(intervals.lower(arm), intervals.upper(arm))
}

/// Non-Bayesian variance bounds used as comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Plug-in variance plus a `sqrt(8 ln(2/delta_n) / (T + 1))` deviation.
    HoeffdingStyle,
    /// Empirical-Bernstein bound on the standard deviation of a Bernoulli
    /// arm (two symbols only).
    EmpiricalBernstein,
}

/// Baseline variance bound for `arm` from the observed counts alone.
pub fn baseline_ucb(
    state: &PosteriorState,
    schedule: &DeltaSchedule,
    arm: usize,
    kind: BaselineKind,
) -> Result<VarianceBound> {
    if arm >= state.arms() {
        return Err(Error::invalid("arm", format!("index {arm} out of range")));
    }
    let symbols = state.symbols();
    if kind == BaselineKind::EmpiricalBernstein && symbols != 2 {
        return Err(Error::Unsupported(format!(
            "empirical-Bernstein bound needs two symbols, got {symbols}"
        )));
    }
    let cap = 1.0 - 1.0 / symbols as f64;
    let count = state.count(arm);
    let Some(pmf) = state.empirical_pmf(arm) else {
        return Ok(VarianceBound {
            value: cap,
            maximizer: vec![1.0 / symbols as f64; symbols],
        });
    };
    let delta_n = schedule.delta_clamped(state.step());
    let log_term = (2.0 / delta_n).ln();
    let value = match kind {
        BaselineKind::HoeffdingStyle => {
            let plug_in: f64 = pmf.iter().map(|p| p * (1.0 - p)).sum();
            (plug_in + variance_gap_bound(delta_n, count)).min(cap)
        }
        BaselineKind::EmpiricalBernstein => {
            if count < 2 {
                cap
            } else {
                // Unbiased sample variance of the indicator of symbol 1, and
                // the Maurer-Pontil deviation on its square root.
                let t = count as f64;
                let sample_var = t / (t - 1.0) * pmf[1] * (1.0 - pmf[1]);
                let sd = sample_var.sqrt() + (2.0 * log_term / (t - 1.0)).sqrt();
                (2.0 * sd * sd).min(cap)
            }
        }
    };
    Ok(VarianceBound {
        value,
        maximizer: pmf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::PriorSpec;

    #[test]
    fn delta_schedule_values() {
        let s = DeltaSchedule::new(2, 2, 2500, 1.0 / 2500.0).unwrap();
        let delta = 2500f64.powf(-3.5);
        assert!((s.delta() / delta - 1.0).abs() < 1e-12);
        assert!((s.delta() - 1.2800e-12).abs() < 1e-16);
        let d1 = s.delta_at(1).unwrap();
        assert!((d1 / (delta / (4.0 * (1.0 + 2500f64.ln()))) - 1.0).abs() < 1e-12);
        assert!((d1 - 3.626e-14).abs() < 1e-17);
        assert_eq!(s.delta_at(2).unwrap(), d1 / 2.0);
        assert!(s.delta_at(0).is_err());
        assert!(s.delta_at(2501).is_err());

        let unit = DeltaSchedule::new(3, 2, 1, 1.0).unwrap();
        assert_eq!(unit.delta(), 1.0);
        assert!((unit.delta_at(1).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_sums_below_delta() {
        let s = DeltaSchedule::new(2, 3, 1000, 0.5).unwrap();
        let total: f64 = (1..=1000).map(|n| s.delta_at(n).unwrap()).sum();
        assert!(total <= s.delta());
        for n in 1..1000 {
            assert!(s.delta_at(n + 1).unwrap() < s.delta_at(n).unwrap());
        }
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(DeltaSchedule::new(0, 2, 10, 0.5).is_err());
        assert!(DeltaSchedule::new(2, 2, 0, 0.5).is_err());
        assert!(DeltaSchedule::new(2, 2, 10, 0.0).is_err());
        assert!(DeltaSchedule::new(2, 2, 10, 1.5).is_err());
    }

    #[test]
    fn uniform_posterior_quantile_interval() {
        let state = PosteriorState::new(&PriorSpec::uniform(1, 2).unwrap());
        let raw = raw_intervals(&state, 0, 0.1).unwrap();
        for (a, b) in raw {
            assert!((a - 0.05).abs() < 1e-14 && (b - 0.95).abs() < 1e-14);
        }
    }

    #[test]
    fn intersection_keeps_overlap_only() {
        let mut set = IntervalSet::from_bounds(vec![vec![0.1, 0.0]], vec![vec![0.5, 1.0]]).unwrap();
        set.intersect(0, 0, 0.2, 0.8);
        assert_eq!(set.interval(0, 0), (0.2, 0.5));
        set.intersect(0, 0, 0.6, 0.9);
        assert_eq!(set.interval(0, 0), (0.2, 0.5));
        assert_eq!(set.empty_intersections(), 1);
    }

    #[test]
    fn concentrated_posterior_is_far_inside_width_bound() {
        let mut state = PosteriorState::new(&PriorSpec::uniform(1, 2).unwrap());
        state.observe_counts(0, &[50, 0]).unwrap();
        let raw = raw_intervals(&state, 0, 1e-6).unwrap();
        let bound = interval_width_bound(1e-6, state.alpha_total(0));
        assert!((bound - (2.0 * 2e6f64.ln() / 53.0).sqrt()).abs() < 1e-15);
        assert!((bound - 0.740).abs() < 5e-4);
        for &(a, b) in &raw {
            assert!(b - a < 0.5 * bound, "width {}", b - a);
        }
        // Beta(51, 1): lower point solves x^51 = 5e-7.
        assert!((raw[0].0 - (5e-7f64.ln() / 51.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn variance_program_closed_forms() {
        let free = max_variance_in_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(free.maximizer, vec![0.5, 0.5]);
        assert!((free.value - 0.5).abs() < 1e-15);

        let point = max_variance_in_box(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap();
        assert!((point.value - (0.16 + 0.21 + 0.25)).abs() < 1e-15);

        let boxed = max_variance_in_box(&[0.2, 0.6], &[0.4, 0.8]).unwrap();
        assert!((boxed.maximizer[0] - 0.4).abs() < 1e-15);
        assert!((boxed.maximizer[1] - 0.6).abs() < 1e-15);
        assert!((boxed.value - 0.48).abs() < 1e-15);

        let free3 = max_variance_in_box(&[0.0; 3], &[1.0; 3]).unwrap();
        assert!((free3.value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn variance_program_detects_infeasible_boxes() {
        assert!(matches!(
            max_variance_in_box(&[0.6, 0.6], &[0.9, 0.9]),
            Err(Error::Infeasible { .. })
        ));
        assert!(matches!(
            max_variance_in_box(&[0.0, 0.0], &[0.3, 0.3]),
            Err(Error::Infeasible { .. })
        ));
        assert!(max_variance_in_box(&[0.5], &[0.4]).is_err());
    }

    #[test]
    fn hoeffding_baseline() {
        let schedule = DeltaSchedule::new(1, 2, 100, 1.0).unwrap();
        let mut state = PosteriorState::new(&PriorSpec::uniform(1, 2).unwrap());
        let vacuous = baseline_ucb(&state, &schedule, 0, BaselineKind::HoeffdingStyle).unwrap();
        assert_eq!(vacuous.value, 0.5);

        // T = 7, delta_n = 2 / e^8: deviation sqrt(8 * 8 / 8), clipped at 1/2.
        let delta_n = 2.0 * (-8.0f64).exp();
        assert!((variance_gap_bound(delta_n, 7) - 8f64.sqrt()).abs() < 1e-12);
        state.observe_counts(0, &[4, 3]).unwrap();
        let clipped = baseline_ucb(&state, &schedule, 0, BaselineKind::HoeffdingStyle).unwrap();
        assert_eq!(clipped.value, 0.5);
    }

    #[test]
    fn hoeffding_baseline_approaches_plug_in() {
        let schedule = DeltaSchedule::new(1, 2, 1_000_000, 1.0).unwrap();
        let mut state = PosteriorState::new(&PriorSpec::uniform(1, 2).unwrap());
        let mut prev = f64::INFINITY;
        for _ in 0..6 {
            state.observe_counts(0, &[70_000, 30_000]).unwrap();
            let u = baseline_ucb(&state, &schedule, 0, BaselineKind::HoeffdingStyle).unwrap().value;
            assert!(u < prev && u > 0.42);
            prev = u;
        }
        assert!(prev - 0.42 < 0.03);
    }

    #[test]
    fn bernstein_baseline_needs_two_symbols() {
        let schedule = DeltaSchedule::new(1, 3, 100, 1.0).unwrap();
        let state = PosteriorState::new(&PriorSpec::uniform(1, 3).unwrap());
        assert!(matches!(
            baseline_ucb(&state, &schedule, 0, BaselineKind::EmpiricalBernstein),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn bernstein_baseline_tightens() {
        let schedule = DeltaSchedule::new(1, 2, 100_000, 1.0).unwrap();
        let mut state = PosteriorState::new(&PriorSpec::uniform(1, 2).unwrap());
        state.observe_counts(0, &[1, 0]).unwrap();
        let first = baseline_ucb(&state, &schedule, 0, BaselineKind::EmpiricalBernstein).unwrap();
        assert_eq!(first.value, 0.5);
        state.observe_counts(0, &[98_999, 1_000]).unwrap();
        let late = baseline_ucb(&state, &schedule, 0, BaselineKind::EmpiricalBernstein).unwrap();
        assert!(late.value > 2.0 * 0.01 * 0.99 && late.value < 0.05);
    }
}
