//! Dirichlet posteriors over `K` pmfs on `L` symbols.
//!
//! Arms and symbols are 0-based throughout the crate. Each arm carries an
//! independent Dirichlet belief; every marginal `p[k][l]` is then Beta
//! distributed with parameters `(alpha[k][l], alpha_total[k] - alpha[k][l])`.

mod beta;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use beta::{
    beta_cdf, beta_quantile, beta_quantile_upper, beta_sf, ln_beta, ln_gamma, truncated_cdf,
    TruncatedBeta, MIN_TRUNCATION_MASS,
};

/// Support restriction `[lower, upper]` on the Bernoulli parameter of a
/// two-symbol arm. The parameter is the probability of symbol index 1
/// (the "positive" outcome in survey terms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub lower: f64,
    pub upper: f64,
}

impl Truncation {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let t = Self { lower, upper };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lower && self.lower < self.upper && self.upper <= 1.0) {
            return Err(Error::invalid(
                "truncation",
                format!("need 0 <= lower < upper <= 1, got [{}, {}]", self.lower, self.upper),
            ));
        }
        Ok(())
    }
}

/// Prior belief: a factored Dirichlet with optional per-arm truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct PriorSpec {
    alphas: Vec<Vec<f64>>,
    truncations: Vec<Option<Truncation>>,
}

#[derive(Deserialize)]
struct RawPrior {
    alphas: Vec<Vec<f64>>,
    #[serde(default)]
    truncations: Vec<Option<Truncation>>,
}

impl TryFrom<RawPrior> for PriorSpec {
    type Error = Error;

    fn try_from(raw: RawPrior) -> Result<Self> {
        let arms = raw.alphas.len();
        let mut prior = PriorSpec::dirichlet(raw.alphas)?;
        if !raw.truncations.is_empty() {
            Error::check_len("truncations", arms, raw.truncations.len())?;
            for (k, t) in raw.truncations.into_iter().enumerate() {
                if let Some(t) = t {
                    prior = prior.with_truncation(k, t)?;
                }
            }
        }
        Ok(prior)
    }
}

impl PriorSpec {
    /// All Dirichlet parameters equal to one.
    pub fn uniform(arms: usize, symbols: usize) -> Result<Self> {
        if arms == 0 {
            return Err(Error::invalid("arms", "need at least one arm"));
        }
        if symbols < 2 {
            return Err(Error::invalid("symbols", "need at least two symbols"));
        }
        Ok(Self {
            alphas: vec![vec![1.0; symbols]; arms],
            truncations: vec![None; arms],
        })
    }

    pub fn dirichlet(alphas: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = alphas.first() else {
            return Err(Error::invalid("alphas", "need at least one arm"));
        };
        let symbols = first.len();
        if symbols < 2 {
            return Err(Error::invalid("alphas", "need at least two symbols"));
        }
        for row in &alphas {
            Error::check_len("alphas", symbols, row.len())?;
            if let Some(bad) = row.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
                return Err(Error::invalid(
                    "alphas",
                    format!("Dirichlet parameters must be positive, got {bad}"),
                ));
            }
        }
        let arms = alphas.len();
        Ok(Self {
            alphas,
            truncations: vec![None; arms],
        })
    }

    /// Restricts arm `k`'s Bernoulli parameter to an interval. Only valid
    /// for two-symbol pmfs.
    pub fn with_truncation(mut self, arm: usize, truncation: Truncation) -> Result<Self> {
        truncation.validate()?;
        if self.symbols() != 2 {
            return Err(Error::Unsupported(format!(
                "truncated priors need exactly two symbols, got {}",
                self.symbols()
            )));
        }
        if arm >= self.arms() {
            return Err(Error::invalid("arm", format!("index {arm} out of range")));
        }
        let (a, b) = (self.alphas[arm][1], self.alphas[arm][0]);
        TruncatedBeta::new(a, b, truncation.lower, truncation.upper)?;
        self.truncations[arm] = Some(truncation);
        Ok(self)
    }

    pub fn arms(&self) -> usize {
        self.alphas.len()
    }

    pub fn symbols(&self) -> usize {
        self.alphas[0].len()
    }

    pub fn alpha(&self, arm: usize) -> &[f64] {
        &self.alphas[arm]
    }

    pub fn truncation(&self, arm: usize) -> Option<Truncation> {
        self.truncations[arm]
    }
}

/// One observation: arm `arm` was sampled at step `step` and produced `symbol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub arm: usize,
    pub symbol: usize,
    pub step: u64,
}

/// Current Dirichlet parameters and sample counts for every arm.
///
/// `step` is the index of the *next* sample, so the sum of the counts is
/// always `step - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    alpha: Vec<Vec<f64>>,
    alpha_total: Vec<f64>,
    prior_total: Vec<f64>,
    counts: Vec<u64>,
    outcomes: Vec<Vec<u64>>,
    step: u64,
    truncations: Vec<Option<Truncation>>,
}

impl PosteriorState {
    pub fn new(prior: &PriorSpec) -> Self {
        let prior_total: Vec<f64> = prior.alphas.iter().map(|r| r.iter().sum()).collect();
        Self {
            alpha: prior.alphas.clone(),
            alpha_total: prior_total.clone(),
            prior_total,
            counts: vec![0; prior.arms()],
            outcomes: vec![vec![0; prior.symbols()]; prior.arms()],
            step: 1,
            truncations: prior.truncations.clone(),
        }
    }

    pub fn arms(&self) -> usize {
        self.alpha.len()
    }

    pub fn symbols(&self) -> usize {
        self.alpha[0].len()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn alpha(&self, arm: usize) -> &[f64] {
        &self.alpha[arm]
    }

    pub fn alpha_total(&self, arm: usize) -> f64 {
        self.alpha_total[arm]
    }

    pub fn prior_total(&self, arm: usize) -> f64 {
        self.prior_total[arm]
    }

    pub fn count(&self, arm: usize) -> u64 {
        self.counts[arm]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn truncation(&self, arm: usize) -> Option<Truncation> {
        self.truncations[arm]
    }

    /// Observed per-symbol counts for one arm (prior excluded).
    pub fn outcomes(&self, arm: usize) -> &[u64] {
        &self.outcomes[arm]
    }

    /// Empirical pmf of the observations on `arm`, or `None` before the
    /// first sample.
    pub fn empirical_pmf(&self, arm: usize) -> Option<Vec<f64>> {
        let t = self.counts[arm];
        (t > 0).then(|| self.outcomes[arm].iter().map(|&c| c as f64 / t as f64).collect())
    }

    /// Beta parameters of the marginal of `p[arm][symbol]`.
    pub fn marginal(&self, arm: usize, symbol: usize) -> (f64, f64) {
        let a = self.alpha[arm][symbol];
        (a, self.alpha_total[arm] - a)
    }

    fn check_indices(&self, arm: usize, symbol: usize) -> Result<()> {
        if arm >= self.arms() {
            return Err(Error::invalid("arm", format!("index {arm} out of range 0..{}", self.arms())));
        }
        if symbol >= self.symbols() {
            return Err(Error::invalid(
                "symbol",
                format!("index {symbol} out of range 0..{}", self.symbols()),
            ));
        }
        Ok(())
    }

    /// In-place conjugate update for a single observation.
    pub fn observe(&mut self, arm: usize, symbol: usize) -> Result<()> {
        self.check_indices(arm, symbol)?;
        self.alpha[arm][symbol] += 1.0;
        self.alpha_total[arm] += 1.0;
        self.counts[arm] += 1;
        self.outcomes[arm][symbol] += 1;
        self.step += 1;
        Ok(())
    }

    /// Adds per-symbol outcome counts for one arm at once. Order of
    /// observations is irrelevant under conjugacy.
    pub fn observe_counts(&mut self, arm: usize, outcomes: &[u64]) -> Result<()> {
        if arm >= self.arms() {
            return Err(Error::invalid("arm", format!("index {arm} out of range 0..{}", self.arms())));
        }
        Error::check_len("outcomes", self.symbols(), outcomes.len())?;
        let total: u64 = outcomes.iter().sum();
        for ((a, o), &c) in self.alpha[arm].iter_mut().zip(&mut self.outcomes[arm]).zip(outcomes) {
            *a += c as f64;
            *o += c;
        }
        self.alpha_total[arm] += total as f64;
        self.counts[arm] += total;
        self.step += total;
        Ok(())
    }

    /// Posterior mean of arm `arm`'s pmf. Truncated arms use the mean of
    /// the truncated Beta on symbol 1.
    pub fn posterior_mean(&self, arm: usize) -> Vec<f64> {
        if let Some(t) = self.truncations[arm] {
            let (a, b) = self.marginal(arm, 1);
            if let Ok(tb) = TruncatedBeta::new(a, b, t.lower, t.upper) {
                let m = tb.mean();
                return vec![1.0 - m, m];
            }
        }
        let total = self.alpha_total[arm];
        self.alpha[arm].iter().map(|a| a / total).collect()
    }
}

/// Value-to-value posterior transition for one sample record.
pub fn update_posterior(state: &PosteriorState, rec: &SampleRecord) -> Result<PosteriorState> {
    if rec.step != state.step {
        return Err(Error::invalid(
            "step",
            format!("record is for step {}, state is at step {}", rec.step, state.step),
        ));
    }
    let mut next = state.clone();
    next.observe(rec.arm, rec.symbol)?;
    Ok(next)
}
