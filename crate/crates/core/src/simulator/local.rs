//! Random perturbations of the true pmfs inside small l2 balls, drawn
//! uniformly with respect to the flat measure on the simplex.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acceptance rate below which rejection sampling gives up.
pub const MIN_ACCEPTANCE: f64 = 1e-6;
/// Draws attempted per arm before declaring the acceptance rate too small.
const MAX_ATTEMPTS: u64 = 8_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAveragingSpec {
    /// Per-arm l2 radius of the ball around the true pmf.
    pub radii: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSample {
    pub pmfs: Vec<Vec<f64>>,
    /// Per-arm fraction of proposals accepted; 1 where the draw was exact.
    pub acceptance: Vec<f64>,
}

fn flat_dirichlet<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = Exp1.sample(rng);
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Draws one pmf per arm uniformly from the ball of radius `radii[k]`
/// around `pmfs[k]` intersected with the simplex.
///
/// Two-symbol arms are sampled exactly: the ball is a segment, and the flat
/// measure on it is uniform in the first coordinate. Larger alphabets use
/// rejection from the flat Dirichlet.
pub fn sample_local<R: Rng + ?Sized>(spec: &LocalAveragingSpec, pmfs: &[Vec<f64>], rng: &mut R) -> Result<LocalSample> {
    Error::check_len("radii", pmfs.len(), spec.radii.len())?;
    let mut out = Vec::with_capacity(pmfs.len());
    let mut acceptance = Vec::with_capacity(pmfs.len());
    for (p, &r) in pmfs.iter().zip(&spec.radii) {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::invalid("radii", format!("radius must be non-negative, got {r}")));
        }
        if r == 0.0 {
            out.push(p.clone());
            acceptance.push(1.0);
            continue;
        }
        if p.len() == 2 {
            let half = r / std::f64::consts::SQRT_2;
            let lo = (p[0] - half).max(0.0);
            let hi = (p[0] + half).min(1.0);
            let x = rng.random_range(lo..=hi);
            out.push(vec![x, 1.0 - x]);
            acceptance.push(1.0);
            continue;
        }
        let mut draw = vec![0.0; p.len()];
        let mut attempts = 0u64;
        loop {
            attempts += 1;
            flat_dirichlet(rng, &mut draw);
            if distance(&draw, p) <= r {
                break;
            }
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::RadiusTooSmall {
                    rate: 1.0 / attempts as f64,
                });
            }
        }
        let rate = 1.0 / attempts as f64;
        if rate < MIN_ACCEPTANCE {
            return Err(Error::RadiusTooSmall { rate });
        }
        out.push(draw);
        acceptance.push(rate);
    }
    Ok(LocalSample { pmfs: out, acceptance })
}
