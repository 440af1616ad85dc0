//! Bernoulli trials whose success probability `c / (M_t + m0)` falls with the
//! number of successes `M_t` so far. Repeated boosting of a public-suboptimal
//! arm behaves like this process, which grows as `sqrt(2 c T)`.

use serde::{Deserialize, Serialize};

use crate::bandit::RandomSource;
use crate::error::{invalid, Result};

/// Parameters of the decaying-success process; requires `0 < c <= m0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayProcessParams {
    pub c: f64,
    pub m0: f64,
    pub horizon: u64,
}

impl DecayProcessParams {
    pub fn new(c: f64, m0: f64, horizon: u64) -> Result<Self> {
        let params = Self { c, m0, horizon };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return invalid(format!("c must be positive, got {}", self.c));
        }
        if !(self.m0 >= self.c && self.m0.is_finite()) {
            return invalid(format!("need 0 < c <= m0, got c={} m0={}", self.c, self.m0));
        }
        if self.horizon == 0 {
            return invalid("horizon must be positive");
        }
        Ok(())
    }

    /// Success probability after `successes` successes.
    pub fn success_probability(&self, successes: u64) -> f64 {
        (self.c / (successes as f64 + self.m0)).min(1.0)
    }

    /// `E[T_h] = h(h-1)/(2c) + m0 h / c`, the mean trial index of the h-th success.
    pub fn expected_hitting_time(&self, h: u64) -> f64 {
        let h = h as f64;
        h * (h - 1.0) / (2.0 * self.c) + self.m0 * h / self.c
    }

    /// The asymptotic count `sqrt(2 c T)`.
    pub fn asymptotic_count(&self, t: u64) -> f64 {
        (2.0 * self.c * t as f64).sqrt()
    }
}

/// Success counts: entry `t` holds the number of successes among the first
/// `t` trials, so the trace has `horizon + 1` entries starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTrace {
    pub success_counts: Vec<u64>,
}

impl SuccessTrace {
    pub fn final_count(&self) -> u64 {
        *self.success_counts.last().unwrap_or(&0)
    }

    /// Trial index of the `h`-th success, if it happened.
    pub fn hitting_time(&self, h: u64) -> Option<u64> {
        if h == 0 {
            return Some(0);
        }
        self.success_counts
            .iter()
            .position(|&m| m >= h)
            .map(|t| t as u64)
    }
}

/// Direct simulation with one uniform draw per trial.
pub fn simulate_decay(params: &DecayProcessParams, rng: &mut RandomSource) -> Result<SuccessTrace> {
    params.validate()?;
    let mut counts = Vec::with_capacity(params.horizon as usize + 1);
    let mut successes = 0u64;
    counts.push(0);
    for _ in 0..params.horizon {
        if rng.uniform() < params.success_probability(successes) {
            successes += 1;
        }
        counts.push(successes);
    }
    Ok(SuccessTrace {
        success_counts: counts,
    })
}

/// Number of successes after `horizon` trials, by direct simulation without
/// storing the trace.
pub fn simulate_decay_final(params: &DecayProcessParams, rng: &mut RandomSource) -> Result<u64> {
    params.validate()?;
    let mut successes = 0u64;
    for _ in 0..params.horizon {
        if rng.uniform() < params.success_probability(successes) {
            successes += 1;
        }
    }
    Ok(successes)
}

// Trials until the next success, Geometric(p) on {1, 2, ...}.
fn geometric_gap(p: f64, rng: &mut RandomSource) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    let u = 1.0 - rng.uniform();
    (u.ln() / (-p).ln_1p()).floor() as u64 + 1
}

/// Same law as [`simulate_decay_final`], sampling the geometric waiting
/// times between successes instead of every trial: `O(M_T)` work.
pub fn simulate_decay_jumps(params: &DecayProcessParams, rng: &mut RandomSource) -> Result<u64> {
    params.validate()?;
    let mut time = 0u64;
    let mut successes = 0u64;
    loop {
        let gap = geometric_gap(params.success_probability(successes), rng);
        match time.checked_add(gap) {
            Some(t) if t <= params.horizon => {
                time = t;
                successes += 1;
            }
            _ => return Ok(successes),
        }
    }
}

/// Trial index of the `h`-th success, as a sum of independent geometric waits.
pub fn sample_hitting_time(params: &DecayProcessParams, h: u64, rng: &mut RandomSource) -> u64 {
    (0..h)
        .map(|i| geometric_gap(params.success_probability(i), rng))
        .sum()
}

/// Predicted pull count `sqrt(4 ε σ² share t) / gap` of a public-suboptimal
/// arm that receives a fraction `share` of the boosts.
pub fn predicted_pulls(epsilon: f64, variance: f64, gap: f64, share: f64, t: u64) -> Result<f64> {
    if !(gap > 0.0) {
        return invalid(format!(
            "public gap must be positive, got {gap}; the arm is publicly optimal"
        ));
    }
    if !(epsilon >= 0.0 && variance > 0.0) {
        return invalid("need ε >= 0 and variance > 0");
    }
    if !(share > 0.0 && share <= 1.0) {
        return invalid(format!("boost share must lie in (0, 1], got {share}"));
    }
    Ok((4.0 * epsilon * variance * share * t as f64).sqrt() / gap)
}
