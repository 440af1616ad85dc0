//! Maximizing one arm's probability inside a KL ball around a reference policy.
//!
//! The optimal distribution keeps the reference's conditional distributions on
//! the target and on its complement, so the whole problem collapses to a
//! Bernoulli one: the largest `q >= p` with `KL(Ber(q) || Ber(p)) <= ε`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bandit::SimplexDistribution;
use crate::error::{invalid, Error, Result};
use crate::lambert::lambert_w;

/// Absolute tolerance on the boosted probability.
pub const BISECTION_TOLERANCE: f64 = 1e-12;

/// Per-step KL budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Finite(f64),
    /// No constraint: the target arm receives all the mass.
    Unconstrained,
}

impl Budget {
    pub fn finite(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return invalid(format!("KL budget must be finite and >= 0, got {epsilon}"));
        }
        Ok(Budget::Finite(epsilon))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Budget::Finite(e) if *e == 0.0)
    }

    /// The budget as a number, with `Unconstrained` mapped to infinity.
    pub fn value(&self) -> f64 {
        match *self {
            Budget::Finite(e) => e,
            Budget::Unconstrained => f64::INFINITY,
        }
    }

    /// Label used in output series names.
    pub fn label(&self) -> String {
        match *self {
            Budget::Finite(e) => format!("eps={e}"),
            Budget::Unconstrained => "eps=inf".to_string(),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Finite(e) => write!(f, "{e}"),
            Budget::Unconstrained => f.write_str("unconstrained"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unconstrained" | "inf" | "infinity" => Ok(Budget::Unconstrained),
            other => {
                let e: f64 = other
                    .parse()
                    .map_err(|_| Error::Config(format!("cannot parse KL budget {s:?}")))?;
                if e.is_infinite() && e > 0.0 {
                    Ok(Budget::Unconstrained)
                } else {
                    Budget::finite(e)
                }
            }
        }
    }
}

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Budget::Finite(e) => serializer.serialize_f64(e),
            Budget::Unconstrained => serializer.serialize_str("unconstrained"),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Number(e) if e.is_infinite() && e > 0.0 => Ok(Budget::Unconstrained),
            Repr::Number(e) => Budget::finite(e),
            Repr::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Which solver produces the boosted probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoostSolver {
    /// Bisection on the Bernoulli KL constraint.
    #[default]
    Exact,
    /// Closed-form Lambert-W underestimator.
    Approximate,
}

/// Result of boosting one arm of a reference distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoostSolution {
    /// Probability given to the target arm.
    pub q_star: f64,
    pub distribution: SimplexDistribution,
    /// `KL(Ber(q_star) || Ber(p))`, which equals the full-vector divergence.
    pub achieved_kl: f64,
}

/// `KL(Ber(q) || Ber(p))` with `0 log 0 = 0`.
pub fn bernoulli_kl(q: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("Bernoulli KL needs 0 < p < 1, got {p}"));
    }
    if !(0.0..=1.0).contains(&q) {
        return invalid(format!("Bernoulli KL needs 0 <= q <= 1, got {q}"));
    }
    Ok(bernoulli_kl_unchecked(q, p))
}

fn bernoulli_kl_unchecked(q: f64, p: f64) -> f64 {
    let head = if q == 0.0 { 0.0 } else { q * (q / p).ln() };
    let tail = if q == 1.0 {
        0.0
    } else {
        (1.0 - q) * ((-q).ln_1p() - (-p).ln_1p())
    };
    (head + tail).max(0.0)
}

/// Largest `q >= p` with `KL(Ber(q) || Ber(p)) <= ε`.
pub fn boost_probability(p: f64, budget: Budget) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return invalid(format!("boost needs 0 < p <= 1, got {p}"));
    }
    let epsilon = match budget {
        Budget::Unconstrained => return Ok(1.0),
        Budget::Finite(e) if !(e >= 0.0) => {
            return invalid(format!("KL budget must be >= 0, got {e}"))
        }
        Budget::Finite(e) => e,
    };
    if epsilon == 0.0 || p == 1.0 {
        return Ok(p);
    }
    // KL(Ber(1) || Ber(p)) = -ln p
    if epsilon >= -p.ln() {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (p, 1.0);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if bernoulli_kl_unchecked(mid, p) <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOLERANCE * hi {
            break;
        }
    }
    Ok(lo)
}

/// Analytic underestimator
/// `max{ε / W(ε/p), p, p + sqrt(ε p (1-p))}`, capped at 1.
pub fn boost_probability_approx(p: f64, epsilon: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("approximate boost needs 0 < p < 1, got {p}"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid(format!("approximate boost needs ε > 0, got {epsilon}"));
    }
    let lambert_branch = epsilon / lambert_w(epsilon / p)?;
    let local_branch = p + (epsilon * p * (1.0 - p)).sqrt();
    Ok(lambert_branch.max(p).max(local_branch).min(1.0))
}

/// Boosts `target` in `reference` as far as the budget allows, spreading the
/// remaining mass over the other arms in proportion to the reference.
pub fn boost_distribution(
    reference: &SimplexDistribution,
    target: usize,
    budget: Budget,
) -> Result<BoostSolution> {
    boost_distribution_with(reference, target, budget, BoostSolver::Exact)
}

pub fn boost_distribution_with(
    reference: &SimplexDistribution,
    target: usize,
    budget: Budget,
    solver: BoostSolver,
) -> Result<BoostSolution> {
    let k = reference.len();
    if target >= k {
        return invalid(format!("target arm {target} out of range for {k} arms"));
    }
    let p = reference.probs()[target];
    if p <= 0.0 {
        return Err(Error::Infeasible(format!(
            "arm {target} has zero reference probability"
        )));
    }
    let unchanged = || BoostSolution {
        q_star: p,
        distribution: reference.clone(),
        achieved_kl: 0.0,
    };
    if budget.is_zero() || p >= 1.0 {
        return Ok(unchanged());
    }
    let q_star = match (solver, budget) {
        (BoostSolver::Approximate, Budget::Finite(e)) => boost_probability_approx(p, e)?,
        _ => boost_probability(p, budget)?,
    };
    if q_star <= p {
        return Ok(unchanged());
    }
    let distribution = if q_star >= 1.0 {
        SimplexDistribution::point_mass(k, target)
    } else {
        let rest = (1.0 - q_star) / (1.0 - p);
        let probs = reference
            .probs()
            .iter()
            .enumerate()
            .map(|(j, &r)| if j == target { q_star } else { r * rest })
            .collect();
        SimplexDistribution::from_weights(probs)?
    };
    let achieved_kl = if q_star >= 1.0 {
        -p.ln()
    } else {
        bernoulli_kl_unchecked(q_star, p)
    };
    Ok(BoostSolution {
        q_star: q_star.min(1.0),
        distribution,
        achieved_kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_kl_values() {
        assert_eq!(bernoulli_kl(0.3, 0.3).unwrap(), 0.0);
        assert!((bernoulli_kl(1.0, 0.01).unwrap() - 4.605_170_185_988_091).abs() < 1e-12);
        assert!(bernoulli_kl(0.2, 0.0).is_err());
        assert!(bernoulli_kl(0.2, 1.0).is_err());
        assert!(bernoulli_kl(1.2, 0.5).is_err());
        // 0.2 ln 2 + 0.8 ln(8/9) computed independently.
        let expected = 0.2 * 2f64.ln() + 0.8 * (0.8f64 / 0.9).ln();
        assert!((bernoulli_kl(0.2, 0.1).unwrap() - expected).abs() < 1e-15);
        assert!((bernoulli_kl(0.0, 0.25).unwrap() + 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn boost_endpoints() {
        assert_eq!(boost_probability(0.3, Budget::Finite(0.0)).unwrap(), 0.3);
        assert_eq!(boost_probability(0.01, Budget::Finite(5.0)).unwrap(), 1.0);
        assert_eq!(boost_probability(0.01, Budget::Unconstrained).unwrap(), 1.0);
        assert_eq!(boost_probability(1.0, Budget::Finite(0.1)).unwrap(), 1.0);
        assert!(boost_probability(0.0, Budget::Finite(0.1)).is_err());
        assert!(boost_probability(-0.1, Budget::Finite(0.1)).is_err());
        assert!(boost_probability(0.1, Budget::Finite(-0.1)).is_err());
    }

    #[test]
    fn boost_hits_the_constraint() {
        for &(p, e) in &[(0.1, 0.1), (1e-6, 0.1), (0.5, 0.01), (1e-200, 1e-3), (0.9, 0.05)] {
            let q = boost_probability(p, Budget::Finite(e)).unwrap();
            assert!(bernoulli_kl(q, p).unwrap() <= e);
            let above = (q + 1e-9).min(1.0);
            assert!(bernoulli_kl(above, p).unwrap() > e, "p={p} e={e} q={q}");
        }
    }

    #[test]
    fn approx_branches() {
        let q_hat = boost_probability_approx(0.5, 0.1).unwrap();
        assert!(q_hat >= 0.5 + (0.025f64).sqrt() - 1e-15);
        assert!(q_hat <= boost_probability(0.5, Budget::Finite(0.1)).unwrap() + 1e-9);
        // ε/p <= e: the Lambert branch never drops below p.
        assert!(boost_probability_approx(0.2, 0.1).unwrap() >= 0.2);
        assert!(boost_probability_approx(0.0, 0.1).is_err());
        assert!(boost_probability_approx(0.5, 0.0).is_err());
    }

    #[test]
    fn zero_budget_is_identity() {
        let r = SimplexDistribution::new(vec![0.7, 0.2, 0.1]).unwrap();
        let s = boost_distribution(&r, 2, Budget::Finite(0.0)).unwrap();
        assert_eq!(s.distribution, r);
        assert_eq!(s.achieved_kl, 0.0);
    }

    #[test]
    fn point_mass_reference_unchanged() {
        let r = SimplexDistribution::point_mass(3, 1);
        let s = boost_distribution(&r, 1, Budget::Finite(0.5)).unwrap();
        assert_eq!(s.distribution, r);
        assert_eq!(s.achieved_kl, 0.0);
        assert!(matches!(
            boost_distribution(&r, 0, Budget::Finite(0.5)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn boost_keeps_proportions() {
        let r = SimplexDistribution::new(vec![0.7, 0.2, 0.1]).unwrap();
        let s = boost_distribution(&r, 2, Budget::Finite(0.1)).unwrap();
        let q = boost_probability(0.1, Budget::Finite(0.1)).unwrap();
        let d = s.distribution.probs();
        assert_eq!(d[2], q);
        assert!((d[0] / d[1] - 3.5).abs() < 1e-12);
        let full = s.distribution.kl_divergence(&r);
        assert!((full - s.achieved_kl).abs() < 1e-9);
        assert!(full <= 0.1 + 1e-9);
    }

    #[test]
    fn unconstrained_is_point_mass() {
        let r = SimplexDistribution::new(vec![0.7, 0.2, 0.1]).unwrap();
        let s = boost_distribution(&r, 1, Budget::Unconstrained).unwrap();
        assert_eq!(s.distribution, SimplexDistribution::point_mass(3, 1));
        assert!((s.achieved_kl + 0.2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn budget_parsing() {
        assert_eq!("inf".parse::<Budget>().unwrap(), Budget::Unconstrained);
        assert_eq!("0.1".parse::<Budget>().unwrap(), Budget::Finite(0.1));
        assert!("-1".parse::<Budget>().is_err());
        assert!("abc".parse::<Budget>().is_err());
        let v: Vec<Budget> = serde_json::from_str(r#"[0, 0.001, "unconstrained"]"#).unwrap();
        assert_eq!(v, vec![Budget::Finite(0.0), Budget::Finite(0.001), Budget::Unconstrained]);
    }
}
