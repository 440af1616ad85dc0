//! Thompson Sampling arm probabilities: the chance that each arm's Gaussian
//! posterior draw is the largest.
//!
//! For arm `a`, substituting `X_a = μ_a + σ_a √2 u` gives
//!
//! ```text
//! P(a is max) = (1/√π) ∫ exp(-u²) Π_{j≠a} Φ((μ_a - μ_j + σ_a √2 u) / σ_j) du
//! ```
//!
//! which [`optimal_arm_probabilities`] evaluates with a Gauss-Hermite rule.
//! When posterior widths differ a lot the integrand of the wider arm has a
//! sharp step, and when an arm lies far behind a sharper rival its integrand
//! sits deep in the tail; a fixed rule loses accuracy in both.
//! [`optimal_arm_probabilities_split`] instead integrates each arm's log
//! integrand over Gauss-Legendre panels placed around its mode and the rival
//! steps, which keeps probabilities accurate down to `1e-300`.

use serde::{Deserialize, Serialize};

use crate::bandit::{argmax, RandomSource, SimplexDistribution};
use crate::error::{invalid, Error, Result};
use crate::normal;
use crate::quadrature::{LegendreRule, QuadratureRule};

/// Smallest probability handed to downstream consumers.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Maximum deviation of the raw quadrature mass from 1.
pub const RAW_MASS_TOLERANCE: f64 = 1e-4;

const MIN_NODES: usize = 8;

// Mass below which the leading arm's probability is taken as a complement.
const COMPLEMENT_THRESHOLD: f64 = 0.25;

/// Independent Gaussian posteriors over arm means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBeliefs {
    means: Vec<f64>,
    stddevs: Vec<f64>,
}

impl GaussianBeliefs {
    pub fn new(means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        if means.len() != stddevs.len() {
            return invalid(format!(
                "{} means but {} standard deviations",
                means.len(),
                stddevs.len()
            ));
        }
        if means.is_empty() {
            return invalid("beliefs need at least one arm");
        }
        if let Some(sd) = stddevs.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return invalid(format!("posterior stddev must be positive, got {sd}"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return invalid("posterior means must be finite");
        }
        Ok(Self { means, stddevs })
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    /// One joint posterior draw.
    pub fn sample(&self, rng: &mut RandomSource) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.stddevs)
            .map(|(&m, &s)| rng.normal(m, s))
            .collect()
    }

    /// Argmax of one joint posterior draw, without allocating.
    pub fn sample_argmax(&self, rng: &mut RandomSource) -> usize {
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for (i, (&m, &s)) in self.means.iter().zip(&self.stddevs).enumerate() {
            let v = rng.normal(m, s);
            if v > best_value {
                best = i;
                best_value = v;
            }
        }
        best
    }
}

fn check_arms(beliefs: &GaussianBeliefs) -> Result<()> {
    if beliefs.num_arms() < 2 {
        return invalid("optimal-arm probabilities need at least 2 arms");
    }
    Ok(())
}

fn check_nodes(nodes: usize) -> Result<()> {
    if nodes < MIN_NODES {
        return invalid(format!(
            "quadrature rule has {nodes} nodes, need at least {MIN_NODES}"
        ));
    }
    Ok(())
}

fn floor_and_normalize(raw: Vec<f64>) -> Result<SimplexDistribution> {
    let total: f64 = raw.iter().sum();
    if !((total - 1.0).abs() <= RAW_MASS_TOLERANCE) {
        return Err(Error::NumericalFailure(format!(
            "quadrature mass {total} deviates from 1 by more than {RAW_MASS_TOLERANCE}"
        )));
    }
    let floored: Vec<f64> = raw.into_iter().map(|p| p.max(PROBABILITY_FLOOR)).collect();
    SimplexDistribution::from_weights(floored)
}

/// Probability that each arm's posterior draw is the maximum, by fixed
/// Gauss-Hermite quadrature over the arm's own posterior.
pub fn optimal_arm_probabilities(
    beliefs: &GaussianBeliefs,
    rule: &QuadratureRule,
) -> Result<SimplexDistribution> {
    floor_and_normalize(optimal_arm_raw_probabilities(beliefs, rule)?)
}

/// Unnormalized Gauss-Hermite integrals, before the mass check.
pub fn optimal_arm_raw_probabilities(beliefs: &GaussianBeliefs, rule: &QuadratureRule) -> Result<Vec<f64>> {
    check_arms(beliefs)?;
    check_nodes(rule.len())?;
    let (means, sds) = (beliefs.means(), beliefs.stddevs());
    let k = means.len();
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let raw = (0..k)
        .map(|a| {
            let scale = sds[a] * std::f64::consts::SQRT_2;
            let integral = rule.integrate(|u| {
                let x = means[a] + scale * u;
                let mut prod = 1.0;
                for j in (0..k).filter(|&j| j != a) {
                    prod *= normal::cdf((x - means[j]) / sds[j]);
                    if prod == 0.0 {
                        break;
                    }
                }
                prod
            });
            integral * inv_sqrt_pi
        })
        .collect();
    Ok(raw)
}

// Drop in the log-integrand at which the integration range is cut.
const LOG_DEPTH: f64 = 32.0;
// Rivals at least this much sharper than the integrated arm get panel breaks
// at their step.
const SHARP_RATIO: f64 = 3.0;
// Mode curvature beyond which the mode neighbourhood gets its own panels.
const SHARP_CURVATURE: f64 = 4.0;
// Standardized rival argument at which its step counts as finished.
const STEP_END: f64 = 6.0;
const MAX_PANELS: usize = 16;
// Laplace deviations covered by the panels next to a sharp mode.
const MODE_PANEL: f64 = 2.0;
// Rivals this many deviations below the point change ln Phi by under 5e-11.
const NEGLIGIBLE_STEP: f64 = 6.5;

// h(x) = ln phi(x) + Σ_j ln Phi(offset_j + ratio_j x) in the standardized
// variable x of one arm. h is concave with h'' <= -1.
struct LogIntegrand {
    rivals: Vec<(f64, f64)>,
}

impl LogIntegrand {
    fn new(beliefs: &GaussianBeliefs, a: usize) -> Self {
        let (means, sds) = (beliefs.means(), beliefs.stddevs());
        let rivals = (0..means.len())
            .filter(|&j| j != a)
            .map(|j| ((means[a] - means[j]) / sds[j], sds[a] / sds[j]))
            .collect();
        Self { rivals }
    }

    fn value(&self, x: f64) -> f64 {
        let mut h = normal::ln_pdf(x);
        for &(offset, ratio) in &self.rivals {
            let z = offset + ratio * x;
            if z < NEGLIGIBLE_STEP {
                h += normal::ln_cdf(z);
            }
        }
        h
    }

    // exp(h(x) - shift), with every Gaussian exponent folded into one exp.
    fn relative(&self, x: f64, shift: f64) -> f64 {
        let mut exponent = -0.5 * x * x - normal::LN_SQRT_2PI - shift;
        let mut factor = 1.0;
        for &(offset, ratio) in &self.rivals {
            let z = offset + ratio * x;
            if z <= 0.0 {
                exponent -= 0.5 * z * z;
                factor *= normal::scaled_lower_tail(-z);
            } else if z < NEGLIGIBLE_STEP {
                factor *= 1.0 - (-0.5 * z * z).exp() * normal::scaled_lower_tail(z);
            }
        }
        factor * exponent.exp()
    }

    fn value_and_slope(&self, x: f64) -> (f64, f64) {
        let mut h = normal::ln_pdf(x);
        let mut slope = -x;
        for &(offset, ratio) in &self.rivals {
            let z = offset + ratio * x;
            if z < NEGLIGIBLE_STEP {
                let (ln, lambda) = normal::ln_cdf_and_mills(z);
                h += ln;
                slope += ratio * lambda;
            }
        }
        (h, slope)
    }

    // Slope and curvature.
    fn derivatives(&self, x: f64) -> (f64, f64) {
        let mut slope = -x;
        let mut curvature = -1.0;
        for &(offset, ratio) in &self.rivals {
            let z = offset + ratio * x;
            if z >= NEGLIGIBLE_STEP {
                continue;
            }
            let lambda = normal::mills(z);
            slope += ratio * lambda;
            curvature -= ratio * ratio * lambda * (lambda + z);
        }
        (slope, curvature.min(-1.0))
    }

    // Root of the decreasing slope by Newton steps kept inside a bracket that
    // widens until it holds the root.
    fn mode(&self) -> f64 {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut x = 0.0;
        for _ in 0..200 {
            let (g, c) = self.derivatives(x);
            if g == 0.0 {
                return x;
            }
            if g > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - g / c;
            let next = if newton > lo && newton < hi {
                newton
            } else if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo + 2.0 * (1.0 + lo.abs())
            } else {
                hi - 2.0 * (1.0 + hi.abs())
            };
            if (next - x).abs() <= 1e-9 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }

    // Point on side `direction` of the mode where h has dropped by LOG_DEPTH.
    // Since h'' <= -1 the drop is reached within sqrt(2 LOG_DEPTH). Newton
    // steps on the concave h approach the crossing from outside, so every
    // iterate is a safe cut.
    fn cut(&self, mode: f64, peak: f64, curvature: f64, direction: f64) -> f64 {
        let target = peak - LOG_DEPTH;
        // Try the quadratic estimate first; it is usually already outside.
        let mut x = mode + direction * (2.0 * LOG_DEPTH / -curvature).sqrt();
        let (mut value, mut slope) = self.value_and_slope(x);
        if value >= target {
            x = mode + direction * (2.0 * LOG_DEPTH).sqrt();
            (value, slope) = self.value_and_slope(x);
        }
        for _ in 0..8 {
            let gap = value - target;
            if gap >= 0.0 || slope == 0.0 {
                break;
            }
            let next = x - gap / slope;
            if (next - mode) * direction <= 0.0 || (next - x).abs() < 0.02 * (x - mode).abs() {
                break;
            }
            x = next;
            (value, slope) = self.value_and_slope(x);
        }
        x
    }
}

/// `ln P(arm a is max)` by Gauss-Legendre panels over the range where the
/// integrand is within `e^-32` of its peak, with breaks at the mode and at
/// the steps of sharper rivals.
fn split_log_probability(beliefs: &GaussianBeliefs, rule: &LegendreRule, a: usize) -> f64 {
    let h = LogIntegrand::new(beliefs, a);
    let mode = h.mode();
    let peak = h.value(mode);
    let (_, curvature) = h.derivatives(mode);
    let (left, right) = (h.cut(mode, peak, curvature, -1.0), h.cut(mode, peak, curvature, 1.0));

    let mut breaks = [0.0; MAX_PANELS + 1];
    let mut n = 0;
    let mut push = |x: f64, n: &mut usize| {
        if x > left && x < right && *n < MAX_PANELS - 1 {
            breaks[*n] = x;
            *n += 1;
        }
    };
    push(mode, &mut n);
    if -curvature > SHARP_CURVATURE {
        // Separate panels for the part of each side near a sharp mode.
        let width = MODE_PANEL / (-curvature).sqrt();
        if mode - left > 2.0 * width {
            push(mode - width, &mut n);
        }
        if right - mode > 2.0 * width {
            push(mode + width, &mut n);
        }
    }
    // A sharper rival whose step finishes left of the mode cuts the integrand
    // off there; the step and its lower tail get panels of their own.
    for &(offset, ratio) in &h.rivals {
        if ratio >= SHARP_RATIO {
            let step = -offset / ratio;
            let end = step + STEP_END / ratio;
            if end < mode {
                push(step - STEP_END / ratio, &mut n);
                push(step, &mut n);
                push(end, &mut n);
            }
        }
    }
    let inner = &mut breaks[..n];
    inner.sort_by(f64::total_cmp);

    let mut total = 0.0;
    let mut lo = left;
    for &hi in inner.iter().chain(std::iter::once(&right)) {
        if hi > lo {
            total += rule.integrate(lo, hi, |x| h.relative(x, peak));
            lo = hi;
        }
    }
    peak + total.ln()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Natural logs of the optimal-arm probabilities by split Gauss-Legendre
/// quadrature, before any flooring.
pub fn optimal_arm_log_probabilities(
    beliefs: &GaussianBeliefs,
    rule: &LegendreRule,
) -> Result<Vec<f64>> {
    check_arms(beliefs)?;
    check_nodes(rule.len())?;
    Ok((0..beliefs.num_arms())
        .map(|a| split_log_probability(beliefs, rule, a))
        .collect())
}

/// Optimal-arm probabilities by per-arm Gauss-Legendre panels placed around
/// the mode of each integrand and the steps of sharper rivals, in log space.
/// Unlike the fixed Hermite rule this stays accurate when posterior widths
/// differ by orders of magnitude and for probabilities far in the tail.
///
/// When the arms other than the one with the highest mean carry little mass,
/// that arm receives the complement instead of its own integral.
pub fn optimal_arm_probabilities_split(
    beliefs: &GaussianBeliefs,
    rule: &LegendreRule,
) -> Result<SimplexDistribution> {
    check_arms(beliefs)?;
    check_nodes(rule.len())?;
    let k = beliefs.num_arms();
    let lead = argmax(beliefs.means());
    let mut logs = vec![0.0; k];
    for a in (0..k).filter(|&a| a != lead) {
        logs[a] = split_log_probability(beliefs, rule, a);
    }
    let others: f64 = (0..k).filter(|&a| a != lead).map(|a| logs[a].exp()).sum();
    if others <= COMPLEMENT_THRESHOLD {
        let probs = (0..k)
            .map(|a| {
                if a == lead {
                    1.0 - others
                } else {
                    logs[a].exp().max(PROBABILITY_FLOOR)
                }
            })
            .collect();
        return SimplexDistribution::from_weights(probs);
    }
    logs[lead] = split_log_probability(beliefs, rule, lead);
    let raw_mass = others + logs[lead].exp();
    if !((raw_mass - 1.0).abs() <= RAW_MASS_TOLERANCE) {
        return Err(Error::NumericalFailure(format!(
            "split quadrature mass {raw_mass} deviates from 1"
        )));
    }
    let norm = log_sum_exp(&logs);
    let floored = logs
        .iter()
        .map(|l| (l - norm).exp().max(PROBABILITY_FLOOR))
        .collect();
    SimplexDistribution::from_weights(floored)
}

/// Empirical frequency with which each arm wins `samples` joint posterior draws.
pub fn optimal_arm_probabilities_mc(
    beliefs: &GaussianBeliefs,
    samples: u64,
    rng: &mut RandomSource,
) -> Result<SimplexDistribution> {
    if samples == 0 {
        return invalid("Monte-Carlo estimate needs at least one sample");
    }
    let mut wins = vec![0u64; beliefs.num_arms()];
    for _ in 0..samples {
        wins[beliefs.sample_argmax(rng)] += 1;
    }
    Ok(SimplexDistribution::from_raw(
        wins.into_iter()
            .map(|w| w as f64 / samples as f64)
            .collect(),
    ))
}

/// How optimal-arm probabilities are evaluated inside the agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMethod {
    /// Fixed 32-node Gauss-Hermite rule.
    GaussHermite,
    /// Gauss-Legendre panels split at the integrand's features.
    #[default]
    SplitLegendre,
    /// Frequency over this many joint posterior draws.
    MonteCarlo { samples: u64 },
}

impl ProbabilityMethod {
    pub fn evaluate(
        &self,
        beliefs: &GaussianBeliefs,
        rng: &mut RandomSource,
    ) -> Result<SimplexDistribution> {
        match *self {
            ProbabilityMethod::GaussHermite => {
                optimal_arm_probabilities(beliefs, QuadratureRule::default_rule())
            }
            ProbabilityMethod::SplitLegendre => {
                optimal_arm_probabilities_split(beliefs, LegendreRule::default_rule())
            }
            ProbabilityMethod::MonteCarlo { samples } => {
                optimal_arm_probabilities_mc(beliefs, samples, rng)
            }
        }
    }
}

/// Arm with the largest probability, lowest index on ties.
pub fn most_probable_arm(probs: &SimplexDistribution) -> usize {
    argmax(probs.probs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule() -> &'static QuadratureRule {
        QuadratureRule::default_rule()
    }

    fn legendre() -> &'static LegendreRule {
        LegendreRule::default_rule()
    }

    fn both(beliefs: &GaussianBeliefs) -> [SimplexDistribution; 2] {
        [
            optimal_arm_probabilities(beliefs, rule()).unwrap(),
            optimal_arm_probabilities_split(beliefs, legendre()).unwrap(),
        ]
    }

    #[test]
    fn symmetric_beliefs_are_uniform() {
        let b = GaussianBeliefs::new(vec![0.3, 0.3], vec![0.2, 0.2]).unwrap();
        for p in both(&b) {
            assert!((p.probs()[0] - 0.5).abs() < 1e-12);
        }
        let b = GaussianBeliefs::new(vec![1.0; 5], vec![0.7; 5]).unwrap();
        for p in both(&b) {
            for &x in p.probs() {
                assert!((x - 0.2).abs() < 1e-10, "{x}");
            }
        }
    }

    #[test]
    fn two_arm_closed_form() {
        // P(X_0 > X_1) = Phi((m0 - m1) / sqrt(s0^2 + s1^2))
        let b = GaussianBeliefs::new(vec![0.6, 0.3], vec![0.1, 0.2]).unwrap();
        let exact = normal::cdf(0.3 / (0.05f64).sqrt());
        let [plain, split] = both(&b);
        assert!((plain.probs()[0] - exact).abs() < 1e-6, "{:?}", plain.probs());
        assert!((split.probs()[0] - exact).abs() < 1e-6, "{:?} vs {exact}", split.probs());
    }

    #[test]
    fn split_keeps_deep_tail_probabilities() {
        // Arm 1 is 0.6 behind a very sharp best arm with 400 pulls vs 3e5.
        let (n1, n0) = (400.0f64, 3e5f64);
        let b = GaussianBeliefs::new(vec![0.6, 0.0], vec![1.0 / n0.sqrt(), 1.0 / n1.sqrt()])
            .unwrap();
        let exact = normal::cdf(-0.6 / (1.0 / n0 + 1.0 / n1).sqrt());
        let split = optimal_arm_probabilities_split(&b, legendre()).unwrap();
        assert!((split.probs()[1] / exact - 1.0).abs() < 1e-5, "{}", split.probs()[1]);
        let plain = optimal_arm_probabilities(&b, rule()).unwrap();
        assert!(plain.probs()[1] < 1e-3 * exact);
    }

    #[test]
    fn split_handles_wide_arm_above_sharp_rival() {
        // The wide arm's integrand is a Gaussian cut off by a near-indicator.
        let b = GaussianBeliefs::new(vec![0.17, 0.79], vec![0.002, 0.82]).unwrap();
        let exact = normal::cdf(0.62 / (0.002f64.powi(2) + 0.82f64.powi(2)).sqrt());
        let split = optimal_arm_probabilities_split(&b, legendre()).unwrap();
        assert!((split.probs()[1] - exact).abs() < 1e-7, "{} vs {exact}", split.probs()[1]);
        let logs = optimal_arm_log_probabilities(&b, legendre()).unwrap();
        let mass: f64 = logs.iter().map(|l| l.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-7, "{mass}");
    }

    #[test]
    fn log_probabilities_below_floor() {
        let b = GaussianBeliefs::new(vec![10.0, 0.0], vec![0.01, 0.1]).unwrap();
        let logs = optimal_arm_log_probabilities(&b, legendre()).unwrap();
        let exact = normal::ln_cdf(-10.0 / (0.0101f64).sqrt());
        assert!((logs[1] / exact - 1.0).abs() < 1e-9, "{} vs {exact}", logs[1]);
        let p = optimal_arm_probabilities_split(&b, legendre()).unwrap();
        assert_eq!(p.probs()[1], PROBABILITY_FLOOR);
    }

    #[test]
    fn monte_carlo_single_sample_is_point_mass() {
        let b = GaussianBeliefs::new(vec![0.0, 0.1, 0.2], vec![1.0; 3]).unwrap();
        let p = optimal_arm_probabilities_mc(&b, 1, &mut RandomSource::new(1)).unwrap();
        assert_eq!(p.probs().iter().filter(|&&x| x == 1.0).count(), 1);
        assert!(optimal_arm_probabilities_mc(&b, 0, &mut RandomSource::new(1)).is_err());
    }

    #[test]
    fn monte_carlo_symmetric_two_arms() {
        let b = GaussianBeliefs::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let p = optimal_arm_probabilities_mc(&b, 1_000_000, &mut RandomSource::new(9)).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 0.002);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GaussianBeliefs::new(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(GaussianBeliefs::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let b = GaussianBeliefs::new(vec![0.0], vec![1.0]).unwrap();
        assert!(optimal_arm_probabilities(&b, rule()).is_err());
        assert!(optimal_arm_probabilities_split(&b, legendre()).is_err());
        let b = GaussianBeliefs::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let small = QuadratureRule::gauss_hermite(4).unwrap();
        assert!(optimal_arm_probabilities(&b, &small).is_err());
    }

    #[test]
    fn translation_invariance() {
        let b = GaussianBeliefs::new(vec![0.6, 0.3, 0.0, 0.2], vec![0.1, 0.2, 0.3, 0.15]).unwrap();
        let shifted: Vec<f64> = b.means().iter().map(|m| m + 3.7).collect();
        let s = GaussianBeliefs::new(shifted, b.stddevs().to_vec()).unwrap();
        for (p, q) in both(&b).iter().zip(both(&s).iter()) {
            for (x, y) in p.probs().iter().zip(q.probs()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
