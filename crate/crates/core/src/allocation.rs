//! The boosting-allocation exponent `Γ(w)` and its maximizer.
//!
//! Notation: arm `1` is the best private arm and `i*` the best public arm,
//! `Δ_a` private gaps, `d_a` public gaps, `Δ = Δ_{i*}`, `d_1 = d_{best private}`.
//! Weights live on the arms other than `i*`:
//!
//! ```text
//! Γ(w) = min{ min_{a ∉ {1,i*}} sqrt(w_1 w_a) Δ_a² / (sqrt(w_1) d_a + sqrt(w_a) d_1),
//!             sqrt(w_1) Δ² / d_1 }
//! ```
//!
//! At the optimum every arm outside `{1, i*}` carries the same evidence `y`.
//! Writing `x_a = w_a / w_1`, each evidence term equals `sqrt(w_1) g_a(x_a)`
//! with `g_a(x) = sqrt(x) Δ_a² / (d_a + sqrt(x) d_1)`, whose inverse is
//! `x_a(y) = (y d_a / (Δ_a² - y d_1))²`. Maximizing `y / sqrt(1 + Σ x_a(y))`
//! gives the stationarity condition `F(y) = 1 + Σ x_a - (y/2) Σ x_a' = 0`.
//! `F` is strictly decreasing, so bisection finds its unique root; when the
//! root exceeds `Δ²/d_1` the `i*` term binds and `y* = Δ²/d_1`.

use serde::{Deserialize, Serialize};

use crate::bandit::{argmax, BanditInstance, SimplexDistribution};
use crate::error::{invalid, Error, Result};

/// Root-finding tolerance on `y`.
pub const ROOT_TOLERANCE: f64 = 1e-12;
/// Largest accepted `|F(y*)|` for an interior solution.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Private and public gaps of an instance with distinct best arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStructure {
    pub private_gaps: Vec<f64>,
    pub public_gaps: Vec<f64>,
    pub best_private: usize,
    pub best_public: usize,
    /// Private gap of the best public arm.
    pub delta_istar_priv: f64,
    /// Public gap of the best private arm.
    pub d1: f64,
}

impl GapStructure {
    pub fn from_instance(instance: &BanditInstance) -> Result<Self> {
        Self::from_means(&instance.public_means, &instance.private_means)
    }

    /// Gaps from arbitrary mean vectors, e.g. empirical estimates.
    pub fn from_means(public_means: &[f64], private_means: &[f64]) -> Result<Self> {
        let k = public_means.len();
        if k < 2 || private_means.len() != k {
            return invalid("need two mean vectors of equal length >= 2");
        }
        let best_private = argmax(private_means);
        let best_public = argmax(public_means);
        let top_priv = private_means[best_private];
        let top_pub = public_means[best_public];
        if private_means.iter().filter(|&&m| m == top_priv).count() > 1
            || public_means.iter().filter(|&&m| m == top_pub).count() > 1
        {
            return Err(Error::UnsupportedInstance(
                "best public and private arms must be unique".into(),
            ));
        }
        if best_private == best_public {
            return Err(Error::UnsupportedInstance(format!(
                "arm {best_private} is best both publicly and privately"
            )));
        }
        let private_gaps: Vec<f64> = private_means.iter().map(|m| top_priv - m).collect();
        let public_gaps: Vec<f64> = public_means.iter().map(|m| top_pub - m).collect();
        Ok(Self {
            delta_istar_priv: private_gaps[best_public],
            d1: public_gaps[best_private],
            private_gaps,
            public_gaps,
            best_private,
            best_public,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.private_gaps.len()
    }

    /// Arms carrying a weight, in increasing index order (all but `i*`).
    pub fn weighted_arms(&self) -> Vec<usize> {
        (0..self.num_arms())
            .filter(|&a| a != self.best_public)
            .collect()
    }

    /// Arms outside `{best private, best public}`.
    pub fn contested_arms(&self) -> Vec<usize> {
        (0..self.num_arms())
            .filter(|&a| a != self.best_public && a != self.best_private)
            .collect()
    }

    /// Position of `arm` in the weight vector.
    pub fn weight_index(&self, arm: usize) -> Option<usize> {
        match arm {
            a if a == self.best_public || a >= self.num_arms() => None,
            a if a > self.best_public => Some(a - 1),
            a => Some(a),
        }
    }

    /// `Δ² / d_1`, the value of the `i*` term at `w_1 = 1`.
    pub fn istar_cap(&self) -> f64 {
        self.delta_istar_priv * self.delta_istar_priv / self.d1
    }

    /// `g_a(x) = sqrt(x) Δ_a² / (d_a + sqrt(x) d_1)`.
    pub fn evidence_ratio(&self, arm: usize, x: f64) -> f64 {
        let r = x.sqrt();
        let da2 = self.private_gaps[arm].powi(2);
        r * da2 / (self.public_gaps[arm] + r * self.d1)
    }

    /// `x_a(y)`, the inverse of [`GapStructure::evidence_ratio`] on `[0, Δ_a²/d_1)`.
    pub fn ratio_for_evidence(&self, arm: usize, y: f64) -> f64 {
        self.sqrt_ratio(arm, y).powi(2)
    }

    fn sqrt_ratio(&self, arm: usize, y: f64) -> f64 {
        let da2 = self.private_gaps[arm].powi(2);
        y * self.public_gaps[arm] / (da2 - y * self.d1)
    }

    /// `x_a'(y) = 2 x_a(y) (1/y + d_1 / (Δ_a² - y d_1))`, written without the
    /// `1/y` singularity.
    pub fn ratio_derivative(&self, arm: usize, y: f64) -> f64 {
        let da2 = self.private_gaps[arm].powi(2);
        let denom = da2 - y * self.d1;
        let s = self.sqrt_ratio(arm, y);
        2.0 * s * self.public_gaps[arm] * da2 / (denom * denom)
    }

    fn ratio_second_derivative(&self, arm: usize, y: f64) -> f64 {
        let da2 = self.private_gaps[arm].powi(2);
        let denom = da2 - y * self.d1;
        let d = self.public_gaps[arm];
        let s = self.sqrt_ratio(arm, y);
        let s1 = d * da2 / (denom * denom);
        let s2 = 2.0 * d * da2 * self.d1 / (denom * denom * denom);
        2.0 * s1 * s1 + 2.0 * s * s2
    }

    /// Right end of the domain of `F`: `min_a Δ_a² / d_1` over contested arms.
    pub fn evidence_ceiling(&self) -> f64 {
        self.contested_arms()
            .into_iter()
            .map(|a| self.private_gaps[a].powi(2) / self.d1)
            .fold(f64::INFINITY, f64::min)
    }

    /// `F(y) = 1 + Σ x_a(y) - (y/2) Σ x_a'(y)`.
    pub fn stationarity(&self, y: f64) -> f64 {
        let arms = self.contested_arms();
        let sum_x: f64 = arms.iter().map(|&a| self.ratio_for_evidence(a, y)).sum();
        let sum_dx: f64 = arms.iter().map(|&a| self.ratio_derivative(a, y)).sum();
        1.0 + sum_x - 0.5 * y * sum_dx
    }

    fn stationarity_derivative(&self, y: f64) -> f64 {
        self.contested_arms()
            .into_iter()
            .map(|a| 0.5 * (self.ratio_derivative(a, y) - y * self.ratio_second_derivative(a, y)))
            .sum()
    }
}

/// Which constraint is active at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationCase {
    /// The stationary point satisfies the `i*` constraint.
    Interior,
    /// The `i*` term binds: `y* = Δ²/d_1`.
    Boundary,
    /// No arm outside `{1, i*}`: all weight on the best private arm.
    Degenerate,
}

impl std::fmt::Display for AllocationCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AllocationCase::Interior => "interior",
            AllocationCase::Boundary => "boundary",
            AllocationCase::Degenerate => "degenerate",
        })
    }
}

/// Optimal boosting proportions over the arms other than `i*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationSolution {
    pub weights: SimplexDistribution,
    /// Arm index of each weight entry.
    pub arms: Vec<usize>,
    pub gamma_star: f64,
    /// Common value of `g_a(x_a)`; the evidence terms equal `sqrt(w_1) y*`.
    pub y_star: f64,
    pub case: AllocationCase,
    /// `F(y*)` at the returned point; meaningful in the interior case.
    pub residual: f64,
}

impl AllocationSolution {
    pub fn weight_of(&self, arm: usize) -> Option<f64> {
        self.arms
            .iter()
            .position(|&a| a == arm)
            .map(|i| self.weights.probs()[i])
    }
}

/// Evidence terms `sqrt(w_1 w_a) Δ_a² / (sqrt(w_1) d_a + sqrt(w_a) d_1)` for
/// every contested arm, paired with the arm index.
pub fn evidence_terms(weights: &[f64], gaps: &GapStructure) -> Result<Vec<(usize, f64)>> {
    check_dimension(weights, gaps)?;
    let w1 = weights[gaps.weight_index(gaps.best_private).expect("best private is weighted")];
    Ok(gaps
        .contested_arms()
        .into_iter()
        .map(|a| {
            let wa = weights[gaps.weight_index(a).expect("contested arm is weighted")];
            let num = (w1 * wa).sqrt() * gaps.private_gaps[a].powi(2);
            let den = w1.sqrt() * gaps.public_gaps[a] + wa.sqrt() * gaps.d1;
            (a, if num == 0.0 { 0.0 } else { num / den })
        })
        .collect())
}

/// The `i*` term `sqrt(w_1) Δ² / d_1`.
pub fn istar_term(weights: &[f64], gaps: &GapStructure) -> Result<f64> {
    check_dimension(weights, gaps)?;
    let w1 = weights[gaps.weight_index(gaps.best_private).expect("best private is weighted")];
    Ok(w1.sqrt() * gaps.istar_cap())
}

fn check_dimension(weights: &[f64], gaps: &GapStructure) -> Result<()> {
    if weights.len() + 1 != gaps.num_arms() {
        return invalid(format!(
            "weights have dimension {} but {} arms need {}",
            weights.len(),
            gaps.num_arms(),
            gaps.num_arms() - 1
        ));
    }
    Ok(())
}

/// `Γ(w)` for weights indexed over the arms other than `i*`.
pub fn gamma(weights: &[f64], gaps: &GapStructure) -> Result<f64> {
    let istar = istar_term(weights, gaps)?;
    Ok(evidence_terms(weights, gaps)?
        .into_iter()
        .map(|(_, v)| v)
        .fold(istar, f64::min))
}

/// Same as [`gamma`] for a [`SimplexDistribution`].
pub fn gamma_of(weights: &SimplexDistribution, gaps: &GapStructure) -> Result<f64> {
    gamma(weights.probs(), gaps)
}

/// Maximizes `Γ` over the simplex through the root of `F`.
pub fn solve_allocation(gaps: &GapStructure) -> Result<AllocationSolution> {
    let arms = gaps.weighted_arms();
    let contested = gaps.contested_arms();
    if contested.is_empty() {
        let weights = SimplexDistribution::point_mass(1, 0);
        let gamma_star = gamma(weights.probs(), gaps)?;
        return Ok(AllocationSolution {
            weights,
            arms,
            gamma_star,
            y_star: gaps.istar_cap(),
            case: AllocationCase::Degenerate,
            residual: 0.0,
        });
    }

    let ceiling = gaps.evidence_ceiling();
    let (mut lo, mut hi) = (0.0, ceiling * (1.0 - 1e-9));
    if gaps.stationarity(hi) >= 0.0 {
        return Err(Error::NumericalFailure(format!(
            "F does not change sign on (0, {ceiling})"
        )));
    }
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if gaps.stationarity(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Newton polish inside the final bracket.
    let mut root = 0.5 * (lo + hi);
    for _ in 0..4 {
        let f = gaps.stationarity(root);
        let next = root - f / gaps.stationarity_derivative(root);
        if !(next.is_finite() && next > lo - ROOT_TOLERANCE && next < hi + ROOT_TOLERANCE) {
            break;
        }
        root = next;
    }

    let cap = gaps.istar_cap();
    let (y_star, case) = if root > cap {
        (cap, AllocationCase::Boundary)
    } else {
        (root, AllocationCase::Interior)
    };
    let residual = gaps.stationarity(y_star);
    if case == AllocationCase::Interior && residual.abs() > RESIDUAL_TOLERANCE {
        return Err(Error::NumericalFailure(format!(
            "|F(y*)| = {} exceeds {RESIDUAL_TOLERANCE}",
            residual.abs()
        )));
    }

    let ratios: Vec<(usize, f64)> = contested
        .iter()
        .map(|&a| (a, gaps.ratio_for_evidence(a, y_star)))
        .collect();
    let w1 = 1.0 / (1.0 + ratios.iter().map(|(_, x)| x).sum::<f64>());
    let mut weights = vec![0.0; arms.len()];
    weights[gaps.weight_index(gaps.best_private).expect("weighted")] = w1;
    for (a, x) in ratios {
        weights[gaps.weight_index(a).expect("weighted")] = x * w1;
    }
    let weights = SimplexDistribution::from_weights(weights)?;
    let gamma_star = gamma(weights.probs(), gaps)?;
    Ok(AllocationSolution {
        weights,
        arms,
        gamma_star,
        y_star,
        case,
        residual,
    })
}
