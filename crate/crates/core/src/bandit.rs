//! Ground-truth instances, reward sampling and posterior bookkeeping.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::reference::GaussianBeliefs;

/// Tolerance on the sum of a probability vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Index of the largest entry, lowest index on ties. NaN entries never win.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn unique_argmax(values: &[f64]) -> Option<usize> {
    let best = argmax(values);
    let ties = values.iter().filter(|&&v| v == values[best]).count();
    (ties == 1).then_some(best)
}

/// A Gaussian bandit whose arms emit a public and a private reward on every pull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditInstance {
    pub public_means: Vec<f64>,
    pub private_means: Vec<f64>,
    /// Shared variance of every public and private reward distribution.
    #[serde(default = "default_variance")]
    pub variance: f64,
}

fn default_variance() -> f64 {
    1.0
}

impl BanditInstance {
    pub fn new(public_means: Vec<f64>, private_means: Vec<f64>, variance: f64) -> Result<Self> {
        let instance = Self {
            public_means,
            private_means,
            variance,
        };
        instance.validate()?;
        Ok(instance)
    }

    /// Unit-variance instance, the convention used by every experiment preset.
    pub fn unit_variance(public_means: Vec<f64>, private_means: Vec<f64>) -> Result<Self> {
        Self::new(public_means, private_means, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.public_means.len();
        if k < 2 {
            return invalid(format!("need at least 2 arms, got {k}"));
        }
        if self.private_means.len() != k {
            return invalid(format!(
                "public_means has {k} arms but private_means has {}",
                self.private_means.len()
            ));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return invalid(format!("variance must be positive, got {}", self.variance));
        }
        if self
            .public_means
            .iter()
            .chain(&self.private_means)
            .any(|m| !m.is_finite())
        {
            return invalid("means must be finite");
        }
        if unique_argmax(&self.private_means).is_none() {
            return invalid("private_means must have a unique maximizer");
        }
        if unique_argmax(&self.public_means).is_none() {
            return invalid("public_means must have a unique maximizer");
        }
        Ok(())
    }

    pub fn num_arms(&self) -> usize {
        self.public_means.len()
    }

    pub fn best_private_arm(&self) -> usize {
        argmax(&self.private_means)
    }

    pub fn best_public_arm(&self) -> usize {
        argmax(&self.public_means)
    }

    pub fn stddev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Draws the independent (public, private) reward pair of one pull.
    pub fn sample_rewards(&self, arm: usize, rng: &mut RandomSource) -> Result<(f64, f64)> {
        if arm >= self.num_arms() {
            return invalid(format!("arm {arm} out of range for {} arms", self.num_arms()));
        }
        let sd = self.stddev();
        let public = self.public_means[arm] + sd * rng.standard_normal();
        let private = self.private_means[arm] + sd * rng.standard_normal();
        Ok((public, private))
    }
}

/// Pull counts and running means; with an improper prior the posterior of
/// arm `a` is `N(mean_a, variance / count_a)` once `count_a >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    counts: Vec<u64>,
    empirical_means: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    reward_log: Option<Vec<Vec<f64>>>,
}

impl PosteriorState {
    pub fn new(num_arms: usize) -> Self {
        Self {
            counts: vec![0; num_arms],
            empirical_means: vec![0.0; num_arms],
            reward_log: None,
        }
    }

    /// Like [`PosteriorState::new`] but keeps every observed reward, for debugging.
    pub fn with_reward_log(num_arms: usize) -> Self {
        Self {
            reward_log: Some(vec![Vec::new(); num_arms]),
            ..Self::new(num_arms)
        }
    }

    pub fn num_arms(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Running means; the entry of an arm with zero pulls is meaningless.
    pub fn empirical_means(&self) -> &[f64] {
        &self.empirical_means
    }

    pub fn reward_log(&self) -> Option<&[Vec<f64>]> {
        self.reward_log.as_deref()
    }

    pub fn total_pulls(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn all_pulled(&self) -> bool {
        self.counts.iter().all(|&n| n > 0)
    }

    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        if arm >= self.num_arms() {
            return invalid(format!("arm {arm} out of range for {} arms", self.num_arms()));
        }
        self.counts[arm] += 1;
        let n = self.counts[arm] as f64;
        self.empirical_means[arm] += (reward - self.empirical_means[arm]) / n;
        if let Some(log) = self.reward_log.as_mut() {
            log[arm].push(reward);
        }
        Ok(())
    }

    /// Value-returning form of [`PosteriorState::update`].
    pub fn updated(&self, arm: usize, reward: f64) -> Result<Self> {
        let mut next = self.clone();
        next.update(arm, reward)?;
        Ok(next)
    }

    /// Posterior means and standard deviations `sigma / sqrt(N_a)`.
    pub fn beliefs(&self, variance: f64) -> Result<GaussianBeliefs> {
        if let Some(arm) = self.counts.iter().position(|&n| n == 0) {
            return invalid(format!("arm {arm} has no pulls; posterior undefined"));
        }
        let sd = variance.sqrt();
        let stddevs = self.counts.iter().map(|&n| sd / (n as f64).sqrt()).collect();
        GaussianBeliefs::new(self.empirical_means.clone(), stddevs)
    }
}

/// A probability vector over arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexDistribution {
    probs: Vec<f64>,
}

impl SimplexDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("empty probability vector");
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid(format!("probabilities must be finite and nonnegative: {probs:?}"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return invalid(format!("probabilities sum to {sum}, not 1"));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return invalid(format!("cannot normalize weights {weights:?}"));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(num_arms: usize) -> Self {
        Self {
            probs: vec![1.0 / num_arms as f64; num_arms],
        }
    }

    pub fn point_mass(num_arms: usize, arm: usize) -> Self {
        let mut probs = vec![0.0; num_arms];
        probs[arm] = 1.0;
        Self { probs }
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Inverse-CDF draw from one uniform variate.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }

    pub fn sample(&self, rng: &mut RandomSource) -> usize {
        self.sample_with(rng.uniform())
    }

    /// `KL(self || reference)` with `0 log 0 = 0`; infinite if `self` puts
    /// mass where `reference` has none.
    pub fn kl_divergence(&self, reference: &SimplexDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&reference.probs)
            .map(|(&p, &q)| match (p, q) {
                (p, _) if p == 0.0 => 0.0,
                (_, q) if q == 0.0 => f64::INFINITY,
                (p, q) => p * (p / q).ln(),
            })
            .sum()
    }
}

/// Seeded ChaCha stream. Identical seed, stream id and call sequence give
/// bit-identical draws.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    /// An independent generator sharing this source's seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, stddev: f64) -> f64 {
        mean + stddev * self.standard_normal()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
