//! Deceptive exploration in Gaussian multi-armed bandits.
//!
//! An agent is expected by an observer to run Thompson Sampling on public
//! rewards. It instead identifies the best arm under a second, private reward
//! stream while keeping every per-step action distribution inside a KL ball
//! around the Thompson Sampling distribution.
//!
//! Modules:
//! - [`bandit`]: instances, reward sampling, posterior bookkeeping, randomness.
//! - [`reference`]: Thompson Sampling arm probabilities (split Gauss-Legendre panels, Gauss-Hermite, Monte Carlo).
//! - [`boost`]: the KL-constrained boosting problem and its analytic underestimator.
//! - [`decay`]: the decaying-success Bernoulli process and the pull-rate predictor.
//! - [`allocation`]: the boosting-allocation exponent and its maximin solver.
//! - [`agent`]: top-two deceptive exploration and its baselines.
//! - [`experiments`]: seeded multi-run harness with CSV output.

pub mod agent;
pub mod allocation;
pub mod bandit;
pub mod boost;
pub mod decay;
mod error;
pub mod experiments;
pub mod lambert;
pub mod normal;
pub mod quadrature;
pub mod reference;

pub use agent::{AgentConfig, AgentState, Episode, StepRecord};
pub use allocation::{AllocationCase, AllocationSolution, GapStructure};
pub use bandit::{BanditInstance, PosteriorState, RandomSource, SimplexDistribution};
pub use boost::{BoostSolution, BoostSolver, Budget};
pub use error::{Error, Result};
pub use quadrature::QuadratureRule;
pub use reference::{GaussianBeliefs, ProbabilityMethod};
