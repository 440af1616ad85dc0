//! Top-two deceptive exploration.
//!
//! Each round draws a leader from one private posterior sample and a
//! challenger in proportion to the private optimal-arm probabilities with the
//! leader removed, picks one of them by information-directed selection, and
//! boosts it inside the KL ball around Thompson Sampling on the public
//! posterior. The pulled arm is drawn from the boosted distribution and both
//! posteriors are updated. With a zero budget the agent is Thompson Sampling
//! on public rewards; with an unconstrained budget it is plain top-two
//! sampling with IDS on private rewards.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bandit::{argmax, BanditInstance, PosteriorState, RandomSource, SimplexDistribution};
use crate::boost::{boost_distribution_with, BoostSolver, Budget};
use crate::error::{invalid, Error, Result};
use crate::reference::ProbabilityMethod;

/// Non-leader mass below which the challenger is drawn uniformly.
pub const CHALLENGER_MASS_FLOOR: f64 = 1e-12;

// Substream ids derived from the episode seed.
const SELECTION_STREAM: u64 = 1;
const ACTION_STREAM: u64 = 2;
const REWARD_STREAM: u64 = 3;

/// How the boost target is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoostSchedule {
    /// Leader/challenger with information-directed selection.
    #[default]
    TopTwo,
    /// Cycle over the arms that are not publicly optimal, in index order.
    RoundRobinSuboptimal,
}

/// How the challenger is drawn given the leader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChallengerRule {
    /// Optimal-arm probabilities with the leader zeroed and renormalized.
    #[default]
    Renormalized,
    /// Redraw posterior samples until the argmax differs from the leader,
    /// falling back to [`ChallengerRule::Renormalized`] after
    /// `mc_samples_for_selection` draws.
    Rejection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub epsilon: Budget,
    pub delta: f64,
    pub max_steps: u64,
    pub mc_samples_for_selection: u64,
    pub init_pulls_per_arm: u64,
    pub boost_solver: BoostSolver,
    pub probability_method: ProbabilityMethod,
    pub challenger_rule: ChallengerRule,
    pub boost_schedule: BoostSchedule,
    /// Stop once the private posterior is `1 - delta` confident; otherwise
    /// run to `max_steps`.
    pub stop_at_confidence: bool,
    /// Compute the private error probability on every step even when the
    /// schedule does not need the private posterior.
    pub record_error_prob: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            epsilon: Budget::Finite(0.1),
            delta: 0.05,
            max_steps: 100_000,
            mc_samples_for_selection: 1000,
            init_pulls_per_arm: 1,
            boost_solver: BoostSolver::Exact,
            probability_method: ProbabilityMethod::default(),
            challenger_rule: ChallengerRule::default(),
            boost_schedule: BoostSchedule::default(),
            stop_at_confidence: true,
            record_error_prob: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self, num_arms: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if let Budget::Finite(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return invalid(format!("epsilon must be >= 0, got {e}"));
            }
        }
        if self.init_pulls_per_arm == 0 {
            return invalid("init_pulls_per_arm must be positive");
        }
        if self.mc_samples_for_selection == 0 {
            return invalid("mc_samples_for_selection must be positive");
        }
        if let ProbabilityMethod::MonteCarlo { samples: 0 } = self.probability_method {
            return invalid("Monte-Carlo probability method needs samples >= 1");
        }
        let init = self.init_pulls_per_arm.saturating_mul(num_arms as u64);
        if self.max_steps < init {
            return invalid(format!(
                "max_steps {} is below the {init} initialization pulls",
                self.max_steps
            ));
        }
        Ok(())
    }

    fn init_steps(&self, num_arms: usize) -> u64 {
        self.init_pulls_per_arm * num_arms as u64
    }
}

/// Mutable state of one episode.
#[derive(Debug, Clone, Serialize)]
pub struct AgentState {
    pub public_posterior: PosteriorState,
    pub private_posterior: PosteriorState,
    /// Times each arm was the boost target.
    pub boost_counts: Vec<u64>,
    /// Pulls so far, initialization included.
    pub step: u64,
    pub stopped: bool,
    pub recommendation: Option<usize>,
    // Optimal-arm probabilities of the current private posterior.
    #[serde(skip)]
    private_probs: Option<SimplexDistribution>,
}

impl AgentState {
    pub fn new(num_arms: usize) -> Self {
        Self {
            public_posterior: PosteriorState::new(num_arms),
            private_posterior: PosteriorState::new(num_arms),
            boost_counts: vec![0; num_arms],
            step: 0,
            stopped: false,
            recommendation: None,
            private_probs: None,
        }
    }

    pub fn num_arms(&self) -> usize {
        self.boost_counts.len()
    }

    /// Optimal-arm probabilities of the private posterior, cached until the
    /// next update.
    pub fn private_probabilities(
        &mut self,
        instance: &BanditInstance,
        method: ProbabilityMethod,
        rng: &mut RandomSource,
    ) -> Result<&SimplexDistribution> {
        if self.private_probs.is_none() {
            let beliefs = self.private_posterior.beliefs(instance.variance)?;
            self.private_probs = Some(method.evaluate(&beliefs, rng)?);
        }
        Ok(self.private_probs.as_ref().expect("just filled"))
    }

    fn record_pull(&mut self, arm: usize, rewards: (f64, f64)) -> Result<()> {
        self.public_posterior.update(arm, rewards.0)?;
        self.private_posterior.update(arm, rewards.1)?;
        self.private_probs = None;
        self.step += 1;
        Ok(())
    }
}

/// Everything that happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// Total pulls after this round.
    pub step: u64,
    /// Round-robin initialization pull, outside the KL accounting.
    pub forced: bool,
    pub leader: usize,
    pub challenger: usize,
    pub boosted: usize,
    pub pulled: usize,
    pub reference_probs: SimplexDistribution,
    pub boosted_probs: SimplexDistribution,
    /// Posterior probability, after the update, that an arm other than the
    /// true best private arm is optimal.
    pub error_prob: Option<f64>,
    pub kl_spent: f64,
}

/// Outcome of the posterior-confidence stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingCheck {
    pub stop: bool,
    pub best: usize,
    pub p_star: f64,
}

/// The three independent random streams of an episode.
#[derive(Debug, Clone)]
pub struct EpisodeRng {
    pub selection: RandomSource,
    pub action: RandomSource,
    pub reward: RandomSource,
}

impl EpisodeRng {
    pub fn new(seed: u64) -> Self {
        Self {
            selection: RandomSource::with_stream(seed, SELECTION_STREAM),
            action: RandomSource::with_stream(seed, ACTION_STREAM),
            reward: RandomSource::with_stream(seed, REWARD_STREAM),
        }
    }
}

/// Argmax of one joint draw from the private posterior.
pub fn select_leader(
    private_posterior: &PosteriorState,
    variance: f64,
    rng: &mut RandomSource,
) -> Result<usize> {
    Ok(private_posterior.beliefs(variance)?.sample_argmax(rng))
}

/// Draws a non-leader arm in proportion to `probs`, uniformly if the
/// non-leader mass is below [`CHALLENGER_MASS_FLOOR`].
pub fn challenger_from_probabilities(
    probs: &SimplexDistribution,
    leader: usize,
    rng: &mut RandomSource,
) -> usize {
    let k = probs.len();
    let mass: f64 = (0..k).filter(|&a| a != leader).map(|a| probs.probs()[a]).sum();
    if mass < CHALLENGER_MASS_FLOOR {
        let pick = rng.index(k - 1);
        return if pick >= leader { pick + 1 } else { pick };
    }
    let threshold = rng.uniform() * mass;
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for a in (0..k).filter(|&a| a != leader) {
        let p = probs.probs()[a];
        if p > 0.0 {
            acc += p;
            last = a;
            if threshold < acc {
                return a;
            }
        }
    }
    last
}

/// Challenger from the private posterior under the default renormalized rule.
pub fn select_challenger(
    private_posterior: &PosteriorState,
    variance: f64,
    leader: usize,
    method: ProbabilityMethod,
    rng: &mut RandomSource,
) -> Result<usize> {
    let beliefs = private_posterior.beliefs(variance)?;
    let probs = method.evaluate(&beliefs, rng)?;
    Ok(challenger_from_probabilities(&probs, leader, rng))
}

/// Challenger by rejection: the first posterior draw whose argmax is not the
/// leader, or `None` after `max_draws` failures.
pub fn challenger_by_rejection(
    private_posterior: &PosteriorState,
    variance: f64,
    leader: usize,
    max_draws: u64,
    rng: &mut RandomSource,
) -> Result<Option<usize>> {
    let beliefs = private_posterior.beliefs(variance)?;
    for _ in 0..max_draws {
        let a = beliefs.sample_argmax(rng);
        if a != leader {
            return Ok(Some(a));
        }
    }
    Ok(None)
}

/// Information-directed selection: the leader with probability
/// `N_c / (N_c + N_l)`, otherwise the challenger.
pub fn ids_choice(
    leader: usize,
    challenger: usize,
    counts: &[u64],
    rng: &mut RandomSource,
) -> Result<usize> {
    let k = counts.len();
    if leader >= k || challenger >= k {
        return invalid(format!("arm index out of range for {k} arms"));
    }
    let (n_l, n_c) = (counts[leader] as f64, counts[challenger] as f64);
    if n_l + n_c == 0.0 {
        return invalid("IDS needs at least one pull of the leader or challenger");
    }
    let p_leader = n_c / (n_c + n_l);
    Ok(if rng.uniform() < p_leader {
        leader
    } else {
        challenger
    })
}

/// Posterior-confidence stopping rule on the private posterior.
pub fn check_stopping(
    private_posterior: &PosteriorState,
    variance: f64,
    delta: f64,
    method: ProbabilityMethod,
    rng: &mut RandomSource,
) -> Result<StoppingCheck> {
    let beliefs = private_posterior.beliefs(variance)?;
    let probs = method.evaluate(&beliefs, rng)?;
    Ok(stopping_from_probabilities(&probs, delta))
}

pub fn stopping_from_probabilities(probs: &SimplexDistribution, delta: f64) -> StoppingCheck {
    let best = argmax(probs.probs());
    let p_star = probs.probs()[best];
    StoppingCheck {
        stop: p_star >= 1.0 - delta,
        best,
        p_star,
    }
}

/// `1 - p_a` computed as the mass of the other arms, so tiny errors survive.
pub fn error_probability(probs: &SimplexDistribution, arm: usize) -> f64 {
    probs
        .probs()
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != arm)
        .map(|(_, p)| p)
        .sum()
}

fn round_robin_target(instance: &BanditInstance, boosts_so_far: u64) -> usize {
    let best_public = instance.best_public_arm();
    let k = instance.num_arms() as u64;
    let slot = (boosts_so_far % (k - 1)) as usize;
    if slot >= best_public {
        slot + 1
    } else {
        slot
    }
}

fn forced_step(
    state: &mut AgentState,
    instance: &BanditInstance,
    config: &AgentConfig,
    rng: &mut EpisodeRng,
) -> Result<StepRecord> {
    let k = instance.num_arms();
    let arm = (state.step % k as u64) as usize;
    let rewards = instance.sample_rewards(arm, &mut rng.reward)?;
    state.record_pull(arm, rewards)?;
    let point = SimplexDistribution::point_mass(k, arm);
    let mut record = StepRecord {
        step: state.step,
        forced: true,
        leader: arm,
        challenger: arm,
        boosted: arm,
        pulled: arm,
        reference_probs: point.clone(),
        boosted_probs: point,
        error_prob: None,
        kl_spent: 0.0,
    };
    if state.step == config.init_steps(k) {
        finish_round(state, instance, config, rng, &mut record)?;
    }
    Ok(record)
}

// Error probability and stopping after a pull.
fn finish_round(
    state: &mut AgentState,
    instance: &BanditInstance,
    config: &AgentConfig,
    rng: &mut EpisodeRng,
    record: &mut StepRecord,
) -> Result<()> {
    let needs_private = config.stop_at_confidence
        || config.record_error_prob
        || config.boost_schedule == BoostSchedule::TopTwo;
    if !needs_private {
        return Ok(());
    }
    let truth = instance.best_private_arm();
    let probs = state.private_probabilities(instance, config.probability_method, &mut rng.selection)?;
    record.error_prob = Some(error_probability(probs, truth));
    if config.stop_at_confidence {
        let check = stopping_from_probabilities(probs, config.delta);
        if check.stop {
            state.stopped = true;
            state.recommendation = Some(check.best);
        }
    }
    Ok(())
}

/// One round of the loop after initialization.
pub fn agent_step(
    state: &mut AgentState,
    instance: &BanditInstance,
    config: &AgentConfig,
    rng: &mut EpisodeRng,
) -> Result<StepRecord> {
    let k = instance.num_arms();
    if state.step < config.init_steps(k) {
        return Err(Error::InvalidArgument(
            "agent_step called before initialization finished".into(),
        ));
    }
    let variance = instance.variance;
    let (leader, challenger, target) = match config.boost_schedule {
        BoostSchedule::RoundRobinSuboptimal => {
            let boosts: u64 = state.boost_counts.iter().sum();
            let t = round_robin_target(instance, boosts);
            (t, t, t)
        }
        BoostSchedule::TopTwo => {
            let leader = select_leader(&state.private_posterior, variance, &mut rng.selection)?;
            let rejected = match config.challenger_rule {
                ChallengerRule::Rejection => challenger_by_rejection(
                    &state.private_posterior,
                    variance,
                    leader,
                    config.mc_samples_for_selection,
                    &mut rng.selection,
                )?,
                ChallengerRule::Renormalized => None,
            };
            let challenger = match rejected {
                Some(c) => c,
                None => {
                    let probs = state
                        .private_probabilities(instance, config.probability_method, &mut rng.selection)?
                        .clone();
                    challenger_from_probabilities(&probs, leader, &mut rng.selection)
                }
            };
            let target = ids_choice(
                leader,
                challenger,
                state.private_posterior.counts(),
                &mut rng.selection,
            )?;
            (leader, challenger, target)
        }
    };

    let public_beliefs = state.public_posterior.beliefs(variance)?;
    let reference = config
        .probability_method
        .evaluate(&public_beliefs, &mut rng.selection)?;
    let boost = boost_distribution_with(&reference, target, config.epsilon, config.boost_solver)?;
    let pulled = boost.distribution.sample(&mut rng.action);
    let rewards = instance.sample_rewards(pulled, &mut rng.reward)?;
    state.record_pull(pulled, rewards)?;
    state.boost_counts[target] += 1;

    let mut record = StepRecord {
        step: state.step,
        forced: false,
        leader,
        challenger,
        boosted: target,
        pulled,
        reference_probs: reference,
        boosted_probs: boost.distribution,
        error_prob: None,
        kl_spent: boost.achieved_kl,
    };
    finish_round(state, instance, config, rng, &mut record)?;
    Ok(record)
}

/// A finished episode.
#[derive(Debug, Clone, Serialize)]
pub struct Episode {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub recommendation: Option<usize>,
    pub final_state: AgentState,
}

/// Runs initialization and then [`agent_step`] until the stopping rule fires
/// or `max_steps` pulls are spent, keeping every record.
pub fn run_episode(instance: &BanditInstance, config: &AgentConfig, seed: u64) -> Result<Episode> {
    let mut records = Vec::new();
    let final_state = run_episode_with(instance, config, seed, |_, r| records.push(r.clone()))?;
    Ok(Episode {
        seed,
        recommendation: final_state.recommendation,
        records,
        final_state,
    })
}

/// Like [`run_episode`], handing each record to `observe` instead of storing it.
pub fn run_episode_with(
    instance: &BanditInstance,
    config: &AgentConfig,
    seed: u64,
    mut observe: impl FnMut(&AgentState, &StepRecord),
) -> Result<AgentState> {
    instance.validate()?;
    let k = instance.num_arms();
    config.validate(k)?;
    let mut rng = EpisodeRng::new(seed);
    let mut state = AgentState::new(k);
    while state.step < config.init_steps(k) && !state.stopped {
        let record = forced_step(&mut state, instance, config, &mut rng)?;
        observe(&state, &record);
    }
    while state.step < config.max_steps && !state.stopped {
        let record = agent_step(&mut state, instance, config, &mut rng)?;
        observe(&state, &record);
    }
    Ok(state)
}

/// Writes records as CSV with columns `seed, step, leader, challenger,
/// boosted, pulled, error_prob, kl_spent, n_0.., boost_0..`.
pub struct TraceWriter<W: Write> {
    writer: csv::Writer<W>,
    num_arms: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(inner: W, num_arms: usize) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        let mut header: Vec<String> = [
            "seed",
            "step",
            "leader",
            "challenger",
            "boosted",
            "pulled",
            "error_prob",
            "kl_spent",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..num_arms).map(|a| format!("n_{a}")));
        header.extend((0..num_arms).map(|a| format!("boost_{a}")));
        writer.write_record(&header)?;
        Ok(Self { writer, num_arms })
    }

    pub fn write(&mut self, seed: u64, state: &AgentState, record: &StepRecord) -> Result<()> {
        let mut row = vec![
            seed.to_string(),
            record.step.to_string(),
            record.leader.to_string(),
            record.challenger.to_string(),
            record.boosted.to_string(),
            record.pulled.to_string(),
            record.error_prob.map(format_float).unwrap_or_default(),
            format_float(record.kl_spent),
        ];
        debug_assert_eq!(state.num_arms(), self.num_arms);
        row.extend(state.public_posterior.counts().iter().map(|n| n.to_string()));
        row.extend(state.boost_counts.iter().map(|n| n.to_string()));
        self.writer.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Fixed 12-significant-digit formatting used by every CSV output.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.11e}")
}
