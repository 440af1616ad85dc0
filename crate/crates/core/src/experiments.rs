//! Seeded multi-run harness: configuration, presets, aggregation across
//! seeds with normal-approximation 95% intervals, and CSV output.
//!
//! Seeds run in parallel on a rayon pool and results are gathered by seed
//! index, so the thread count never changes the output bytes.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{format_float, run_episode_with, AgentConfig, AgentState, BoostSchedule, StepRecord};
use crate::allocation::{gamma, solve_allocation, AllocationCase, GapStructure};
use crate::bandit::{BanditInstance, RandomSource};
use crate::boost::{boost_probability, boost_probability_approx, Budget};
use crate::decay::{predicted_pulls, simulate_decay, DecayProcessParams};
use crate::error::{invalid, Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

pub const DEFAULT_GRID_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Pull counts of publicly suboptimal arms against the predicted rate.
    Rate,
    /// Private error probability for several KL budgets.
    EpsSweep,
    /// Per-arm sample shares and counts for several instances.
    Asymmetry,
    /// `Γ* - Γ(w_t)` with `w_t` the empirical boost proportions.
    GammaConvergence,
    /// Successes of the decaying-success process against `sqrt(2 c t)`.
    Decay,
    /// Optimal boosting allocation of each instance (no simulation).
    Allocate,
    /// Exact and approximate boosted probability over a grid of `p`.
    BoostCurve,
}

impl ExperimentKind {
    fn simulates_agent(self) -> bool {
        matches!(
            self,
            Self::Rate | Self::EpsSweep | Self::Asymmetry | Self::GammaConvergence
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedInstance {
    pub name: String,
    #[serde(flatten)]
    pub instance: BanditInstance,
}

impl NamedInstance {
    pub fn new(name: &str, public_means: &[f64], private_means: &[f64]) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            instance: BanditInstance::unit_variance(public_means.to_vec(), private_means.to_vec())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySettings {
    pub c: f64,
    pub m0: f64,
}

impl Default for DecaySettings {
    fn default() -> Self {
        Self { c: 1.0, m0: 1.0 }
    }
}

/// Log-spaced grid of reference probabilities for the boost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostCurveSettings {
    pub p_min: f64,
    pub p_max: f64,
    pub points: usize,
}

impl Default for BoostCurveSettings {
    fn default() -> Self {
        Self {
            p_min: 1e-10,
            p_max: 0.5,
            points: 200,
        }
    }
}

fn default_seeds() -> u64 {
    1
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

/// One experiment, read from TOML.
///
/// In the `agent` table, `epsilon`, `max_steps`, `boost_schedule`,
/// `stop_at_confidence` and `record_error_prob` are set by the harness from
/// the top-level fields; runs always go to the full horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub instances: Vec<NamedInstance>,
    #[serde(default)]
    pub epsilons: Vec<Budget>,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    /// Seed of the first run; run `i` uses `base_seed + i`.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub horizon: u64,
    /// Number of evenly spaced times at which series are recorded.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub boost_schedule: BoostSchedule,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub decay: DecaySettings,
    #[serde(default)]
    pub boost_curve: BoostCurveSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let config_err = |msg: String| Err(Error::Config(msg));
        if self.seeds == 0 {
            return config_err("seeds must be at least 1".into());
        }
        if self.grid_points == 0 {
            return config_err("grid_points must be at least 1".into());
        }
        if self.threads == Some(0) {
            return config_err("threads must be at least 1".into());
        }
        for named in &self.instances {
            named
                .instance
                .validate()
                .map_err(|e| Error::Config(format!("instance {:?}: {e}", named.name)))?;
        }
        let needs_instances = self.kind.simulates_agent() || self.kind == ExperimentKind::Allocate;
        if needs_instances && self.instances.is_empty() {
            return config_err(format!("{:?} needs at least one instance", self.kind));
        }
        let needs_budgets = self.kind.simulates_agent() || self.kind == ExperimentKind::BoostCurve;
        if needs_budgets && self.epsilons.is_empty() {
            return config_err(format!("{:?} needs at least one epsilon", self.kind));
        }
        if self.kind.simulates_agent() {
            for named in &self.instances {
                let k = named.instance.num_arms() as u64;
                let init = k.saturating_mul(self.agent.init_pulls_per_arm);
                if self.horizon < k || self.horizon < init {
                    return config_err(format!(
                        "horizon {} is below the {} initialization pulls of instance {:?}",
                        self.horizon, init, named.name
                    ));
                }
                self.agent_config(Budget::Finite(0.0))
                    .validate(named.instance.num_arms())
                    .map_err(|e| Error::Config(format!("agent: {e}")))?;
            }
        }
        match self.kind {
            ExperimentKind::Decay => {
                DecayProcessParams::new(self.decay.c, self.decay.m0, self.horizon.max(1))
                    .map_err(|e| Error::Config(format!("decay: {e}")))?;
                if self.horizon == 0 {
                    return config_err("horizon must be positive".into());
                }
            }
            ExperimentKind::Rate => {
                if let Some(b) = self.epsilons.iter().find(|b| **b == Budget::Unconstrained) {
                    return config_err(format!("rate needs finite budgets, got {b}"));
                }
            }
            ExperimentKind::BoostCurve => {
                let s = &self.boost_curve;
                if !(s.p_min > 0.0 && s.p_min <= s.p_max && s.p_max < 1.0) || s.points == 0 {
                    return config_err("boost_curve needs 0 < p_min <= p_max < 1 and points >= 1".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Agent settings for one run at budget `epsilon`.
    pub fn agent_config(&self, epsilon: Budget) -> AgentConfig {
        AgentConfig {
            epsilon,
            max_steps: self.horizon,
            boost_schedule: self.boost_schedule,
            stop_at_confidence: false,
            record_error_prob: self.kind == ExperimentKind::EpsSweep,
            ..self.agent.clone()
        }
    }

    /// Recording times: `round(i T / G)` for `i = 1..=G`, deduplicated.
    pub fn time_grid(&self) -> Vec<u64> {
        time_grid(self.horizon, self.grid_points)
    }
}

pub fn time_grid(horizon: u64, points: usize) -> Vec<u64> {
    let mut grid: Vec<u64> = (1..=points as u64)
        .map(|i| ((i as u128 * horizon as u128 + points as u128 / 2) / points as u128) as u64)
        .filter(|&t| t > 0)
        .collect();
    grid.dedup();
    grid
}

/// The four figure setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig1" => Ok(Self::Fig1),
            "fig2" => Ok(Self::Fig2),
            "fig3" => Ok(Self::Fig3),
            "fig4" => Ok(Self::Fig4),
            _ => Err(Error::Config(format!("unknown preset {s:?}; expected fig1..fig4"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Fig1 => "fig1",
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
        };
        f.write_str(name)
    }
}

impl Preset {
    pub fn config(self) -> ExperimentConfig {
        let instance = |name: &str, public: &[f64], private: &[f64]| {
            NamedInstance::new(name, public, private).expect("preset instances are valid")
        };
        let base = |kind, instances, epsilons, seeds, horizon| ExperimentConfig {
            kind,
            instances,
            epsilons,
            seeds,
            base_seed: 0,
            horizon,
            grid_points: DEFAULT_GRID_POINTS,
            output_path: None,
            boost_schedule: BoostSchedule::TopTwo,
            threads: None,
            agent: AgentConfig::default(),
            decay: DecaySettings::default(),
            boost_curve: BoostCurveSettings::default(),
        };
        let eps = Budget::Finite(0.1);
        match self {
            Self::Fig1 => ExperimentConfig {
                boost_schedule: BoostSchedule::RoundRobinSuboptimal,
                ..base(
                    ExperimentKind::Rate,
                    vec![instance("fig1", &[0.6, 0.3, 0.0, 0.2], &[0.2, 0.5, 0.1, 0.0])],
                    vec![eps],
                    50,
                    300_000,
                )
            },
            Self::Fig2 => base(
                ExperimentKind::EpsSweep,
                vec![instance("fig2", &[0.6, 0.3, 0.0, 0.2], &[0.2, 0.5, 0.1, 0.0])],
                vec![
                    Budget::Finite(0.0),
                    Budget::Finite(1e-3),
                    Budget::Finite(1e-2),
                    Budget::Finite(1e-1),
                    Budget::Finite(1.0),
                    Budget::Unconstrained,
                ],
                100,
                100_000,
            ),
            Self::Fig3 => base(
                ExperimentKind::Asymmetry,
                vec![
                    instance("symmetric", &[0.6, 0.1, 0.1, 0.1], &[0.2, 0.5, 0.0, 0.0]),
                    instance("asymmetric", &[0.6, 0.5, 0.0, 0.3], &[0.2, 0.5, 0.0, 0.0]),
                ],
                vec![eps],
                100,
                100_000,
            ),
            Self::Fig4 => base(
                ExperimentKind::GammaConvergence,
                vec![
                    instance("instance1", &[0.6, 0.3, 0.1], &[0.2, 0.5, 0.3]),
                    instance("instance2", &[0.8, 0.3, 0.6], &[0.1, 0.35, 0.2]),
                ],
                vec![eps],
                50,
                200_000,
            ),
        }
    }
}

/// Mean and 95% interval of one quantity across seeds on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateSeries {
    pub name: String,
    pub times: Vec<u64>,
    pub mean: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Theoretical comparison curve, for rate-type outputs.
    pub phi: Option<Vec<f64>>,
    /// Set when only one seed was available and the interval has zero width.
    pub single_seed: bool,
}

impl AggregateSeries {
    /// Mean at time `t`, if `t` is on the grid.
    pub fn mean_at(&self, t: u64) -> Option<f64> {
        self.times.binary_search(&t).ok().map(|i| self.mean[i])
    }

    pub fn final_mean(&self) -> Option<f64> {
        self.mean.last().copied()
    }
}

/// Pointwise mean and `mean ± 1.96 sd / sqrt(n)` over per-seed series.
pub fn aggregate(name: &str, times: &[u64], per_seed: &[Vec<f64>]) -> Result<AggregateSeries> {
    if per_seed.is_empty() {
        return invalid("aggregate needs at least one seed");
    }
    if let Some(bad) = per_seed.iter().find(|s| s.len() != times.len()) {
        return invalid(format!(
            "series {name:?} has a seed with {} values on a grid of {}",
            bad.len(),
            times.len()
        ));
    }
    let n = per_seed.len() as f64;
    let mut series = AggregateSeries {
        name: name.to_string(),
        times: times.to_vec(),
        mean: Vec::with_capacity(times.len()),
        ci_low: Vec::with_capacity(times.len()),
        ci_high: Vec::with_capacity(times.len()),
        phi: None,
        single_seed: per_seed.len() == 1,
    };
    for i in 0..times.len() {
        let mean = per_seed.iter().map(|s| s[i]).sum::<f64>() / n;
        let half = if per_seed.len() > 1 {
            let ss: f64 = per_seed.iter().map(|s| (s[i] - mean).powi(2)).sum();
            Z_95 * (ss / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        series.mean.push(mean);
        series.ci_low.push(mean - half);
        series.ci_high.push(mean + half);
    }
    Ok(series)
}

/// Per-step KL check over every non-forced step of one budget's runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlAudit {
    pub run: String,
    pub epsilon: Budget,
    pub steps: u64,
    /// Largest `KL(boosted, reference) - ε`; `-inf` when unconstrained.
    pub max_excess: f64,
    /// Steps whose boosted vector differs from the reference (checked at `ε = 0`).
    pub zero_budget_mismatches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationRow {
    pub instance: String,
    pub arm: usize,
    pub weight: f64,
    pub gamma_star: f64,
    pub y_star: f64,
    pub case: AllocationCase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoostCurveRow {
    pub epsilon: Budget,
    pub p: f64,
    pub q_star: f64,
    /// Lambert-W underestimator; absent for an unconstrained budget.
    pub q_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ExperimentOutput {
    Series {
        series: Vec<AggregateSeries>,
        audits: Vec<KlAudit>,
    },
    Allocation(Vec<AllocationRow>),
    BoostCurve(Vec<BoostCurveRow>),
}

impl ExperimentOutput {
    pub fn series(&self) -> &[AggregateSeries] {
        match self {
            Self::Series { series, .. } => series,
            _ => &[],
        }
    }

    pub fn audits(&self) -> &[KlAudit] {
        match self {
            Self::Series { audits, .. } => audits,
            _ => &[],
        }
    }

    pub fn find(&self, name: &str) -> Option<&AggregateSeries> {
        self.series().iter().find(|s| s.name == name)
    }

    /// Series names whose interval collapsed because only one seed ran.
    pub fn warnings(&self) -> Vec<String> {
        self.series()
            .iter()
            .filter(|s| s.single_seed)
            .map(|s| format!("series {:?} has a single seed; its interval has zero width", s.name))
            .collect()
    }
}

/// Runs the experiment and, when `output_path` is set, writes its CSV.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let output = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(|| compute(config))?,
        None => compute(config)?,
    };
    if let Some(path) = &config.output_path {
        write_output_file(&output, path)?;
    }
    Ok(output)
}

fn compute(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    match config.kind {
        ExperimentKind::Allocate => allocation_rows(config).map(ExperimentOutput::Allocation),
        ExperimentKind::BoostCurve => boost_curve_rows(config).map(ExperimentOutput::BoostCurve),
        ExperimentKind::Decay => decay_series(config),
        _ => agent_series(config),
    }
}

fn allocation_rows(config: &ExperimentConfig) -> Result<Vec<AllocationRow>> {
    let mut rows = Vec::new();
    for named in &config.instances {
        let gaps = GapStructure::from_instance(&named.instance)?;
        let solution = solve_allocation(&gaps)?;
        for (i, &arm) in solution.arms.iter().enumerate() {
            rows.push(AllocationRow {
                instance: named.name.clone(),
                arm,
                weight: solution.weights.probs()[i],
                gamma_star: solution.gamma_star,
                y_star: solution.y_star,
                case: solution.case,
            });
        }
    }
    Ok(rows)
}

fn boost_curve_rows(config: &ExperimentConfig) -> Result<Vec<BoostCurveRow>> {
    let s = config.boost_curve;
    let ps: Vec<f64> = if s.points == 1 {
        vec![s.p_min]
    } else {
        let (lo, hi) = (s.p_min.ln(), s.p_max.ln());
        (0..s.points)
            .map(|i| (lo + (hi - lo) * i as f64 / (s.points - 1) as f64).exp())
            .collect()
    };
    let mut rows = Vec::with_capacity(ps.len() * config.epsilons.len());
    for &epsilon in &config.epsilons {
        for &p in &ps {
            let q_hat = match epsilon {
                Budget::Finite(e) => Some(boost_probability_approx(p, e)?),
                Budget::Unconstrained => None,
            };
            rows.push(BoostCurveRow {
                epsilon,
                p,
                q_star: boost_probability(p, epsilon)?,
                q_hat,
            });
        }
    }
    Ok(rows)
}

fn decay_series(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let params = DecayProcessParams::new(config.decay.c, config.decay.m0, config.horizon)?;
    let times = config.time_grid();
    let per_seed: Vec<Vec<f64>> = (0..config.seeds)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::new(config.base_seed + i);
            let trace = simulate_decay(&params, &mut rng)?;
            Ok(times
                .iter()
                .map(|&t| trace.success_counts[t as usize] as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut series = aggregate("successes", &times, &per_seed)?;
    series.phi = Some(times.iter().map(|&t| params.asymptotic_count(t)).collect());
    Ok(ExperimentOutput::Series {
        series: vec![series],
        audits: Vec::new(),
    })
}

// One (instance, budget) combination.
struct Run<'a> {
    label: String,
    named: &'a NamedInstance,
    epsilon: Budget,
    agent: AgentConfig,
    series_names: Vec<String>,
    gamma_star: Option<(GapStructure, f64)>,
}

struct SeedResult {
    values: Vec<Vec<f64>>,
    steps: u64,
    max_excess: f64,
    mismatches: u64,
}

fn run_label(config: &ExperimentConfig, named: &NamedInstance, epsilon: Budget) -> String {
    let many_instances = config.instances.len() > 1;
    let many_budgets = config.epsilons.len() > 1;
    match (many_instances, many_budgets || config.kind == ExperimentKind::EpsSweep) {
        (true, true) => format!("{}/{}", named.name, epsilon.label()),
        (true, false) => named.name.clone(),
        (false, true) => epsilon.label(),
        (false, false) => String::new(),
    }
}

fn qualified(label: &str, name: &str) -> String {
    if label.is_empty() {
        name.to_string()
    } else if name.is_empty() {
        label.to_string()
    } else {
        format!("{label}/{name}")
    }
}

fn plan_runs(config: &ExperimentConfig) -> Result<Vec<Run<'_>>> {
    let mut runs = Vec::new();
    for named in &config.instances {
        let instance = &named.instance;
        let k = instance.num_arms();
        let best_public = instance.best_public_arm();
        for &epsilon in &config.epsilons {
            let label = run_label(config, named, epsilon);
            let (names, gamma_star): (Vec<String>, _) = match config.kind {
                ExperimentKind::Rate => (
                    (0..k).filter(|&a| a != best_public).map(|a| format!("arm_{a}")).collect(),
                    None,
                ),
                ExperimentKind::EpsSweep => (vec![String::new()], None),
                ExperimentKind::Asymmetry => (
                    (0..k)
                        .map(|a| format!("share_{a}"))
                        .chain((0..k).map(|a| format!("count_{a}")))
                        .collect(),
                    None,
                ),
                ExperimentKind::GammaConvergence => {
                    let gaps = GapStructure::from_instance(instance)?;
                    let star = solve_allocation(&gaps)?.gamma_star;
                    (vec![String::new()], Some((gaps, star)))
                }
                _ => unreachable!("non-agent kinds are handled separately"),
            };
            runs.push(Run {
                series_names: names.iter().map(|n| qualified(&label, n)).collect(),
                label,
                named,
                epsilon,
                agent: config.agent_config(epsilon),
                gamma_star,
            });
        }
    }
    Ok(runs)
}

// Values of every series of `run` after the pull at `state.step`.
fn observe_values(kind: ExperimentKind, run: &Run, state: &AgentState, record: &StepRecord) -> Vec<f64> {
    let instance = &run.named.instance;
    let counts = state.public_posterior.counts();
    let t = state.step as f64;
    match kind {
        ExperimentKind::Rate => {
            let best_public = instance.best_public_arm();
            (0..counts.len())
                .filter(|&a| a != best_public)
                .map(|a| counts[a] as f64)
                .collect()
        }
        ExperimentKind::EpsSweep => vec![record.error_prob.unwrap_or(f64::NAN)],
        ExperimentKind::Asymmetry => counts
            .iter()
            .map(|&n| n as f64 / t)
            .chain(counts.iter().map(|&n| n as f64))
            .collect(),
        ExperimentKind::GammaConvergence => {
            let (gaps, star) = run.gamma_star.as_ref().expect("planned with Γ*");
            vec![star - empirical_gamma(&state.boost_counts, gaps)]
        }
        _ => unreachable!(),
    }
}

/// `Γ(w_t)` with `w_t` the boost counts outside the best private arm,
/// renormalized; zero before any such boost.
pub fn empirical_gamma(boost_counts: &[u64], gaps: &GapStructure) -> f64 {
    let weights: Vec<f64> = gaps
        .weighted_arms()
        .into_iter()
        .map(|a| boost_counts[a] as f64)
        .collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    gamma(&weights, gaps).expect("weights match the gap structure")
}

fn kl_excess(record: &StepRecord, epsilon: Budget) -> f64 {
    match epsilon {
        Budget::Unconstrained => f64::NEG_INFINITY,
        Budget::Finite(e) => record.boosted_probs.kl_divergence(&record.reference_probs) - e,
    }
}

fn run_seed(kind: ExperimentKind, run: &Run, seed: u64, times: &[u64]) -> Result<SeedResult> {
    let mut values = vec![Vec::with_capacity(times.len()); run.series_names.len()];
    let mut next = 0;
    let mut result = SeedResult {
        values: Vec::new(),
        steps: 0,
        max_excess: f64::NEG_INFINITY,
        mismatches: 0,
    };
    let zero_budget = run.epsilon.is_zero();
    run_episode_with(&run.named.instance, &run.agent, seed, |state, record| {
        if !record.forced {
            result.steps += 1;
            result.max_excess = result.max_excess.max(kl_excess(record, run.epsilon));
            if zero_budget && record.boosted_probs != record.reference_probs {
                result.mismatches += 1;
            }
        }
        while next < times.len() && times[next] <= record.step {
            if times[next] == record.step {
                for (series, v) in values.iter_mut().zip(observe_values(kind, run, state, record)) {
                    series.push(v);
                }
            }
            next += 1;
        }
    })?;
    result.values = values;
    Ok(result)
}

fn agent_series(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let runs = plan_runs(config)?;
    let mut series = Vec::new();
    let mut audits = Vec::new();
    for run in &runs {
        // Grid times inside initialization carry no error probability yet.
        let init = run.agent.init_pulls_per_arm * run.named.instance.num_arms() as u64;
        let times: Vec<u64> = config.time_grid().into_iter().filter(|&t| t >= init).collect();
        let results: Vec<SeedResult> = (0..config.seeds)
            .into_par_iter()
            .map(|i| run_seed(config.kind, run, config.base_seed + i, &times))
            .collect::<Result<_>>()?;
        for (j, name) in run.series_names.iter().enumerate() {
            let per_seed: Vec<Vec<f64>> = results.iter().map(|r| r.values[j].clone()).collect();
            let mut s = aggregate(name, &times, &per_seed)?;
            if config.kind == ExperimentKind::Rate {
                s.phi = Some(rate_prediction(run, j, &times)?);
            }
            series.push(s);
        }
        audits.push(KlAudit {
            run: run.label.clone(),
            epsilon: run.epsilon,
            steps: results.iter().map(|r| r.steps).sum(),
            max_excess: results.iter().map(|r| r.max_excess).fold(f64::NEG_INFINITY, f64::max),
            zero_budget_mismatches: results.iter().map(|r| r.mismatches).sum(),
        });
    }
    Ok(ExperimentOutput::Series { series, audits })
}

// φ for the j-th publicly suboptimal arm, assuming equal boost shares.
fn rate_prediction(run: &Run, j: usize, times: &[u64]) -> Result<Vec<f64>> {
    let instance = &run.named.instance;
    let best_public = instance.best_public_arm();
    let arm = (0..instance.num_arms())
        .filter(|&a| a != best_public)
        .nth(j)
        .expect("one series per suboptimal arm");
    let gap = instance.public_means[best_public] - instance.public_means[arm];
    let share = 1.0 / (instance.num_arms() - 1) as f64;
    times
        .iter()
        .map(|&t| predicted_pulls(run.epsilon.value(), instance.variance, gap, share, t))
        .collect()
}

/// Writes series as `time,series_name,mean,ci_low,ci_high`, plus `phi` when
/// any series carries a prediction.
pub fn write_series_csv<W: Write>(inner: W, series: &[AggregateSeries]) -> Result<()> {
    let with_phi = series.iter().any(|s| s.phi.is_some());
    let mut writer = csv::Writer::from_writer(inner);
    let mut header = vec!["time", "series_name", "mean", "ci_low", "ci_high"];
    if with_phi {
        header.push("phi");
    }
    writer.write_record(&header)?;
    for s in series {
        for i in 0..s.times.len() {
            let mut row = vec![
                s.times[i].to_string(),
                s.name.clone(),
                format_float(s.mean[i]),
                format_float(s.ci_low[i]),
                format_float(s.ci_high[i]),
            ];
            if with_phi {
                row.push(s.phi.as_ref().map(|p| format_float(p[i])).unwrap_or_default());
            }
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn write_allocation_csv<W: Write>(inner: W, rows: &[AllocationRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(inner);
    writer.write_record(["instance", "arm", "weight", "gamma_star", "y_star", "case"])?;
    for r in rows {
        let case = match r.case {
            AllocationCase::Interior => "interior",
            AllocationCase::Boundary => "boundary",
            AllocationCase::Degenerate => "degenerate",
        };
        writer.write_record([
            r.instance.clone(),
            r.arm.to_string(),
            format_float(r.weight),
            format_float(r.gamma_star),
            format_float(r.y_star),
            case.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_boost_curve_csv<W: Write>(inner: W, rows: &[BoostCurveRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(inner);
    writer.write_record(["epsilon", "p", "q_star", "q_hat"])?;
    for r in rows {
        writer.write_record([
            r.epsilon.to_string(),
            format_float(r.p),
            format_float(r.q_star),
            r.q_hat.map(format_float).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_output<W: Write>(output: &ExperimentOutput, inner: W) -> Result<()> {
    match output {
        ExperimentOutput::Series { series, .. } => write_series_csv(inner, series),
        ExperimentOutput::Allocation(rows) => write_allocation_csv(inner, rows),
        ExperimentOutput::BoostCurve(rows) => write_boost_curve_csv(inner, rows),
    }
}

pub fn write_output_file(output: &ExperimentOutput, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut buffered = BufWriter::new(file);
    write_output(output, &mut buffered)?;
    buffered.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_formula() {
        let s = aggregate("x", &[1], &[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert!((s.ci_high[0] - 1.0 - 1.96).abs() < 1e-12);
        assert!((s.ci_low[0] - 1.0 + 1.96).abs() < 1e-12);
        assert!(!s.single_seed);
    }

    #[test]
    fn aggregate_identical_and_single() {
        let s = aggregate("x", &[1, 2], &vec![vec![0.5, 0.25]; 4]).unwrap();
        assert_eq!(s.ci_low, s.mean);
        assert_eq!(s.ci_high, s.mean);
        let one = aggregate("x", &[1], &[vec![3.0]]).unwrap();
        assert!(one.single_seed);
        assert_eq!((one.ci_low[0], one.ci_high[0]), (3.0, 3.0));
        assert!(aggregate("x", &[1, 2], &[vec![1.0]]).is_err());
        assert!(aggregate("x", &[1], &[]).is_err());
    }

    #[test]
    fn grid_contains_tenth_and_horizon() {
        let grid = time_grid(300_000, 100);
        assert_eq!(grid.len(), 100);
        assert!(grid.contains(&30_000));
        assert_eq!(*grid.last().unwrap(), 300_000);
        assert_eq!(time_grid(5, 100), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for p in [Preset::Fig1, Preset::Fig2, Preset::Fig3, Preset::Fig4] {
            let config = p.config();
            config.validate().unwrap();
            let text = config.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), config, "{p}");
        }
        assert_eq!(Preset::Fig2.config().epsilons.len(), 6);
        assert!("fig5".parse::<Preset>().is_err());
    }

    #[test]
    fn config_errors() {
        let mut c = Preset::Fig2.config();
        c.seeds = 0;
        assert!(c.validate().is_err());
        let mut c = Preset::Fig2.config();
        c.horizon = 3;
        assert!(c.validate().is_err());
        let text = "kind = \"eps_sweep\"\nepsilons = [0.1]\nhorizon = 10\nbogus = 1\n";
        assert!(ExperimentConfig::from_toml_str(text).is_err());
        let text = "kind = \"eps_sweep\"\nepsilons = [0.1]\nhorizon = 10\n";
        assert!(ExperimentConfig::from_toml_str(text).is_err(), "no instances");
    }

    #[test]
    fn small_sweep_is_thread_independent() {
        let mut config = Preset::Fig2.config();
        config.seeds = 3;
        config.horizon = 300;
        config.grid_points = 10;
        config.threads = Some(1);
        let a = run_experiment(&config).unwrap();
        config.threads = Some(3);
        let b = run_experiment(&config).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_output(&a, &mut ca).unwrap();
        write_output(&b, &mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.series().len(), 6);
        assert_eq!(a.audits().len(), 6);
        let text = String::from_utf8(ca).unwrap();
        assert!(text.starts_with("time,series_name,mean,ci_low,ci_high\n"));
        assert_eq!(a.audits()[0].zero_budget_mismatches, 0);
        assert!(a.audits().iter().all(|x| x.max_excess <= 1e-9));
    }

    #[test]
    fn decay_and_tables() {
        let config = ExperimentConfig {
            kind: ExperimentKind::Decay,
            horizon: 1000,
            seeds: 4,
            grid_points: 10,
            ..Preset::Fig1.config()
        };
        let out = run_experiment(&config).unwrap();
        let s = &out.series()[0];
        assert_eq!(s.times.len(), 10);
        assert!((s.phi.as_ref().unwrap()[9] - 2000f64.sqrt()).abs() < 1e-12);

        let alloc = ExperimentConfig {
            kind: ExperimentKind::Allocate,
            ..Preset::Fig4.config()
        };
        match run_experiment(&alloc).unwrap() {
            ExperimentOutput::Allocation(rows) => assert_eq!(rows.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
        let curve = ExperimentConfig {
            kind: ExperimentKind::BoostCurve,
            ..Preset::Fig1.config()
        };
        match run_experiment(&curve).unwrap() {
            ExperimentOutput::BoostCurve(rows) => {
                assert_eq!(rows.len(), 200);
                assert!(rows.iter().all(|r| r.q_hat.unwrap() <= r.q_star + 1e-15));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
