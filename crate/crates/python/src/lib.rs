//! Python bindings for `deceptive_bandits`.
//!
//! Budgets are passed as a float or as the string `"unconstrained"`.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use deceptive_bandits::agent::{self, BoostSchedule, ChallengerRule};
use deceptive_bandits::allocation::{self, AllocationCase};
use deceptive_bandits::boost::{self, BoostSolver};
use deceptive_bandits::decay::{self, DecayProcessParams};
use deceptive_bandits::experiments::{self, ExperimentConfig, Preset};
use deceptive_bandits::{
    Budget, Error, GapStructure, GaussianBeliefs, ProbabilityMethod, RandomSource,
    SimplexDistribution,
};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) | Error::UnsupportedInstance(_) => {
            PyValueError::new_err(err.to_string())
        }
        Error::Io(_) | Error::Csv(_) => PyIOError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn budget(value: &Bound<'_, PyAny>) -> PyResult<Budget> {
    if let Ok(x) = value.extract::<f64>() {
        if x.is_infinite() && x > 0.0 {
            return Ok(Budget::Unconstrained);
        }
        return Budget::finite(x).map_err(to_py);
    }
    let text: String = value.extract()?;
    text.parse().map_err(to_py)
}

fn budget_value(b: Budget) -> f64 {
    b.value()
}

fn probability_method(name: &str, samples: u64) -> PyResult<ProbabilityMethod> {
    match name {
        "split_legendre" => Ok(ProbabilityMethod::SplitLegendre),
        "gauss_hermite" => Ok(ProbabilityMethod::GaussHermite),
        "monte_carlo" => Ok(ProbabilityMethod::MonteCarlo { samples }),
        other => Err(PyValueError::new_err(format!(
            "unknown probability method {other:?}; expected split_legendre, gauss_hermite or monte_carlo"
        ))),
    }
}

/// A Gaussian bandit with a public and a private reward per arm.
#[pyclass(name = "BanditInstance", module = "deceptive_bandits_py", from_py_object)]
#[derive(Clone)]
struct PyBanditInstance {
    inner: deceptive_bandits::BanditInstance,
}

#[pymethods]
impl PyBanditInstance {
    #[new]
    #[pyo3(signature = (public_means, private_means, variance = 1.0))]
    fn new(public_means: Vec<f64>, private_means: Vec<f64>, variance: f64) -> PyResult<Self> {
        let inner = deceptive_bandits::BanditInstance::new(public_means, private_means, variance)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn public_means(&self) -> Vec<f64> {
        self.inner.public_means.clone()
    }

    #[getter]
    fn private_means(&self) -> Vec<f64> {
        self.inner.private_means.clone()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.inner.variance
    }

    fn num_arms(&self) -> usize {
        self.inner.num_arms()
    }

    fn best_public_arm(&self) -> usize {
        self.inner.best_public_arm()
    }

    fn best_private_arm(&self) -> usize {
        self.inner.best_private_arm()
    }

    fn __repr__(&self) -> String {
        format!(
            "BanditInstance(public_means={:?}, private_means={:?}, variance={})",
            self.inner.public_means, self.inner.private_means, self.inner.variance
        )
    }
}

/// Agent settings; keyword arguments mirror the Rust `AgentConfig`.
#[pyclass(name = "AgentConfig", module = "deceptive_bandits_py", from_py_object)]
#[derive(Clone)]
struct PyAgentConfig {
    inner: agent::AgentConfig,
}

#[pymethods]
impl PyAgentConfig {
    #[new]
    #[pyo3(signature = (
        epsilon = None,
        delta = 0.05,
        max_steps = 100_000,
        init_pulls_per_arm = 1,
        approximate_boost = false,
        probability_method = "split_legendre",
        mc_samples = 10_000,
        rejection_challenger = false,
        mc_samples_for_selection = 1000,
        round_robin = false,
        stop_at_confidence = true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        epsilon: Option<&Bound<'_, PyAny>>,
        delta: f64,
        max_steps: u64,
        init_pulls_per_arm: u64,
        approximate_boost: bool,
        probability_method: &str,
        mc_samples: u64,
        rejection_challenger: bool,
        mc_samples_for_selection: u64,
        round_robin: bool,
        stop_at_confidence: bool,
    ) -> PyResult<Self> {
        let epsilon = match epsilon {
            Some(e) => budget(e)?,
            None => Budget::Finite(0.1),
        };
        let inner = agent::AgentConfig {
            epsilon,
            delta,
            max_steps,
            init_pulls_per_arm,
            mc_samples_for_selection,
            boost_solver: if approximate_boost {
                BoostSolver::Approximate
            } else {
                BoostSolver::Exact
            },
            probability_method: self::probability_method(probability_method, mc_samples)?,
            challenger_rule: if rejection_challenger {
                ChallengerRule::Rejection
            } else {
                ChallengerRule::Renormalized
            },
            boost_schedule: if round_robin {
                BoostSchedule::RoundRobinSuboptimal
            } else {
                BoostSchedule::TopTwo
            },
            stop_at_confidence,
            record_error_prob: true,
        };
        Ok(Self { inner })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        budget_value(self.inner.epsilon)
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn max_steps(&self) -> u64 {
        self.inner.max_steps
    }
}

/// A finished episode: per-step records as dicts plus the final state.
#[pyclass(name = "Episode", module = "deceptive_bandits_py")]
struct PyEpisode {
    inner: agent::Episode,
}

#[pymethods]
impl PyEpisode {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn recommendation(&self) -> Option<usize> {
        self.inner.recommendation
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.final_state.step
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.final_state.public_posterior.counts().to_vec()
    }

    #[getter]
    fn boost_counts(&self) -> Vec<u64> {
        self.inner.final_state.boost_counts.clone()
    }

    /// Private error probability after every step (`None` during initialization).
    fn error_probs(&self) -> Vec<Option<f64>> {
        self.inner.records.iter().map(|r| r.error_prob).collect()
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("step", r.step)?;
                d.set_item("forced", r.forced)?;
                d.set_item("leader", r.leader)?;
                d.set_item("challenger", r.challenger)?;
                d.set_item("boosted", r.boosted)?;
                d.set_item("pulled", r.pulled)?;
                d.set_item("reference_probs", r.reference_probs.probs().to_vec())?;
                d.set_item("boosted_probs", r.boosted_probs.probs().to_vec())?;
                d.set_item("error_prob", r.error_prob)?;
                d.set_item("kl_spent", r.kl_spent)?;
                Ok(d)
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

/// Runs one episode of the deceptive top-two agent.
#[pyfunction]
#[pyo3(signature = (instance, config, seed = 0))]
fn run_episode(instance: &PyBanditInstance, config: &PyAgentConfig, seed: u64) -> PyResult<PyEpisode> {
    let inner = agent::run_episode(&instance.inner, &config.inner, seed).map_err(to_py)?;
    Ok(PyEpisode { inner })
}

/// Largest `q >= p` with `KL(Ber(q) || Ber(p)) <= epsilon`.
#[pyfunction]
fn boost_probability(p: f64, epsilon: &Bound<'_, PyAny>) -> PyResult<f64> {
    boost::boost_probability(p, budget(epsilon)?).map_err(to_py)
}

/// Lambert-W underestimator of [`boost_probability`].
#[pyfunction]
fn boost_probability_approx(p: f64, epsilon: f64) -> PyResult<f64> {
    boost::boost_probability_approx(p, epsilon).map_err(to_py)
}

/// Boosted distribution of `target` inside the KL ball around `reference`.
#[pyfunction]
#[pyo3(signature = (reference, target, epsilon, approximate = false))]
fn boost_distribution(
    reference: Vec<f64>,
    target: usize,
    epsilon: &Bound<'_, PyAny>,
    approximate: bool,
) -> PyResult<Vec<f64>> {
    let reference = SimplexDistribution::new(reference).map_err(to_py)?;
    let solver = if approximate {
        BoostSolver::Approximate
    } else {
        BoostSolver::Exact
    };
    let sol = boost::boost_distribution_with(&reference, target, budget(epsilon)?, solver).map_err(to_py)?;
    Ok(sol.distribution.into_probs())
}

/// Probability that each arm's draw is the largest under independent normals.
#[pyfunction]
#[pyo3(signature = (means, stddevs, method = "split_legendre", samples = 100_000, seed = 0))]
fn optimal_arm_probabilities(
    means: Vec<f64>,
    stddevs: Vec<f64>,
    method: &str,
    samples: u64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let beliefs = GaussianBeliefs::new(means, stddevs).map_err(to_py)?;
    let method = probability_method(method, samples)?;
    let probs = method
        .evaluate(&beliefs, &mut RandomSource::new(seed))
        .map_err(to_py)?;
    Ok(probs.into_probs())
}

/// Optimal boosting allocation over the arms other than the best public arm.
#[pyfunction]
fn solve_allocation<'py>(
    py: Python<'py>,
    public_means: Vec<f64>,
    private_means: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let gaps = GapStructure::from_means(&public_means, &private_means).map_err(to_py)?;
    let sol = allocation::solve_allocation(&gaps).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("arms", sol.arms.clone())?;
    d.set_item("weights", sol.weights.probs().to_vec())?;
    d.set_item("gamma_star", sol.gamma_star)?;
    d.set_item("y_star", sol.y_star)?;
    let case = match sol.case {
        AllocationCase::Interior => "interior",
        AllocationCase::Boundary => "boundary",
        AllocationCase::Degenerate => "degenerate",
    };
    d.set_item("case", case)?;
    d.set_item("residual", sol.residual)?;
    Ok(d)
}

/// `Γ(w)` for weights over the arms other than the best public arm.
#[pyfunction]
fn gamma(weights: Vec<f64>, public_means: Vec<f64>, private_means: Vec<f64>) -> PyResult<f64> {
    let gaps = GapStructure::from_means(&public_means, &private_means).map_err(to_py)?;
    allocation::gamma(&weights, &gaps).map_err(to_py)
}

/// Success counts of the decaying-success process, `horizon + 1` entries.
#[pyfunction]
#[pyo3(signature = (c, m0, horizon, seed = 0))]
fn simulate_decay(c: f64, m0: f64, horizon: u64, seed: u64) -> PyResult<Vec<u64>> {
    let params = DecayProcessParams::new(c, m0, horizon).map_err(to_py)?;
    let trace = decay::simulate_decay(&params, &mut RandomSource::new(seed)).map_err(to_py)?;
    Ok(trace.success_counts)
}

/// Predicted pulls `sqrt(4 ε σ² share t) / gap`.
#[pyfunction]
#[pyo3(signature = (epsilon, gap, share, t, variance = 1.0))]
fn predicted_pulls(epsilon: f64, gap: f64, share: f64, t: u64, variance: f64) -> PyResult<f64> {
    decay::predicted_pulls(epsilon, variance, gap, share, t).map_err(to_py)
}

/// TOML text of a figure preset (`fig1` .. `fig4`).
#[pyfunction]
fn preset_config(name: &str) -> PyResult<String> {
    let preset: Preset = name.parse().map_err(to_py)?;
    preset.config().to_toml_string().map_err(to_py)
}

/// Runs an experiment described in TOML and returns its CSV text. The
/// config's `output_path`, if any, is also written.
#[pyfunction]
fn run_experiment(config_toml: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    let output = experiments::run_experiment(&config).map_err(to_py)?;
    let mut bytes = Vec::new();
    experiments::write_output(&output, &mut bytes).map_err(to_py)?;
    String::from_utf8(bytes).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn deceptive_bandits_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBanditInstance>()?;
    m.add_class::<PyAgentConfig>()?;
    m.add_class::<PyEpisode>()?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(boost_probability, m)?)?;
    m.add_function(wrap_pyfunction!(boost_probability_approx, m)?)?;
    m.add_function(wrap_pyfunction!(boost_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_arm_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(solve_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_decay, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_pulls, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
