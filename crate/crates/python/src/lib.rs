//! Python bindings: networks, the Gaussian policy, the surrogate solver,
//! the chain oracle, schedule validation and the training loop.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sldac::actor::{solve_actor_step, Branch, SolverOptions, Surrogate, SurrogateState};
use sldac::envs::chain::{chain_exact_stats, ChainMdpConfig};
use sldac::harness::{run_experiment, ExperimentConfig, Trainer};
use sldac::nn::{read_mlp, write_mlp, FeatureMap, MlpParams, MlpSpec};
use sldac::policy::{ParamDomain, PolicyParams};
use sldac::schedules::validate_region;
use sldac::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Shape(_) | Error::Argument(_) | Error::Config(_) | Error::Format(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// √m-scaled bias-free ReLU network.
#[pyclass(name = "Mlp")]
struct PyMlp {
    inner: MlpParams,
}

#[pymethods]
impl PyMlp {
    #[new]
    fn new(depth: usize, width: usize, input_dim: usize, output_dim: usize, seed: u64) -> PyResult<Self> {
        let spec = MlpSpec::new(depth, width, input_dim, output_dim).map_err(py_err)?;
        Ok(Self {
            inner: MlpParams::init(spec, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let file = std::fs::File::open(path)?;
        Ok(Self {
            inner: read_mlp(std::io::BufReader::new(file)).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(path)?;
        write_mlp(&self.inner, std::io::BufWriter::new(file)).map_err(py_err)
    }

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn flatten(&self) -> Vec<f64> {
        self.inner.flatten()
    }

    fn assign_flat(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.inner.assign_flat(&flat).map_err(py_err)
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.evaluate(&x).map_err(py_err)?.iter().copied().collect())
    }

    /// Gradient of `upstreamᵀ f(θ; x)` with respect to the flat parameters.
    fn gradient(&self, x: Vec<f64>, upstream: Vec<f64>) -> PyResult<Vec<f64>> {
        let (_, cache) = self.inner.forward(&x).map_err(py_err)?;
        self.inner.backward(&cache, &upstream).map_err(py_err)
    }

    /// Per-layer Frobenius-ball projection around `anchor`.
    fn project(&self, anchor: &PyMlp, radius: f64) -> PyResult<PyMlp> {
        Ok(PyMlp {
            inner: self.inner.project_per_layer_ball(&anchor.inner, radius).map_err(py_err)?,
        })
    }
}

/// Diagonal Gaussian policy over states scaled by `bound`.
#[pyclass(name = "Policy")]
struct PyPolicy {
    inner: PolicyParams,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (depth, width, state_dim, action_dim, seed, bound = 1.0, bias = 0.0))]
    fn new(depth: usize, width: usize, state_dim: usize, action_dim: usize, seed: u64, bound: f64, bias: f64) -> PyResult<Self> {
        let features = FeatureMap::uniform(state_dim, bound, bias).map_err(py_err)?;
        Ok(Self {
            inner: PolicyParams::init(depth, width, features, action_dim, seed).map_err(py_err)?,
        })
    }

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn flat(&self) -> Vec<f64> {
        self.inner.flat()
    }

    fn set_flat(&mut self, theta: Vec<f64>) -> PyResult<()> {
        self.inner.set_flat(&theta).map_err(py_err)
    }

    fn mean_and_std(&self, state: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.inner.mean_and_std(&state).map_err(py_err)
    }

    fn sample(&self, state: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = sldac::seeded_rng(seed);
        self.inner.sample_action(&state, &mut rng).map_err(py_err)
    }

    fn log_prob(&self, state: Vec<f64>, action: Vec<f64>) -> PyResult<f64> {
        self.inner.log_prob(&state, &action).map_err(py_err)
    }

    fn grad_log_prob(&self, state: Vec<f64>, action: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad_log_prob(&state, &action).map_err(py_err)
    }
}

/// Outer training loop for one seed of a JSON experiment config.
#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config_json: &str, seed: u64) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
        Ok(Self {
            inner: Trainer::new(&cfg, seed).map_err(py_err)?,
        })
    }

    /// Runs one outer iteration and returns its metrics row as a dict.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let row = self.inner.run_iteration().map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("t", row.t)?;
        d.set_item("j_hat", row.j_hat)?;
        d.set_item("j_tilde", row.j_tilde)?;
        d.set_item("cost", row.cost)?;
        d.set_item("msbe", row.msbe)?;
        d.set_item("branch", row.branch.map(branch_name))?;
        d.set_item("y_star", row.y_star)?;
        d.set_item("step_norm", row.step_norm)?;
        Ok(d)
    }

    fn inject_j_hat(&mut self, j: Option<Vec<f64>>) {
        self.inner.inject_j_hat(j);
    }

    fn theta(&self) -> Vec<f64> {
        self.inner.policy.flat()
    }
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Objective => "objective",
        Branch::Feasibility => "feasibility",
    }
}

/// Solves one actor subproblem. Returns `(theta_bar, multipliers, branch, y_star)`.
#[pyfunction]
#[pyo3(signature = (anchor, j_hat, g_hat, zeta, lower, upper, tol = 1e-8, max_iters = 10_000))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn solve_subproblem(
    anchor: Vec<f64>,
    j_hat: Vec<f64>,
    g_hat: Vec<Vec<f64>>,
    zeta: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> PyResult<(Vec<f64>, Vec<f64>, &'static str, Option<f64>)> {
    if j_hat.len() != g_hat.len() || j_hat.len() != zeta.len() {
        return Err(PyValueError::new_err("j_hat, g_hat and zeta need one entry per cost index"));
    }
    let surrogates = j_hat
        .into_iter()
        .zip(g_hat)
        .zip(zeta)
        .map(|((j_hat, g_hat), zeta)| Surrogate { j_hat, g_hat, zeta })
        .collect();
    let state = SurrogateState::new(anchor, surrogates).map_err(py_err)?;
    let domain = ParamDomain::new(lower, upper).map_err(py_err)?;
    let sol = solve_actor_step(&state, &domain, &SolverOptions { tol, max_iters }, None, None).map_err(py_err)?;
    Ok((sol.theta_bar, sol.multipliers, branch_name(sol.branch), sol.y_star))
}

/// Violated step-size region groups for exponents `(κ1, κ2, κ3, κ4)`.
#[pyfunction]
fn schedule_region_violations(kappas: [f64; 4]) -> Vec<String> {
    validate_region(kappas).iter().map(|v| v.label().to_string()).collect()
}

/// Exact `(J, Q, stationary)` of the built-in four-state chain under
/// `p1[s] = π(d = 1 | s)`.
#[pyfunction]
fn chain_oracle(p1: Vec<f64>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let stats = chain_exact_stats(&ChainMdpConfig::four_state(), &p1).map_err(py_err)?;
    Ok((stats.j, stats.q, stats.stationary))
}

/// Runs every seed of a JSON config; returns the summary as JSON text.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir = None))]
fn run(config_json: &str, out_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let summary = run_experiment(&cfg, out_dir.as_deref()).map_err(py_err)?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn pysldac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMlp>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(solve_subproblem, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_region_violations, m)?)?;
    m.add_function(wrap_pyfunction!(chain_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
