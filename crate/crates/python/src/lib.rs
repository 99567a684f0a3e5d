//! Python bindings: models, chains, autocorrelation, exact shells, the
//! oracle suites and the benchmark presets.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use shellwalk::analysis;
use shellwalk::error::Error;
use shellwalk::experiment::{self, ExperimentConfig, Fairness, Preset, PresetSpec, Scale};
use shellwalk::generators::{self, Boundary};
use shellwalk::model::{self, ShellConstraint};
use shellwalk::oracle;
use shellwalk::samplers::{chain_rng, random_shell_state, run_chain, ImConfig, MetropolisConfig, Sampler};
use shellwalk::saw::{OrderPolicy, SawParams};
use shellwalk::verify::{self, VerifyOptions};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Verification(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn boundary(periodic: bool) -> Boundary {
    if periodic {
        Boundary::Periodic
    } else {
        Boundary::Open
    }
}

/// Pairwise binary model with energy `-sum J s_i s_j - sum h s_i`, `s = 2x - 1`.
#[pyclass(name = "IsingModel", module = "shellwalk_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: model::IsingModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (num_vars, edges, fields=None))]
    fn new(num_vars: usize, edges: Vec<(usize, usize, f64)>, fields: Option<Vec<f64>>) -> PyResult<Self> {
        let fields = fields.unwrap_or_else(|| vec![0.0; num_vars]);
        let inner = model::IsingModel::new(num_vars, edges, fields).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (side, coupling=1.0, field=0.0, periodic=false))]
    fn grid2d(side: usize, coupling: f64, field: f64, periodic: bool) -> PyResult<Self> {
        let inner = generators::grid2d_with(side, coupling, field, boundary(periodic)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (side, seed, periodic=false))]
    fn cube3d(side: usize, seed: u64, periodic: bool) -> PyResult<Self> {
        let inner = generators::cube3d_pm_j_with(side, seed, boundary(periodic)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn rbm_gabor(num_visible: usize, num_hidden: usize, seed: u64) -> PyResult<Self> {
        let inner = generators::rbm_gabor(num_visible, num_hidden, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Bipartite model from a hidden-by-visible weight matrix.
    #[staticmethod]
    fn rbm_from_weights(weights: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = generators::rbm_from_weights(&weights).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_model(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save_model(&self.inner, path).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::model_from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        model::model_to_json(&self.inner)
    }

    #[getter]
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner.edges().iter().map(|e| (e.i, e.j, e.coupling)).collect()
    }

    #[getter]
    fn fields(&self) -> Vec<f64> {
        self.inner.fields().to_vec()
    }

    fn energy(&self, bits: Vec<bool>) -> PyResult<f64> {
        self.inner.energy(&bits).map_err(py_err)
    }

    /// Energy change from flipping bit `i` of `bits`.
    fn delta_energy(&self, bits: Vec<bool>, i: usize) -> PyResult<f64> {
        self.inner.delta_energy(&bits, i).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("IsingModel(num_vars={}, num_edges={})", self.inner.num_vars(), self.inner.num_edges())
    }
}

fn order_policy(name: &str) -> PyResult<OrderPolicy> {
    match name {
        "up_down" => Ok(OrderPolicy::UpDownOnly),
        "down_up" => Ok(OrderPolicy::DownUpOnly),
        "symmetric" => Ok(OrderPolicy::RandomSymmetric),
        other => Err(PyValueError::new_err(format!(
            "unknown order {other:?}; expected up_down, down_up or symmetric"
        ))),
    }
}

/// Runs one chain on the shell at distance `n` from `reference` (all zeros by
/// default) and returns its recorded trace as a dict.
#[pyfunction]
#[pyo3(signature = (
    model, beta, moves, *, sampler="im", gamma=None, k_min=1, k_max=None, order="up_down",
    n=None, reference=None, stride=1, seed=0, chain=0
))]
#[allow(clippy::too_many_arguments)]
fn sample<'py>(
    py: Python<'py>,
    model: &PyModel,
    beta: f64,
    moves: u64,
    sampler: &str,
    gamma: Option<f64>,
    k_min: usize,
    k_max: Option<usize>,
    order: &str,
    n: Option<usize>,
    reference: Option<Vec<bool>>,
    stride: u64,
    seed: u64,
    chain: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = model.inner.num_vars();
    let reference = reference.unwrap_or_else(|| vec![false; m]);
    let constraint = ShellConstraint::new(reference, n.unwrap_or(m / 2)).map_err(py_err)?;
    let sampler = match sampler {
        "metropolis" => Sampler::Metropolis(MetropolisConfig { beta }),
        "im" => {
            let saw = SawParams::new(gamma.unwrap_or(beta), k_min, k_max.unwrap_or(k_min), order_policy(order)?)
                .map_err(py_err)?;
            Sampler::Im(ImConfig::new(beta, saw))
        }
        other => return Err(PyValueError::new_err(format!("unknown sampler {other:?}"))),
    };
    let inner = &model.inner;
    let (rec, bits) = py
        .detach(|| -> shellwalk::error::Result<_> {
            let mut rng = chain_rng(seed, chain);
            let mut st = random_shell_state(inner, &constraint, &mut rng)?;
            let rec = run_chain(inner, &mut st, &sampler, moves, stride, &mut rng)?;
            Ok((rec, st.bits().to_vec()))
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("sampler", &rec.sampler)?;
    d.set_item("steps", &rec.steps)?;
    d.set_item("energies", &rec.energies)?;
    d.set_item("accepted", &rec.accepted)?;
    d.set_item("ks", &rec.ks)?;
    d.set_item("acceptance_rate", rec.acceptance_rate())?;
    d.set_item("work_per_move", rec.work_per_move())?;
    d.set_item("evaluations_per_move", rec.evaluations_per_move())?;
    d.set_item("final_state", bits)?;
    Ok(d)
}

/// Normalized autocorrelation for lags `0..=max_lag`.
#[pyfunction]
fn acf(values: Vec<f64>, max_lag: usize) -> PyResult<Vec<f64>> {
    analysis::acf(&values, max_lag).map_err(py_err)
}

/// `1 + 2 sum rho`, truncated at the first non-positive lag.
#[pyfunction]
fn integrated_time(rho: Vec<f64>) -> f64 {
    analysis::integrated_time(&rho)
}

/// Enumerates the shell at distance `n` from the all-zero state and returns
/// `(states, probabilities)` under `exp(-beta E)`.
#[pyfunction]
fn exact_shell(model: &PyModel, beta: f64, n: usize) -> PyResult<(Vec<Vec<bool>>, Vec<f64>)> {
    let m = model.inner.num_vars();
    let c = ShellConstraint::magnetization(m, n).map_err(py_err)?;
    let states = oracle::enumerate_shell(m, &c, oracle::DEFAULT_SHELL_CAP).map_err(py_err)?;
    let shell = oracle::exact_distribution(&model.inner, beta, &c, states).map_err(py_err)?;
    Ok((shell.states, shell.probs))
}

#[pyfunction]
fn tv_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    oracle::tv_distance(&p, &q).map_err(py_err)
}

/// Runs the oracle suites and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (*, suite="all", seed=0, states=200_000, stride=5, moves=10_000, inject_corruption=false))]
fn run_verify<'py>(
    py: Python<'py>,
    suite: &str,
    seed: u64,
    states: u64,
    stride: u64,
    moves: usize,
    inject_corruption: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let all = suite == "all";
    if !matches!(suite, "all" | "kernel" | "sampling" | "pathwise") {
        return Err(PyValueError::new_err(format!("unknown suite {suite:?}")));
    }
    let opts = VerifyOptions {
        kernel: all || suite == "kernel",
        sampling: all || suite == "sampling",
        pathwise: all || suite == "pathwise",
        seed,
        sampling_states: states,
        sampling_stride: stride,
        pathwise_moves: moves,
        inject_corruption,
    };
    let report = py.detach(|| verify::run(&opts)).map_err(py_err)?;
    json_to_py(py, &report)
}

/// Runs a benchmark preset and returns its summary as a dict.
#[pyfunction]
#[pyo3(signature = (preset, *, scale="desk", trials=10, seed=0, moves=None, fair_ratio=None, workers=None))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    preset: &str,
    scale: &str,
    trials: usize,
    seed: u64,
    moves: Option<u64>,
    fair_ratio: Option<f64>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let preset = match preset {
        "ferro2d" => Preset::Ferro2d,
        "glass3d" => Preset::Glass3d,
        "rbm" => Preset::Rbm,
        other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    };
    let scale = match scale {
        "desk" => Scale::Desk,
        "paper" => Scale::Paper,
        other => return Err(PyValueError::new_err(format!("unknown scale {other:?}"))),
    };
    let mut spec = PresetSpec::new(preset, scale);
    if let Some(mv) = moves {
        spec.im_moves = mv;
    }
    let mut cfg = ExperimentConfig::new(spec);
    cfg.trials = trials;
    cfg.seed = seed;
    cfg.workers = workers;
    if let Some(r) = fair_ratio {
        cfg.fairness = Fairness::Ratio(r);
    }
    let res = py.detach(|| experiment::run_experiment(&cfg)).map_err(py_err)?;
    json_to_py(py, &res.summary)
}

#[pymodule]
fn shellwalk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(acf, m)?)?;
    m.add_function(wrap_pyfunction!(integrated_time, m)?)?;
    m.add_function(wrap_pyfunction!(exact_shell, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
