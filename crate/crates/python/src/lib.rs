//! Python bindings for `eos_lab`.
//!
//! Matrices cross the boundary as lists of rows, trajectories and sweep
//! records as dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eos_lab::data_io::{self, SyntheticKind, SyntheticSpec};
use eos_lab::diagnet::{DiagNetProblem, MinimizerSet};
use eos_lab::dynamics::{self, RunConfig, Trajectory};
use eos_lab::error::Error;
use eos_lab::linalg::Matrix;
use eos_lab::logit::{self, TwoPointData};
use eos_lab::model::{DiagNetModel, MlpModel, Model};
use eos_lab::network::{self, MlpSpec};
use eos_lab::risk::{self, Algorithm};
use eos_lab::sweep::{self, SweepOptions};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::Config(_)
        | Error::ZeroFeature { .. }
        | Error::UnsupportedDepth(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn set_dict<'py>(py: Python<'py>, s: &MinimizerSet) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("support", s.support_indices.clone())?;
    d.set_item("radius_sq", s.radius_sq)?;
    d.set_item("objective_value", s.objective_value)?;
    d.set_item("representative", s.canonical_representative.clone())?;
    Ok(d)
}

fn trajectory_dict<'py>(py: Python<'py>, t: &Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("outcome", t.outcome.to_string())?;
    d.set_item("steps", t.steps)?;
    d.set_item("final_loss", t.final_loss)?;
    d.set_item("final_theta", t.final_theta.clone())?;
    d.set_item("t_eps", t.t_eps)?;
    d.set_item("time", t.entries.iter().map(|e| e.time).collect::<Vec<_>>())?;
    d.set_item("loss", t.entries.iter().map(|e| e.loss).collect::<Vec<_>>())?;
    d.set_item("sharpness", t.entries.iter().map(|e| e.sharpness).collect::<Vec<_>>())?;
    d.set_item("l1", t.entries.iter().map(|e| e.l1).collect::<Vec<_>>())?;
    if !t.path.is_empty() {
        d.set_item("path", t.path.clone())?;
    }
    Ok(d)
}

fn run(
    model: &dyn Model,
    theta0: &[f64],
    flow: bool,
    step: Option<f64>,
    goal: f64,
    max_steps: usize,
    seed: u64,
) -> Result<Trajectory, Error> {
    let step = match step {
        Some(s) => s,
        None if flow => dynamics::default_gf_step(model, theta0, seed)?,
        None => return Err(Error::InvalidArgument("gradient descent needs eta".into())),
    };
    let mut cfg = RunConfig::new(step, goal, max_steps).seed(seed);
    cfg.retain_path = theta0.len() <= 16;
    if flow {
        dynamics::gf_run(model, theta0, &cfg)
    } else {
        dynamics::gd_run(model, theta0, &cfg)
    }
}

/// `(s0, s_gf, eta_c_estimate, records)`
type SweepResult<'py> = (f64, f64, Option<f64>, Vec<Bound<'py, PyDict>>);

/// Learning-rate sweep.
fn sweep_model<'py>(
    py: Python<'py>,
    model: &dyn Model,
    theta0: &[f64],
    goal: f64,
    max_steps: usize,
    seed: u64,
) -> PyResult<SweepResult<'py>> {
    let (s0, s_gf, records) = py
        .detach(|| -> Result<_, Error> {
            let h = dynamics::default_gf_step(model, theta0, seed)?;
            let gf = dynamics::gf_run(model, theta0, &RunConfig::new(h, goal, 10_000_000).seed(seed))?;
            let s_gf = dynamics::s_gf(&gf, goal)?;
            let schedule = sweep::build_schedule(gf.initial_sharpness(), s_gf)?;
            let mut opts = SweepOptions::new(goal, max_steps);
            opts.seed = seed;
            Ok((
                gf.initial_sharpness(),
                s_gf,
                sweep::run_sweep(model, theta0, &schedule, &gf, &opts),
            ))
        })
        .map_err(py_err)?;
    let eta_c = sweep::estimate_eta_c(&records, s_gf).ok().map(|e| e.estimate);
    let mut out = Vec::new();
    for r in &records {
        let d = PyDict::new(py);
        d.set_item("eta", r.eta)?;
        d.set_item("grid", format!("{:?}", r.grid))?;
        d.set_item("outcome", r.outcome.map(|o| o.to_string()))?;
        d.set_item("regime", r.regime.to_string())?;
        d.set_item("steps", r.steps)?;
        d.set_item("final_loss", r.final_loss)?;
        d.set_item("final_sharpness", r.final_sharpness)?;
        d.set_item("max_sharpness", r.max_sharpness)?;
        d.set_item("l1", r.l1)?;
        d.set_item("gf_distance", r.gf_distance)?;
        out.push(d);
    }
    Ok((s0, s_gf, eta_c, out))
}

/// Single-sample diagonal network `⟨w^⊙2, x⟩ ≈ y`.
#[pyclass(name = "DiagNet", frozen)]
struct PyDiagNet {
    inner: DiagNetProblem,
}

#[pymethods]
impl PyDiagNet {
    #[new]
    fn new(x: Vec<f64>, y: f64) -> PyResult<Self> {
        Ok(Self {
            inner: DiagNetProblem::new(x, y).map_err(py_err)?,
        })
    }

    fn loss(&self, w: Vec<f64>) -> PyResult<f64> {
        self.inner.loss(&w).map_err(py_err)
    }

    fn gradient(&self, w: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.gradient(&w).map_err(py_err)
    }

    fn hessian(&self, w: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.hessian(&w).map(|h| rows(&h)).map_err(py_err)
    }

    /// Closed-form sharpness on the interpolation manifold.
    fn sharpness(&self, w: Vec<f64>) -> PyResult<f64> {
        self.inner.sharpness_closed_form(&w).map_err(py_err)
    }

    fn l1_minimizer_set<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        set_dict(py, &self.inner.l1_minimizer_set().map_err(py_err)?)
    }

    fn sharpness_minimizer_set<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        set_dict(py, &self.inner.sharpness_minimizer_set().map_err(py_err)?)
    }

    #[pyo3(signature = (theta0, eta, loss_goal=1e-8, max_steps=1_000_000, seed=0))]
    fn gd<'py>(
        &self,
        py: Python<'py>,
        theta0: Vec<f64>,
        eta: f64,
        loss_goal: f64,
        max_steps: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let model = DiagNetModel::new(self.inner.clone()).map_err(py_err)?;
        let t = py
            .detach(|| run(&model, &theta0, false, Some(eta), loss_goal, max_steps, seed))
            .map_err(py_err)?;
        trajectory_dict(py, &t)
    }

    #[pyo3(signature = (theta0, step=None, loss_goal=1e-8, max_steps=1_000_000, seed=0))]
    fn gf<'py>(
        &self,
        py: Python<'py>,
        theta0: Vec<f64>,
        step: Option<f64>,
        loss_goal: f64,
        max_steps: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let model = DiagNetModel::new(self.inner.clone()).map_err(py_err)?;
        let t = py
            .detach(|| run(&model, &theta0, true, step, loss_goal, max_steps, seed))
            .map_err(py_err)?;
        trajectory_dict(py, &t)
    }

    #[pyo3(signature = (theta0, loss_goal=1e-8, max_steps=200_000, seed=0))]
    fn sweep<'py>(
        &self,
        py: Python<'py>,
        theta0: Vec<f64>,
        loss_goal: f64,
        max_steps: usize,
        seed: u64,
    ) -> PyResult<SweepResult<'py>> {
        let model = DiagNetModel::new(self.inner.clone()).map_err(py_err)?;
        sweep_model(py, &model, &theta0, loss_goal, max_steps, seed)
    }
}

/// Fully connected network on a synthetic dataset.
#[pyclass(name = "Mlp", frozen)]
struct PyMlp {
    inner: MlpModel,
    spec: MlpSpec,
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (layers, activation="tanh", loss="mse", data="product_regression", n=64, noise=0.0, data_seed=7))]
    fn new(
        layers: Vec<usize>,
        activation: &str,
        loss: &str,
        data: &str,
        n: usize,
        noise: f64,
        data_seed: u64,
    ) -> PyResult<Self> {
        let spec = MlpSpec::new(
            layers,
            activation.parse().map_err(py_err)?,
            loss.parse().map_err(py_err)?,
        )
        .map_err(py_err)?;
        let kind: SyntheticKind = data.parse().map_err(py_err)?;
        let mut syn = SyntheticSpec::new(kind, spec.input_dim(), n, data_seed);
        syn.noise = noise;
        let dataset = data_io::generate(&syn).map_err(py_err)?;
        Ok(Self {
            inner: MlpModel::new(spec.clone(), dataset).map_err(py_err)?,
            spec,
        })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    #[pyo3(signature = (seed=1))]
    fn init(&self, seed: u64) -> Vec<f64> {
        network::init_lecun_uniform(&self.spec, seed)
    }

    fn loss(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.inner.loss(&theta).map_err(py_err)
    }

    fn loss_and_grad(&self, theta: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        self.inner.loss_and_grad(&theta).map_err(py_err)
    }

    fn hvp(&self, theta: Vec<f64>, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.hvp(&theta, &v).map_err(py_err)
    }

    /// Top absolute Hessian eigenvalue by power iteration.
    #[pyo3(signature = (theta, seed=0))]
    fn sharpness(&self, theta: Vec<f64>, seed: u64) -> PyResult<f64> {
        self.inner
            .sharpness(&theta, None, seed)
            .map(|s| s.value)
            .map_err(py_err)
    }

    #[pyo3(signature = (theta0, eta, loss_goal=1e-3, max_steps=100_000, seed=0))]
    fn gd<'py>(
        &self,
        py: Python<'py>,
        theta0: Vec<f64>,
        eta: f64,
        loss_goal: f64,
        max_steps: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let t = py
            .detach(|| run(&self.inner, &theta0, false, Some(eta), loss_goal, max_steps, seed))
            .map_err(py_err)?;
        trajectory_dict(py, &t)
    }

    #[pyo3(signature = (theta0, step=None, loss_goal=1e-3, max_steps=10_000_000, seed=0))]
    fn gf<'py>(
        &self,
        py: Python<'py>,
        theta0: Vec<f64>,
        step: Option<f64>,
        loss_goal: f64,
        max_steps: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let t = py
            .detach(|| run(&self.inner, &theta0, true, step, loss_goal, max_steps, seed))
            .map_err(py_err)?;
        trajectory_dict(py, &t)
    }

    #[pyo3(signature = (theta0, loss_goal=1e-3, max_steps=50_000, seed=0))]
    fn sweep<'py>(
        &self,
        py: Python<'py>,
        theta0: Vec<f64>,
        loss_goal: f64,
        max_steps: usize,
        seed: u64,
    ) -> PyResult<SweepResult<'py>> {
        sweep_model(py, &self.inner, &theta0, loss_goal, max_steps, seed)
    }
}

/// Sharpness of the logistic toy at `(z, b)`.
#[pyfunction]
fn logit_sharpness(z: f64, b: f64) -> f64 {
    logit::sharpness_zb(z, b)
}

/// Minimum-sharpness interpolating classifier: `(z, b, sharpness)`.
#[pyfunction]
#[pyo3(signature = (d=3, seed=0, grid=100))]
fn logit_min_sharpness(d: usize, seed: u64, grid: usize) -> PyResult<(f64, f64, f64)> {
    let data = TwoPointData::random(d, seed).map_err(py_err)?;
    let m = logit::min_sharpness_params(&data, grid).map_err(py_err)?;
    Ok((m.z, m.b, m.value))
}

fn risk_model(model: &str, d: usize) -> PyResult<risk::DataModel> {
    match model {
        "folded" => risk::folded_gaussian_model(d),
        "gaussian" => risk::gaussian_linear_model(d),
        other => return Err(PyValueError::new_err(format!("unknown risk model '{other}'"))),
    }
    .map_err(py_err)
}

/// Closed-form population risk of weights `w`.
#[pyfunction]
#[pyo3(signature = (w, model="folded"))]
fn population_risk(w: Vec<f64>, model: &str) -> PyResult<f64> {
    risk::risk(&w, &risk_model(model, w.len())?).map_err(py_err)
}

/// Monte-Carlo expected risk of `opt`, `l1` or `sharp`: `(estimate, std_error)`.
#[pyfunction]
#[pyo3(signature = (algorithm, d=5, n=100_000, seed=0, model="folded"))]
fn expected_risk(py: Python<'_>, algorithm: &str, d: usize, n: usize, seed: u64, model: &str) -> PyResult<(f64, f64)> {
    let alg = Algorithm::ALL
        .into_iter()
        .find(|a| a.name() == algorithm)
        .ok_or_else(|| PyValueError::new_err(format!("unknown algorithm '{algorithm}' (opt | l1 | sharp)")))?;
    let m = risk_model(model, d)?;
    let e = py.detach(|| risk::expected_risk_mc(alg, &m, n, seed)).map_err(py_err)?;
    Ok((e.estimate, e.std_error))
}

/// Runs the command line with `args` (without the program name).
#[pyfunction]
fn cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv = std::iter::once("eoslab".to_string()).chain(args).collect::<Vec<_>>();
    py.detach(|| eos_lab::cli::main_with_args(argv))
}

#[pymodule]
fn eoslab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDiagNet>()?;
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(logit_sharpness, m)?)?;
    m.add_function(wrap_pyfunction!(logit_min_sharpness, m)?)?;
    m.add_function(wrap_pyfunction!(population_risk, m)?)?;
    m.add_function(wrap_pyfunction!(expected_risk, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
