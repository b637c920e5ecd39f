//! Python module `ebse`. Matrices cross the boundary as lists of rows.

use ebse_core::linalg::{Mat, Vector};
use ebse_core::model::{platoon_gap_indices, platoon_with_lqr, ModelDocument, NoiseSpec, PartitionedSystem};
use ebse_core::sdp::{SolverOptions, DEFAULT_TOL};
use ebse_core::sim::{self, DropModel, EstimatorParams, RecordLevel, SimConfig, SweepParams, SweepRow};
use ebse_core::synthesis::{self, EstimatorDesign, SynthOptions, Variant};
use ebse_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ebse, InfeasibleError, PyException, "The stability conditions admit no solution.");
create_exception!(ebse, NumericalError, PyException, "The solver or the simulation broke down numerically.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::StabilityInfeasible { .. } | Error::SynthesisFailure(_) | Error::ScheduleInfeasible(_) => {
            InfeasibleError::new_err(e.to_string())
        }
        Error::Numerical(_) | Error::Divergence { .. } | Error::Invariant { .. } => NumericalError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_variant(s: &str) -> PyResult<Variant> {
    s.parse().map_err(py_err)
}

fn options(tol: Option<f64>) -> SynthOptions {
    let solver = SolverOptions { tol: tol.unwrap_or(DEFAULT_TOL), ..SolverOptions::default() };
    SynthOptions { solver, ..SynthOptions::default() }
}

/// Partitioned plant with its noise description.
#[pyclass(module = "ebse", frozen)]
pub struct Model {
    sys: PartitionedSystem,
    noise: NoiseSpec,
    /// Vehicle count when built as a platoon.
    vehicles: Option<usize>,
}

#[pymethods]
impl Model {
    /// The LQR-controlled platoon with `vehicles` cars.
    #[staticmethod]
    #[pyo3(signature = (vehicles, dt = 0.02))]
    fn platoon(vehicles: usize, dt: f64) -> PyResult<Self> {
        let (sys, noise) = platoon_with_lqr(vehicles, dt).map_err(py_err)?;
        Ok(Self { sys, noise, vehicles: Some(vehicles) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (sys, noise) = ModelDocument::from_json(text).and_then(ModelDocument::into_model).map_err(py_err)?;
        Ok(Self { sys, noise, vehicles: None })
    }

    fn to_json(&self) -> PyResult<String> {
        ModelDocument::from_model(&self.sys, &self.noise).to_json().map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.sys.n()
    }

    #[getter]
    fn agents(&self) -> usize {
        self.sys.agents()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.sys.dt()
    }

    #[getter(A)]
    fn a(&self) -> Vec<Vec<f64>> {
        rows(self.sys.a())
    }

    #[getter(B)]
    fn b(&self) -> Vec<Vec<f64>> {
        rows(self.sys.b())
    }

    #[getter(C)]
    fn c(&self) -> Vec<Vec<f64>> {
        rows(self.sys.c())
    }

    fn __repr__(&self) -> String {
        format!("Model(n={}, agents={}, dt={})", self.sys.n(), self.sys.agents(), self.sys.dt())
    }
}

/// Gains, thresholds and certificates of a synthesized estimator.
#[pyclass(module = "ebse", frozen)]
pub struct Design {
    inner: EstimatorDesign,
}

#[pymethods]
impl Design {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: EstimatorDesign::from_json(text).map_err(py_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn j_max(&self) -> f64 {
        self.inner.perf.j_max
    }

    /// Error power with every agent transmitting.
    #[getter]
    fn c_star(&self) -> f64 {
        self.inner.c_star
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn c_z(&self) -> f64 {
        self.inner.c_z
    }

    #[getter]
    fn bound(&self) -> f64 {
        self.inner.bound
    }

    #[getter]
    fn gains(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.gains.iter().map(rows).collect()
    }

    #[getter]
    fn thresholds(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.thresholds.iter().map(rows).collect()
    }

    /// Re-checks every block of the design's conditions; returns `(passed, worst_violation, blocks)`.
    #[pyo3(signature = (model, slack = 10.0 * DEFAULT_TOL))]
    fn verify(&self, model: &Model, slack: f64) -> PyResult<(bool, f64, usize)> {
        let r = synthesis::verify_design(&model.sys, &model.noise, &self.inner, None, slack).map_err(py_err)?;
        Ok((r.passed, r.worst_violation, r.blocks.len()))
    }

    fn __repr__(&self) -> String {
        format!("Design(variant={}, J_max={}, bound={:.6})", self.inner.variant, self.inner.perf.j_max, self.inner.bound)
    }
}

/// Two-step design: gains for the full-communication error power, then the
/// largest thresholds whose certified bound meets `j_max`.
#[pyfunction]
#[pyo3(signature = (model, j_max, variant = "cor2", tol = None))]
fn synthesize(py: Python<'_>, model: &Model, j_max: f64, variant: &str, tol: Option<f64>) -> PyResult<Design> {
    let variant = parse_variant(variant)?;
    let opts = options(tol);
    let d = py.detach(|| synthesis::synthesize(&model.sys, &model.noise, variant, j_max, &opts)).map_err(py_err)?;
    Ok(Design { inner: d })
}

/// Full-communication floor `c*` of the gain step.
#[pyfunction]
#[pyo3(signature = (model, variant = "cor2", tol = None))]
fn floor(py: Python<'_>, model: &Model, variant: &str, tol: Option<f64>) -> PyResult<f64> {
    let variant = parse_variant(variant)?;
    let opts = options(tol);
    let s1 = py.detach(|| synthesis::synth_step1_gains(&model.sys, &model.noise, variant, &opts)).map_err(py_err)?;
    Ok(s1.c_star)
}

fn drops(p_loss: f64) -> PyResult<DropModel> {
    match p_loss {
        0.0 => Ok(DropModel::None),
        p if p > 0.0 && p <= 1.0 => Ok(DropModel::Bernoulli { p_loss: p }),
        p => Err(PyValueError::new_err(format!("p_loss {p} must lie in [0, 1]"))),
    }
}

/// Closed-loop run summarized over the tail window. Platoon models start with
/// the leading vehicle's velocity surplus; other models start at rest.
#[pyfunction]
#[pyo3(signature = (
    model, design, horizon = 50_000, seed = 0, p_loss = 0.1, surplus_velocity = 5.0,
    local_update = false, input_sharing = false, window = 200, tail_fraction = 0.5,
))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    model: &Model,
    design: &Design,
    horizon: usize,
    seed: u64,
    p_loss: f64,
    surplus_velocity: f64,
    local_update: bool,
    input_sharing: bool,
    window: usize,
    tail_fraction: f64,
) -> PyResult<Bound<'py, PyDict>> {
    design.inner.validate(&model.sys).map_err(py_err)?;
    let x0 = match model.vehicles {
        Some(m) => sim::platoon_initial_state(m, surplus_velocity),
        None => Vector::zeros(model.sys.n()),
    };
    let mut cfg = SimConfig::new(&model.sys, EstimatorParams::from(&design.inner), horizon, x0);
    cfg.seed = seed;
    cfg.drops = drops(p_loss)?;
    cfg.local_update = local_update;
    cfg.input_sharing = input_sharing;
    cfg.noise = model.noise.uniform.clone();
    cfg.record = RecordLevel::Light;
    let gaps = model.vehicles.map(platoon_gap_indices).unwrap_or_default();
    let m = py
        .detach(|| sim::run(&model.sys, &cfg).and_then(|t| sim::metrics(&t, window, tail_fraction, &gaps)))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("rates", m.rates)?;
    d.set_item("power", m.power)?;
    d.set_item("total_rate", m.total_rate)?;
    d.set_item("band", m.band)?;
    Ok(d)
}

fn row_dict<'py>(py: Python<'py>, r: &SweepRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("kind", r.kind)?;
    d.set_item("j_max", r.j_max)?;
    d.set_item("rate_divisor", r.rate_divisor)?;
    d.set_item("mean_power", r.mean_power)?;
    d.set_item("std_power", r.std_power)?;
    d.set_item("mean_rate", r.mean_rate)?;
    d.set_item("std_rate", r.std_rate)?;
    d.set_item("bound", r.bound)?;
    d.set_item("error", r.error.clone())?;
    Ok(d)
}

/// Event-based rows over `j_max` followed by baseline rows for divisors `1..=max_divisor`.
#[pyfunction]
#[pyo3(signature = (model, j_max, variant = "cor2", seeds = 20, horizon = 50_000, max_divisor = 200, jobs = 1, tol = None))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    model: &Model,
    j_max: Vec<f64>,
    variant: &str,
    seeds: usize,
    horizon: usize,
    max_divisor: usize,
    jobs: usize,
    tol: Option<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let variant = parse_variant(variant)?;
    let opts = options(tol);
    let params = SweepParams { seeds, horizon, jobs, baseline_divisors: (1..=max_divisor).collect(), ..SweepParams::default() };
    let rows = py
        .detach(|| {
            let mut rows = sim::sweep_tradeoff(&model.sys, &model.noise, variant, &j_max, &params, &opts)?;
            rows.extend(sim::baseline_rows(&model.sys, &model.noise, &params.baseline_divisors));
            Ok(rows)
        })
        .map_err(py_err)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Centralized filter that fuses all measurements every `r`-th step:
/// `(comm_rate, error_power)`.
#[pyfunction]
fn baseline(model: &Model, r: usize) -> PyResult<(f64, f64)> {
    let b = synthesis::centralized_baseline(&model.sys, &model.noise, r).map_err(py_err)?;
    Ok((b.comm_rate, b.error_power))
}

/// Transmitting agents (1-based) per step.
type Transmissions = Vec<Vec<usize>>;

/// Two-agent input-sharing example: `(states, transmitting agents per step)`.
/// Raises `NumericalError` if the run leaves the closed-form sequence.
#[pyfunction]
#[pyo3(signature = (input_sharing, steps = 10))]
fn demo_appf(input_sharing: bool, steps: usize) -> PyResult<(Vec<Vec<f64>>, Transmissions)> {
    let demo = sim::input_sharing_demo(input_sharing, steps).map_err(py_err)?;
    sim::check_input_sharing_demo(&demo).map_err(py_err)?;
    let t = &demo.trace;
    let states = (0..=t.steps.len()).map(|k| t.state(k).expect("k within the trace").iter().copied().collect()).collect();
    let tx = t.steps.iter().map(|s| s.transmit.iter().map(|i| i + 1).collect()).collect();
    Ok((states, tx))
}

/// Adds the classes, functions and exceptions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Design>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(floor, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(demo_appf, m)?)?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    Ok(())
}

#[pymodule]
fn ebse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
