//! Python module `empc`: cyclic horizons, the token bucket, the networked system with
//! its synthesized terminal ingredients, the optimal control problem, the closed loop
//! and the certificate suite.
//!
//! States and inputs cross the boundary as lists of floats in the layout
//! `x = [x_p..., u_s..., beta]`, `u = [u_c..., gamma]`.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cyclic_empc::config::ExperimentConfig;
use cyclic_empc::ncs::{bucket_step, min_cycle_length};
use cyclic_empc::sim::{self, ClosedLoopTrace, RunInfo};
use cyclic_empc::solver_lq::NcsBackend;
use cyclic_empc::verify::{self, ReportSet, SuiteOptions};
use cyclic_empc::{
    BoxSet, Error, NcsOptions, NcsPlant, OcpBackend, OcpInstance, ProblemModel, State,
    TokenBucketParams,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Dimension(_)
        | Error::Domain(_)
        | Error::NotControllable { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, name: &str) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err(format!(
            "{name} must be a nonempty rectangular list of rows"
        )));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn report_dicts<'py>(py: Python<'py>, reports: &ReportSet) -> PyResult<Vec<Bound<'py, PyDict>>> {
    reports
        .certificate
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", &r.name)?;
            d.set_item("pass", r.pass)?;
            d.set_item("informational", r.informational)?;
            d.set_item("worst_violation", r.worst_violation)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("samples", r.samples)?;
            d.set_item("witness", r.witness.clone())?;
            d.set_item("estimate", r.estimate)?;
            Ok(d)
        })
        .collect()
}

/// `N(k) = N̂ − (k mod M)`.
#[pyclass(name = "CyclicHorizon", module = "empc", frozen)]
struct PyCyclicHorizon(cyclic_empc::CyclicHorizon);

#[pymethods]
impl PyCyclicHorizon {
    #[new]
    fn new(max_horizon: usize, cycle_length: usize) -> PyResult<Self> {
        cyclic_empc::CyclicHorizon::new(max_horizon, cycle_length)
            .map(Self)
            .map_err(to_py)
    }

    fn length(&self, k: u64) -> usize {
        self.0.length(k)
    }

    fn is_cycle_end(&self, k: u64) -> bool {
        self.0.is_cycle_end(k)
    }

    #[getter]
    fn max_horizon(&self) -> usize {
        self.0.max_horizon()
    }

    #[getter]
    fn cycle_length(&self) -> usize {
        self.0.cycle_length()
    }

    #[getter]
    fn min_horizon(&self) -> usize {
        self.0.min_horizon()
    }

    fn __repr__(&self) -> String {
        format!(
            "CyclicHorizon(max_horizon={}, cycle_length={})",
            self.0.max_horizon(),
            self.0.cycle_length()
        )
    }
}

/// Token bucket with generation `g`, transmission cost `c` and size `b`.
#[pyclass(name = "TokenBucket", module = "empc", frozen, from_py_object)]
#[derive(Clone)]
struct PyTokenBucket(TokenBucketParams);

#[pymethods]
impl PyTokenBucket {
    #[new]
    fn new(generation: i64, cost: i64, size: i64) -> PyResult<Self> {
        TokenBucketParams::new(generation, cost, size)
            .map(Self)
            .map_err(to_py)
    }

    /// Next level, or `None` when the move would empty the bucket below zero.
    fn step(&self, level: i64, transmit: bool) -> Option<i64> {
        bucket_step(&self.0, level, transmit)
    }

    #[getter]
    fn threshold(&self) -> i64 {
        self.0.threshold()
    }

    /// `M = ⌈c/g⌉`.
    #[getter]
    fn cycle_length(&self) -> usize {
        min_cycle_length(&self.0)
    }

    #[getter]
    fn size(&self) -> i64 {
        self.0.size()
    }

    fn __repr__(&self) -> String {
        format!(
            "TokenBucket(generation={}, cost={}, size={})",
            self.0.generation(),
            self.0.cost(),
            self.0.size()
        )
    }
}

/// Solution of one optimal control problem.
#[pyclass(name = "OcpSolution", module = "empc", frozen, get_all)]
struct PyOcpSolution {
    feasible: bool,
    value: f64,
    rotated_value: f64,
    inputs: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
}

#[pymethods]
impl PyOcpSolution {
    fn __repr__(&self) -> String {
        format!(
            "OcpSolution(feasible={}, value={})",
            self.feasible, self.value
        )
    }
}

/// Closed-loop trace.
#[pyclass(name = "Trace", module = "empc", frozen)]
struct PyTrace(ClosedLoopTrace);

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.0.rows.len()
    }

    /// `x(0), ..., x(K)`, including the state after the last step.
    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.0.states().iter().map(vec_of).collect()
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        self.0.rows.iter().map(|r| vec_of(&r.input)).collect()
    }

    #[getter]
    fn horizons(&self) -> Vec<usize> {
        self.0.rows.iter().map(|r| r.horizon).collect()
    }

    #[getter]
    fn stage_costs(&self) -> Vec<f64> {
        self.0.rows.iter().map(|r| r.stage_cost).collect()
    }

    #[getter]
    fn rotated_values(&self) -> Vec<f64> {
        self.0.rows.iter().map(|r| r.rotated_value).collect()
    }

    #[getter]
    fn set_distances(&self) -> Vec<f64> {
        self.0.rows.iter().map(|r| r.set_distance).collect()
    }

    fn window_average_cost(&self, start: usize, end: usize) -> PyResult<f64> {
        sim::window_average_cost(&self.0, start, end).map_err(to_py)
    }

    fn to_csv(&self) -> PyResult<String> {
        self.0.to_csv().map_err(to_py)
    }
}

/// Plant with a token-bucket network and its synthesized terminal ingredients.
#[pyclass(name = "NcsSystem", module = "empc", frozen)]
struct PyNcsSystem {
    sys: Arc<cyclic_empc::NcsSystem>,
    backend: NcsBackend,
}

impl PyNcsSystem {
    fn wrap(sys: cyclic_empc::NcsSystem) -> Self {
        let sys = Arc::new(sys);
        Self {
            backend: NcsBackend::new(sys.clone()),
            sys,
        }
    }

    fn state(&self, x: Vec<f64>) -> PyResult<State> {
        if x.len() != self.sys.state_dim() {
            return Err(PyValueError::new_err(format!(
                "state has length {}, expected {}",
                x.len(),
                self.sys.state_dim()
            )));
        }
        Ok(State::from_vec(x))
    }

    fn input(&self, u: Vec<f64>) -> PyResult<DVector<f64>> {
        if u.len() != self.sys.input_dim() {
            return Err(PyValueError::new_err(format!(
                "input has length {}, expected {}",
                u.len(),
                self.sys.input_dim()
            )));
        }
        Ok(DVector::from_vec(u))
    }

    fn horizon(&self, max_horizon: usize) -> PyResult<cyclic_empc::CyclicHorizon> {
        cyclic_empc::CyclicHorizon::new(max_horizon, self.sys.cycle_length()).map_err(to_py)
    }
}

#[pymethods]
impl PyNcsSystem {
    #[new]
    #[pyo3(signature = (a, b, q, r, state_bounds, input_bounds, bucket, storage_scale=0.5, cost_scale=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        state_bounds: (Vec<f64>, Vec<f64>),
        input_bounds: (Vec<f64>, Vec<f64>),
        bucket: PyTokenBucket,
        storage_scale: f64,
        cost_scale: f64,
    ) -> PyResult<Self> {
        let boxed = |(lo, hi): (Vec<f64>, Vec<f64>)| {
            BoxSet::new(DVector::from_vec(lo), DVector::from_vec(hi))
        };
        let plant = NcsPlant::new(
            matrix(a, "a")?,
            matrix(b, "b")?,
            boxed(state_bounds).map_err(to_py)?,
            boxed(input_bounds).map_err(to_py)?,
            matrix(q, "q")?,
            matrix(r, "r")?,
        )
        .map_err(to_py)?;
        let opts = NcsOptions {
            storage_scale,
            cost_scale,
            ..NcsOptions::default()
        };
        cyclic_empc::NcsSystem::new(plant, bucket.0, opts)
            .map(Self::wrap)
            .map_err(to_py)
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    #[getter]
    fn cycle_length(&self) -> usize {
        self.sys.cycle_length()
    }

    /// Terminal cost matrix `P` on the plant state.
    #[getter]
    fn terminal_matrix(&self) -> Vec<Vec<f64>> {
        rows_of(&self.sys.design().p)
    }

    /// Terminal gain `K` of the lifted system.
    #[getter]
    fn terminal_gain(&self) -> Vec<Vec<f64>> {
        rows_of(&self.sys.design().k)
    }

    #[getter]
    fn terminal_level(&self) -> f64 {
        self.sys.design().level
    }

    #[getter]
    fn optimal_average_cost(&self) -> f64 {
        self.sys.optimal_average_cost()
    }

    fn dynamics(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let (x, u) = (self.state(x)?, self.input(u)?);
        if let Some(v) = self.sys.constraint_violation(&x, &u) {
            return Err(to_py(Error::Domain(v)));
        }
        Ok(vec_of(&self.sys.dynamics(&x, &u)))
    }

    fn stage_cost(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        Ok(self.sys.stage_cost(&self.state(x)?, &self.input(u)?))
    }

    /// `L = ℓ + λ − λ∘f − ℓ*_av`; raises for inadmissible pairs.
    fn rotated_stage_cost(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        let cert = self.sys.certificate();
        cyclic_empc::rotated_stage_cost(self.sys.as_ref(), &cert, &self.state(x)?, &self.input(u)?)
            .map_err(to_py)
    }

    fn storage(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(self.sys.certificate().storage(&self.state(x)?))
    }

    fn terminal_cost(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(self.sys.terminal_ingredients().cost(&self.state(x)?))
    }

    fn in_terminal_set(&self, x: Vec<f64>) -> PyResult<bool> {
        Ok(self.sys.terminal_ingredients().contains(&self.state(x)?))
    }

    fn set_distance(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(cyclic_empc::set_distance(
            self.sys.target_set(),
            &self.state(x)?,
        ))
    }

    fn solve(&self, x: Vec<f64>, horizon: usize) -> PyResult<PyOcpSolution> {
        let (ti, cert) = (self.sys.terminal_ingredients(), self.sys.certificate());
        let x = self.state(x)?;
        let inst = OcpInstance::new(self.sys.as_ref(), &ti, &cert, &x, horizon).map_err(to_py)?;
        let sol = self.backend.solve(&inst, None).map_err(to_py)?;
        Ok(PyOcpSolution {
            feasible: sol.feasible,
            value: sol.value,
            rotated_value: sol.rotated_value,
            inputs: sol.inputs.iter().map(vec_of).collect(),
            states: sol.predicted_states.iter().map(vec_of).collect(),
        })
    }

    #[pyo3(signature = (x0, max_horizon, steps, seed=0))]
    fn run_closed_loop(
        &self,
        x0: Vec<f64>,
        max_horizon: usize,
        steps: u64,
        seed: u64,
    ) -> PyResult<PyTrace> {
        let (ti, cert, h) = (
            self.sys.terminal_ingredients(),
            self.sys.certificate(),
            self.horizon(max_horizon)?,
        );
        let info = RunInfo {
            seed,
            ..RunInfo::default()
        };
        sim::run_closed_loop(
            self.sys.as_ref(),
            &ti,
            &cert,
            &h,
            &self.state(x0)?,
            steps,
            &self.backend,
            &info,
        )
        .map(PyTrace)
        .map_err(to_py)
    }

    /// Largest state deviation between the cyclic loop and the once-per-cycle loop.
    fn multi_step_equivalence(
        &self,
        x0: Vec<f64>,
        max_horizon: usize,
        cycles: u64,
    ) -> PyResult<f64> {
        let (ti, cert, h) = (
            self.sys.terminal_ingredients(),
            self.sys.certificate(),
            self.horizon(max_horizon)?,
        );
        let x0 = self.state(x0)?;
        sim::multi_step_equivalence(
            self.sys.as_ref(),
            &ti,
            &cert,
            &h,
            &x0,
            cycles,
            &self.backend,
            &RunInfo::default(),
        )
        .map(|r| r.max_deviation)
        .map_err(to_py)
    }

    /// Sampled certificates as a list of dicts.
    #[pyo3(signature = (max_horizon, samples=2000, ocp_samples=50, seed=0))]
    fn certificate_suite<'py>(
        &self,
        py: Python<'py>,
        max_horizon: usize,
        samples: usize,
        ocp_samples: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let opts = SuiteOptions {
            samples,
            ocp_samples,
            seed,
            max_horizon,
            samples_per_radius: samples / 10,
            ..SuiteOptions::default()
        };
        let reports =
            verify::ncs_certificate_suite(&self.sys, &self.backend, &opts).map_err(to_py)?;
        report_dicts(py, &reports)
    }
}

/// Experiment configuration read from TOML.
#[pyclass(name = "ExperimentConfig", module = "empc")]
struct PyExperimentConfig(ExperimentConfig);

#[pymethods]
impl PyExperimentConfig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        ExperimentConfig::parse(text).map(Self).map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn max_horizon(&self) -> usize {
        *self.0.horizon.max.get_ref()
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.0.horizon.steps
    }

    #[getter]
    fn initial_state(&self) -> Vec<f64> {
        vec_of(&self.0.initial_state())
    }

    fn hash(&self) -> PyResult<String> {
        self.0.hash().map_err(to_py)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.0.to_toml_string().map_err(to_py)
    }

    fn system(&self) -> PyResult<PyNcsSystem> {
        let sys = self.0.system().map_err(to_py)?;
        let mut wrapped = PyNcsSystem::wrap(sys);
        wrapped.backend = wrapped.backend.with_options(self.0.schedule_options());
        Ok(wrapped)
    }

    /// Closed loop from the configured initial state, with the config embedded in the trace.
    fn run(&self) -> PyResult<PyTrace> {
        let sys = self.system()?;
        let (ti, cert, h) = (
            sys.sys.terminal_ingredients(),
            sys.sys.certificate(),
            self.0.horizon().map_err(to_py)?,
        );
        let info = RunInfo {
            seed: self.0.seed,
            tolerance: self.0.tolerances.qp,
            config_hash: Some(self.0.hash().map_err(to_py)?),
            config: Some(self.0.to_table().map_err(to_py)?),
        };
        let x0 = self.0.initial_state();
        sim::run_closed_loop(
            sys.sys.as_ref(),
            &ti,
            &cert,
            &h,
            &x0,
            self.0.horizon.steps,
            &sys.backend,
            &info,
        )
        .map(PyTrace)
        .map_err(to_py)
    }

    /// Closed-loop certificates of `run()`.
    fn check_closed_loop<'py>(
        &self,
        py: Python<'py>,
        trace: &PyTrace,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let sys = self.0.system().map_err(to_py)?;
        let certificate = verify::check_closed_loop(
            &trace.0,
            &sys,
            &sys.certificate(),
            &self.0.closed_loop_options(),
        );
        report_dicts(py, &ReportSet { certificate })
    }
}

#[pyfunction]
fn horizon_length(h: &PyCyclicHorizon, k: u64) -> usize {
    cyclic_empc::horizon_length(&h.0, k)
}

#[pymodule]
pub fn empc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCyclicHorizon>()?;
    m.add_class::<PyTokenBucket>()?;
    m.add_class::<PyNcsSystem>()?;
    m.add_class::<PyOcpSolution>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyExperimentConfig>()?;
    m.add_function(wrap_pyfunction!(horizon_length, m)?)?;
    Ok(())
}
