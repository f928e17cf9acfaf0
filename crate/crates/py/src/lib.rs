//! Python bindings: scenario configs, a steppable simulation, and the
//! spectral tools.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vhsim::grid::Mask;
use vhsim::output::SnapshotField;
use vhsim::scenario::{self, Scenario, PRESET_NAMES};
use vhsim::solver::site_totals;
use vhsim::{Error, ScenarioConfig, SimState, Solver};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        4 => PyOSError::new_err(e.to_string()),
        3 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A scenario configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        scenario::preset(name).map(|inner| PyConfig { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        scenario::load_config(&path).map(|inner| PyConfig { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml_str(text, "<string>".as_ref())
            .map(|inner| PyConfig { inner })
            .map_err(to_py)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    fn with_cell_size(&self, h: f64) -> Self {
        PyConfig {
            inner: self.inner.with_cell_size(h),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn cell_size_km(&self) -> f64 {
        self.inner.domain.cell_size_km
    }

    #[getter]
    fn t_end_months(&self) -> f64 {
        self.inner.solver.t_end_months
    }

    #[setter]
    fn set_t_end_months(&mut self, t: f64) {
        self.inner.solver.t_end_months = t;
    }

    #[getter]
    fn transport_velocity(&self) -> (f64, f64) {
        let w = self.inner.vectors.transport_velocity_km_per_month;
        (w[0], w[1])
    }

    #[setter]
    fn set_transport_velocity(&mut self, w: (f64, f64)) {
        self.inner.vectors.transport_velocity_km_per_month = [w.0, w.1];
    }

    #[getter]
    fn snapshot_times_months(&self) -> Vec<f64> {
        self.inner.output.snapshot_times_months.clone()
    }

    #[setter]
    fn set_snapshot_times_months(&mut self, times: Vec<f64>) {
        self.inner.output.snapshot_times_months = times;
    }

    fn site_labels(&self) -> Vec<String> {
        self.inner.site_labels()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Config(name={:?}, h={})", self.inner.name, self.inner.domain.cell_size_km)
    }
}

/// A simulation that can be advanced step by step.
#[pyclass]
struct Simulation {
    scenario: Scenario,
    state: SimState,
    dt: f64,
}

impl Simulation {
    fn solver(&self) -> PyResult<Solver<'_>> {
        let s = &self.scenario;
        Solver::with_dt(&s.model, &s.initial, s.config.solver.clone(), self.dt).map_err(to_py)
    }

    fn site(&self, label: &str) -> PyResult<usize> {
        self.scenario
            .model
            .site_index(label)
            .ok_or_else(|| PyValueError::new_err(format!("no site {label:?}")))
    }
}

#[pymethods]
impl Simulation {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let scenario = config.inner.build().map_err(to_py)?;
        let dt = Solver::new(&scenario.model, &scenario.initial, scenario.config.solver.clone())
            .map_err(to_py)?
            .dt();
        let state = scenario.initial.clone();
        Ok(Simulation { scenario, state, dt })
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.dt
    }

    /// `(nx, ny)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.scenario.model.grid.nx(), self.scenario.model.grid.ny())
    }

    fn site_labels(&self) -> Vec<String> {
        self.scenario.config.site_labels()
    }

    #[pyo3(signature = (n=1))]
    fn step(&mut self, n: usize) -> PyResult<()> {
        let mut state = self.state.clone();
        let mut solver = self.solver()?;
        for _ in 0..n {
            solver.step(&mut state).map_err(to_py)?;
        }
        self.state = state;
        Ok(())
    }

    /// Steps until `t` is reached or passed; returns the number of steps.
    fn advance_to(&mut self, t: f64) -> PyResult<usize> {
        let n = ((t - self.state.t) / self.dt - 1e-9).ceil().max(0.0) as usize;
        self.step(n)?;
        Ok(n)
    }

    fn reset(&mut self) {
        self.state = self.scenario.initial.clone();
    }

    /// Host totals `(S, E, I)` of a site.
    fn host_totals(&self, site: &str) -> PyResult<(f64, f64, f64)> {
        let k = self.site(site)?;
        let [s, e, i] = site_totals(&self.state, k, self.scenario.model.grid.h());
        Ok((s, e, i))
    }

    /// Integrals of `(V_s, V_i)` over the domain.
    fn vector_totals(&self) -> (f64, f64) {
        let a = self.scenario.model.grid.cell_area();
        let sum = |v: &[f64]| v.iter().sum::<f64>() * a;
        (sum(&self.state.vs.values), sum(&self.state.vi.values))
    }

    /// Field values as rows, `field(name)[j][i]`, with `j = 0` at the bottom.
    fn field(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let all = [
            SnapshotField::Vs,
            SnapshotField::Vi,
            SnapshotField::V,
            SnapshotField::S,
            SnapshotField::E,
            SnapshotField::I,
        ];
        let f = all
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown field {name:?}")))?;
        let values = f.extract(&self.state, &self.scenario.model).values;
        Ok(values.chunks(self.scenario.model.grid.nx()).map(<[f64]>::to_vec).collect())
    }

    /// Full run to the configured end time with artifacts in `run_dir`.
    /// Returns the outbreak onsets by site.
    fn run(&self, run_dir: PathBuf) -> PyResult<Vec<(String, f64)>> {
        let out = scenario::run_scenario(&self.scenario, &run_dir).map_err(to_py)?;
        Ok(out.report.outbreaks.into_iter().map(|e| (e.site, e.onset_months)).collect())
    }
}

/// `(lambda1, iterations, residual)` for the vector operator on the whole
/// domain with zero data outside it.
#[pyfunction]
fn principal_eigenvalue(config: &PyConfig) -> PyResult<(f64, usize, f64)> {
    let sc = config.inner.build().map_err(to_py)?;
    let g = &sc.model.grid;
    let p = &sc.model.params;
    let r = vhsim::principal_eigenvalue(g, &p.diffusivity, &p.birth_rate, &Mask::full(g), &config.inner.spectral)
        .map_err(to_py)?;
    Ok((r.lambda1, r.iterations, r.residual))
}

/// `(lhs, rhs, satisfied)` of the persistence criterion.
#[pyfunction]
fn persistence_criterion(config: &PyConfig) -> PyResult<(f64, f64, bool)> {
    let sc = config.inner.build().map_err(to_py)?;
    let p = &sc.model.params;
    let c = vhsim::persistence_criterion(&p.birth_rate, p.diffusivity.max()).map_err(to_py)?;
    Ok((c.lhs, c.rhs, c.satisfied))
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

#[pymodule]
fn vhsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(principal_eigenvalue, m)?)?;
    m.add_function(wrap_pyfunction!(persistence_criterion, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    Ok(())
}
