//! Python bindings for the scheduler.

use std::path::PathBuf;
use std::time::Duration;

use peasched_core::report::{schedule_csv, summary_json, trace_csv};
use peasched_core::{
    brute_force_dispatch, bundled, load_scenario, mlcoh, parse_scenario, run_horizon, scale_fleet,
    write_outputs, CostBreakdown, FleetEntry, OperatingState, PeriodContext, PeriodResult,
    RuntimeOptions,
};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn breakdown_dict<'py>(py: Python<'py>, b: &CostBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("capex", b.capex_per_kg)?;
    d.set_item("opex", b.opex_per_kg)?;
    d.set_item("om", b.om_per_kg)?;
    d.set_item("startup", b.startup_per_kg)?;
    d.set_item("mlcoh", b.mlcoh)?;
    Ok(d)
}

/// Cost breakdown in EUR/kg of the reference AEM module at `op` percent
/// load and `price` EUR/kWh.
#[pyfunction]
#[pyo3(signature = (op = 100.0, price = 0.05, delta_int = 1.0))]
fn lcoh<'py>(py: Python<'py>, op: f64, price: f64, delta_int: f64) -> PyResult<Bound<'py, PyDict>> {
    let entry = FleetEntry::aem_el4("AEM");
    let ctx = PeriodContext::new(price, delta_int, 0.0);
    ctx.validate().map_err(value_err)?;
    let b = mlcoh(op, OperatingState::Production, false, &entry.fin, &entry.pea, &ctx).map_err(value_err)?;
    breakdown_dict(py, &b)
}

/// Names accepted by `Scenario.bundled`.
#[pyfunction]
fn bundled_scenarios() -> Vec<&'static str> {
    bundled::ALL.iter().map(|(name, _)| *name).collect()
}

#[pyclass(name = "Scenario", module = "peasched", frozen)]
struct PyScenario {
    inner: peasched_core::Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = load_scenario(&path).map_err(value_err)?;
        Ok(PyScenario { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        let inner = parse_scenario(text).map_err(value_err)?;
        Ok(PyScenario { inner })
    }

    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        let (_, text) = bundled::ALL
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))?;
        Self::parse(text)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn agents(&self) -> Vec<String> {
        self.inner.fleet.iter().map(|e| e.pea.id.clone()).collect()
    }

    #[getter]
    fn periods(&self) -> usize {
        self.inner.periods()
    }

    #[getter]
    fn targets(&self) -> Vec<f64> {
        self.inner.targets.clone()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Copy with `n` modules; demand follows capacity when `rescale_targets`.
    #[pyo3(signature = (n, rescale_targets = false))]
    fn scaled(&self, n: usize, rescale_targets: bool) -> PyResult<Self> {
        if n == 0 {
            return Err(PyValueError::new_err("fleet size must be positive"));
        }
        Ok(PyScenario {
            inner: scale_fleet(&self.inner, n, rescale_targets),
        })
    }

    /// Run the horizon. With `timeout_ms` the agents run on threads.
    #[pyo3(signature = (seed = None, timeout_ms = None))]
    fn run(&self, py: Python<'_>, seed: Option<u64>, timeout_ms: Option<u64>) -> PyResult<PySchedule> {
        let mut sc = self.inner.clone();
        if let Some(seed) = seed {
            sc.solver.seed = seed;
        }
        let options = match timeout_ms {
            Some(ms) => RuntimeOptions::threaded(Duration::from_millis(ms)),
            None => RuntimeOptions::default(),
        };
        let inner = py
            .detach(|| run_horizon(&sc, options))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(PySchedule { inner })
    }

    /// Exhaustive grid dispatch of one period, all modules starting in
    /// production.
    #[pyo3(signature = (period, grid_step = 1.0))]
    fn oracle<'py>(&self, py: Python<'py>, period: usize, grid_step: f64) -> PyResult<Bound<'py, PyDict>> {
        if period == 0 || period > self.inner.periods() {
            return Err(PyValueError::new_err(format!("period {period} out of range")));
        }
        let sc = &self.inner;
        let prev: Vec<OperatingState> = sc.fleet.iter().map(|e| e.initial_state).collect();
        let ctx = sc.period_context(period);
        let o = brute_force_dispatch(&sc.fleet, &prev, &ctx, grid_step, sc.solver.admm.eps_dem, sc.solver.allow_idle)
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("ops", o.ops)?;
        d.set_item("total_cost", o.total_cost)?;
        d.set_item("deviation", o.deviation)?;
        d.set_item("meets_demand", o.meets_demand)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, agents={}, periods={})",
            self.inner.name,
            self.inner.fleet.len(),
            self.inner.periods()
        )
    }
}

#[pyclass(name = "Schedule", module = "peasched", frozen)]
struct PySchedule {
    inner: peasched_core::ScheduleResult,
}

fn period_dict<'py>(py: Python<'py>, p: &PeriodResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("period", p.period)?;
    d.set_item("demand", p.demand)?;
    d.set_item("iterations", p.iterations_used)?;
    d.set_item("deviation", p.deviation_rel)?;
    d.set_item("converged", p.converged)?;
    d.set_item("cost_eur", p.total_cost())?;
    let agents = p
        .agents
        .iter()
        .map(|a| {
            let row = PyDict::new(py);
            row.set_item("agent", &a.agent)?;
            row.set_item("state", a.state.to_string())?;
            row.set_item("op", a.op)?;
            row.set_item("qty", a.qty)?;
            row.set_item("cost_eur", a.cost_eur)?;
            row.set_item("active", a.active)?;
            row.set_item("breakdown", breakdown_dict(py, &a.breakdown)?)?;
            Ok(row)
        })
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("agents", agents)?;
    Ok(d)
}

#[pymethods]
impl PySchedule {
    #[getter]
    fn total_kg(&self) -> f64 {
        self.inner.total_kg
    }

    #[getter]
    fn total_cost_eur(&self) -> f64 {
        self.inner.total_cost_eur
    }

    #[getter]
    fn mean_mlcoh(&self) -> f64 {
        self.inner.mean_mlcoh
    }

    #[getter]
    fn all_converged(&self) -> bool {
        self.inner.all_converged
    }

    #[getter]
    fn total_iterations(&self) -> u64 {
        self.inner.total_iterations
    }

    /// Worst fault recovery time in seconds, if any fault was scheduled.
    #[getter]
    fn max_rescheduling_latency(&self) -> Option<f64> {
        self.inner.max_rescheduling_latency.map(|d| d.as_secs_f64())
    }

    fn periods<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.periods.iter().map(|p| period_dict(py, p)).collect()
    }

    fn schedule_csv(&self) -> String {
        schedule_csv(&self.inner)
    }

    fn trace_csv(&self) -> String {
        trace_csv(&self.inner)
    }

    fn summary_json(&self) -> PyResult<String> {
        summary_json(&self.inner).map_err(value_err)
    }

    /// Write schedule.csv, trace.csv and summary.json into `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        write_outputs(&self.inner, &dir).map_err(|e| pyo3::exceptions::PyOSError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Schedule(periods={}, total_kg={:.6}, mean_mlcoh={:.4}, converged={})",
            self.inner.periods.len(),
            self.inner.total_kg,
            self.inner.mean_mlcoh,
            self.inner.all_converged
        )
    }
}

#[pymodule]
fn peasched(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(lcoh, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_scenarios, m)?)?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PySchedule>()?;
    Ok(())
}
