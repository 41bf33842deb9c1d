//! Python bindings: scenario loading, the joint optimizer, sweeps, link
//! budgets and the assignment primitives.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use spaceris::association;
use spaceris::bcd;
use spaceris::cli;
use spaceris::output::{self, RunStamp};
use spaceris::scenario;
use spaceris::sweep::{self as sw, SweepKind};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Validated scenario configuration.
#[pyclass(module = "spaceris_py")]
pub struct Scenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl Scenario {
    /// Parses JSON text; an empty string gives the default scenario.
    #[new]
    #[pyo3(signature = (json = ""))]
    fn new(json: &str) -> PyResult<Self> {
        scenario::Scenario::from_json(json).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        scenario::parse_config(path).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn num_rues(&self) -> usize {
        self.inner.actors.num_rues
    }

    #[getter]
    fn num_sats(&self) -> usize {
        self.inner.constellation.num_planes * self.inner.constellation.sats_per_plane
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(planes={}, sats_per_plane={}, rues={}, seed={})",
            self.inner.constellation.num_planes,
            self.inner.constellation.sats_per_plane,
            self.inner.actors.num_rues,
            self.inner.seed
        )
    }
}

/// Result of one joint optimization run.
#[pyclass(module = "spaceris_py")]
pub struct Solution {
    #[pyo3(get)]
    objective: f64,
    #[pyo3(get)]
    mean_rate: f64,
    #[pyo3(get)]
    feasible: bool,
    #[pyo3(get)]
    power: Vec<f64>,
    #[pyo3(get)]
    links: Vec<(usize, usize)>,
    #[pyo3(get)]
    serving: Vec<Option<(usize, usize)>>,
    #[pyo3(get)]
    rounds: usize,
    /// (round, block, objective, feasible) rows.
    #[pyo3(get)]
    round_trace: Vec<(usize, String, f64, bool)>,
    tables: Vec<(String, String)>,
}

#[pymethods]
impl Solution {
    /// CSV text of every output table, keyed by schema name.
    fn tables<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in &self.tables {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Solution(objective={:e}, feasible={}, rounds={})", self.objective, self.feasible, self.rounds)
    }
}

/// Runs association, MAPPO and WOA under block coordinate descent.
#[pyfunction]
#[pyo3(signature = (scenario, workers = 1))]
fn simulate(py: Python<'_>, scenario: &Scenario, workers: usize) -> PyResult<Solution> {
    let s = scenario.inner.clone();
    let workers = workers.max(1);
    let (sol, world) = py
        .detach(|| {
            let world = std::sync::Arc::new(spaceris::world::World::new(&s).map_err(|e| e.to_string())?);
            let sol = bcd::solve_in(world.clone(), workers).map_err(|e| e.to_string())?;
            Ok::<_, String>((sol, world))
        })
        .map_err(runtime_err)?;
    let stamp = RunStamp::new(s.to_json().as_bytes(), s.seed, workers);
    let tables = [
        output::bcd_table(&sol.round_trace),
        output::woa_table(&sol.woa_trace),
        output::curve_table(&sol.learning_curve),
        output::association_table(&world, &sol.assoc),
        output::power_table(&sol.assoc, &sol.power),
        output::summary_table(&sol),
    ]
    .iter()
    .map(|t| (t.schema.to_string(), t.render(&stamp)))
    .collect();
    Ok(Solution {
        objective: sol.objective,
        mean_rate: sol.evaluation.mean_rate(),
        feasible: sol.report.feasible(),
        power: sol.power.clone(),
        links: sol.assoc.links.clone(),
        serving: sol.assoc.serving.clone(),
        rounds: sol.rounds_run,
        round_trace: sol.round_trace.iter().map(|r| (r.round, r.block.to_string(), r.objective, r.feasible)).collect(),
        tables,
    })
}

/// Loss components (dB) of the scenario's reference link.
#[pyfunction]
fn link_budget<'py>(py: Python<'py>, scenario: &Scenario) -> PyResult<Bound<'py, PyDict>> {
    let b = cli::reference_budget(&scenario.inner).map_err(runtime_err)?;
    let d = PyDict::new(py);
    for (k, v) in b.components() {
        d.set_item(k, v)?;
    }
    d.set_item("gain_db", b.gain_db)?;
    d.set_item("total_db", b.total_db)?;
    Ok(d)
}

/// Orbital period, slots per revolution and coverage of the first plane.
#[pyfunction]
fn orbit<'py>(py: Python<'py>, scenario: &Scenario) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for row in cli::orbit_table(&scenario.inner).rows {
        let v: f64 = row[1].parse().map_err(runtime_err)?;
        d.set_item(&row[0], v)?;
    }
    Ok(d)
}

/// Parameter sweep; returns (x, scheme, value, feasible, error) rows.
#[pyfunction]
#[pyo3(signature = (kind, scenario, grid = None, workers = 1))]
#[allow(clippy::type_complexity)]
fn sweep(
    py: Python<'_>,
    kind: &str,
    scenario: &Scenario,
    grid: Option<Vec<f64>>,
    workers: usize,
) -> PyResult<Vec<(f64, String, f64, bool, Option<String>)>> {
    let kind: SweepKind = kind.parse().map_err(value_err)?;
    let grid = grid.unwrap_or_else(|| kind.default_grid());
    let s = scenario.inner.clone();
    let r = py.detach(|| sw::run(kind, &s, &grid, workers.max(1))).map_err(value_err)?;
    Ok(r.rows.into_iter().map(|r| (r.x, r.scheme.to_string(), r.value, r.feasible, r.error)).collect())
}

/// Minimum-cost assignment; returns (column per row, total cost).
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let a = association::hungarian_assign(&cost).map_err(value_err)?;
    Ok((a.perm, a.total_cost))
}

/// Balanced k-means; returns (cluster per point, centroids, MSE trace).
#[pyfunction]
#[pyo3(signature = (points, centroids, max_iters = 100, tol = 1e-9))]
#[allow(clippy::type_complexity)]
fn bkmc(
    points: Vec<[f64; 2]>,
    centroids: Vec<[f64; 2]>,
    max_iters: usize,
    tol: f64,
) -> PyResult<(Vec<usize>, Vec<[f64; 2]>, Vec<f64>)> {
    let st = association::bkmc(&points, &centroids, max_iters, tol).map_err(value_err)?;
    Ok((st.assignment, st.centroids, st.mse_trace))
}

#[pymodule]
pub fn spaceris_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(link_budget, m)?)?;
    m.add_function(wrap_pyfunction!(orbit, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(bkmc, m)?)?;
    Ok(())
}
