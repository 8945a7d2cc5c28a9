//! Python bindings for the iterpdd solver.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use iterpdd::error_analysis::{self, GlobalErrorParams};
use iterpdd::fitting::{read_constants_csv, write_constants_csv, FitSettings, NodalConstants};
use iterpdd::geometry::Point;
use iterpdd::orchestrator::{CostLedger, Pdd, PddSolution, RunOptions};
use iterpdd::problem::{problem_by_name, StripProblem};
use iterpdd::scheduler::{build_schedule, Schedule, ScheduleSettings};
use iterpdd::PddError;

fn py_err(e: PddError) -> PyErr {
    match e {
        PddError::InvalidArgument(_) | PddError::Config(_) | PddError::OutsideDomain { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn options(seed: u64, kappa: f64) -> RunOptions {
    let mut o = RunOptions::default();
    o.nodal.seed = seed;
    o.schedule = ScheduleSettings { kappa, ..ScheduleSettings::default() };
    o
}

/// PDD solver on a registered problem.
#[pyclass(module = "iterpdd_py")]
pub struct Solver {
    pdd: Pdd,
    constants: Option<Vec<NodalConstants>>,
}

impl Solver {
    fn constants(&self) -> PyResult<&[NodalConstants]> {
        self.constants
            .as_deref()
            .ok_or_else(|| PyRuntimeError::new_err("no nodal constants: call fit() or load_constants() first"))
    }

    fn run_dict<'py>(&self, py: Python<'py>, sol: &PddSolution, ledger: &CostLedger) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("a", sol.a)?;
        d.set_item("values", sol.values.clone())?;
        d.set_item("weighted_steps", ledger.total_weighted_steps)?;
        d.set_item("plain_steps", ledger.total_plain_steps)?;
        d.set_item("cv_steps", ledger.total_cv_steps)?;
        d.set_item("conserved", ledger.is_conserved())?;
        d.set_item("modes", ledger.levels.iter().map(|l| format!("{:?}", l.mode)).collect::<Vec<_>>())?;
        d.set_item("mean_abs_rho", ledger.levels.iter().map(|l| l.mean_abs_rho).collect::<Vec<_>>())?;
        if let Some(r) = self.pdd.error_report(sol, 20) {
            d.set_item("mean_nodal_error", r.mean_nodal_error)?;
            d.set_item("max_nodal_error", r.max_nodal_error)?;
            d.set_item("sup_domain_error", r.sup_domain_error)?;
        }
        Ok(d)
    }
}

#[pymethods]
impl Solver {
    #[new]
    #[pyo3(signature = (problem = "paper-sec6", domain = None, m = 4, nodes_per_interface = 6, grid_spacing = 0.01, shape = None))]
    fn new(
        problem: &str,
        domain: Option<[f64; 4]>,
        m: usize,
        nodes_per_interface: usize,
        grid_spacing: f64,
        shape: Option<f64>,
    ) -> PyResult<Self> {
        let p = problem_by_name(problem, domain).map_err(py_err)?;
        let pdd = Pdd::new(p, m, nodes_per_interface, grid_spacing, shape).map_err(py_err)?;
        Ok(Self { pdd, constants: None })
    }

    /// Interface node coordinates, ordered by node id.
    fn nodes(&self) -> Vec<(f64, f64)> {
        self.pdd.partition.nodes.iter().map(|n| (n.position[0], n.position[1])).collect()
    }

    /// Largest overshoot constant of the interface interpolants.
    fn gamma_r(&self) -> PyResult<f64> {
        self.pdd.gamma_r().map_err(py_err)
    }

    /// Fits the nodal constants; returns one dict per node.
    #[pyo3(signature = (m_hat = 100, n_hat = 1000, h_min = 1e-3, h_max = 1e-2, seed = 0))]
    fn fit<'py>(&mut self, py: Python<'py>, m_hat: usize, n_hat: u64, h_min: f64, h_max: f64, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let settings = FitSettings { m_hat, n_hat, h_min, h_max, seed, ..FitSettings::default() };
        let pdd = &self.pdd;
        let out = py.detach(|| pdd.fit(&settings)).map_err(py_err)?;
        self.constants = Some(out.constants);
        self.constants()?
            .iter()
            .map(|c| {
                let d = PyDict::new(py);
                d.set_item("node", c.node)?;
                d.set_item("e_phi", c.e_phi)?;
                d.set_item("beta", c.beta)?;
                d.set_item("v_phi", c.v_phi)?;
                d.set_item("alpha", c.alpha)?;
                d.set_item("e_tau", c.e_tau)?;
                d.set_item("k", c.k)?;
                d.set_item("v_psi", c.v_psi)?;
                d.set_item("rho_phi_psi", c.rho_phi_psi)?;
                Ok(d)
            })
            .collect()
    }

    fn save_constants(&self, path: &str) -> PyResult<()> {
        write_constants_csv(std::path::Path::new(path), self.constants()?, &Vec::new()).map_err(py_err)
    }

    fn load_constants(&mut self, path: &str) -> PyResult<()> {
        let (c, _) = read_constants_csv(std::path::Path::new(path)).map_err(py_err)?;
        if c.len() != self.pdd.partition.n() {
            return Err(PyValueError::new_err(format!("{} constants for {} nodes", c.len(), self.pdd.partition.n())));
        }
        self.constants = Some(c);
        Ok(())
    }

    /// Cascade of tolerances ending at `a0`, coarsest first, and its predicted speedup.
    #[pyo3(signature = (a0, kappa = 1.8, stop_threshold = 1.5))]
    fn schedule(&self, a0: f64, kappa: f64, stop_threshold: f64) -> PyResult<(Vec<f64>, f64)> {
        let s = ScheduleSettings { kappa, stop_threshold, ..ScheduleSettings::default() };
        let sched = build_schedule(a0, self.constants()?, &s).map_err(py_err)?;
        Ok((sched.tolerances(), sched.cumulative_speedup))
    }

    /// PlainPDD at tolerance `a`.
    #[pyo3(signature = (a, seed = 0, kappa = 1.8))]
    fn run_plain<'py>(&self, py: Python<'py>, a: f64, seed: u64, kappa: f64) -> PyResult<Bound<'py, PyDict>> {
        let c = self.constants()?;
        let pdd = &self.pdd;
        let o = options(seed, kappa);
        let (sol, ledger) = py.detach(|| pdd.run_plain(a, c, &o)).map_err(py_err)?;
        self.run_dict(py, &sol, &ledger)
    }

    /// IterPDD along `tolerances`, coarsest first.
    #[pyo3(signature = (tolerances, seed = 0, kappa = 1.8))]
    fn run_iter<'py>(&self, py: Python<'py>, tolerances: Vec<f64>, seed: u64, kappa: f64) -> PyResult<Bound<'py, PyDict>> {
        let c = self.constants()?;
        let pdd = &self.pdd;
        let o = options(seed, kappa);
        let sched = Schedule::from_tolerances(&tolerances, c, &o.schedule).map_err(py_err)?;
        let (sols, ledger) = py.detach(|| pdd.run_iter(&sched, c, &o)).map_err(py_err)?;
        self.run_dict(py, sols.last().expect("non-empty schedule"), &ledger)
    }
}

/// Exact solution of the built-in test problem.
#[pyfunction]
fn exact_u(x: f64, y: f64) -> f64 {
    StripProblem::exact_u(&Point::new(x, y))
}

/// Rows `(gamma_r, ratio, s, nsr)` of the noise-to-signal table.
#[pyfunction]
#[pyo3(signature = (q = 2.0, samples = 100_000, seed = 0))]
fn nsr_table(q: f64, samples: usize, seed: u64) -> PyResult<Vec<(f64, f64, u64, f64)>> {
    let t = error_analysis::nsr_table(q, samples, seed).map_err(py_err)?;
    Ok(t.into_iter().map(|e| (e.gamma_r, e.ratio, e.s, e.nsr)).collect())
}

/// Nodal tolerance that keeps the global error below `eps` with the given confidence.
#[pyfunction]
#[pyo3(signature = (eps, gamma_r, q_max, s, q = 2.0))]
fn a0_from_epsilon(eps: f64, gamma_r: f64, q_max: f64, s: u64, q: f64) -> PyResult<f64> {
    let p = GlobalErrorParams::new(gamma_r, q_max, s, q).map_err(py_err)?;
    error_analysis::a0_from_epsilon(eps, &p).map_err(py_err)
}

#[pyfunction]
fn inverse_extreme_cdf(p: f64, s: u64) -> PyResult<f64> {
    error_analysis::inverse_extreme_cdf(p, s).map_err(py_err)
}

#[pymodule]
fn iterpdd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Solver>()?;
    m.add_function(wrap_pyfunction!(exact_u, m)?)?;
    m.add_function(wrap_pyfunction!(nsr_table, m)?)?;
    m.add_function(wrap_pyfunction!(a0_from_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_extreme_cdf, m)?)?;
    Ok(())
}
