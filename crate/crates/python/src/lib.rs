use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wavekernel::cost::{kernel_call_table, scheme_cost as model_cost};
use wavekernel::harness::commands::{execute as run_command, write_csv};
use wavekernel::harness::{interpolate_initial, l2_pressure_error, Command, ModeSolution, RunConfig};
use wavekernel::operator::{AcousticOperator, StateVector};
use wavekernel::time::{compute_dt, SchemeKind, Stepper};
use wavekernel::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) | Error::Search(_) | Error::Internal(_) | Error::Io(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config(command: Command, options: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::new(command);
    if let Some(opts) = options {
        for (k, v) in opts.iter() {
            let key: String = k.extract()?;
            cfg.set(&key, &v.str()?.to_string()).map_err(to_py)?;
        }
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Runs a harness command; returns (csv text, human summary).
#[pyfunction]
#[pyo3(signature = (command, options = None))]
fn execute(command: &str, options: Option<&Bound<'_, PyDict>>) -> PyResult<(String, String)> {
    let cmd: Command = command.parse().map_err(to_py)?;
    let cfg = config(cmd, options)?;
    let report = run_command(&cfg).map_err(to_py)?;
    let mut buf = Vec::new();
    write_csv(&report.records, &mut buf).map_err(to_py)?;
    Ok((String::from_utf8_lossy(&buf).into_owned(), report.summary))
}

/// Kernel calls per scalar component for M^-1, K and the Taylor sum.
#[pyfunction]
fn kernel_calls<'py>(py: Python<'py>, k: usize, d: usize) -> PyResult<Bound<'py, PyDict>> {
    let t = kernel_call_table(k, d).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("mass", (t.mass.cell, t.mass.face))?;
    out.set_item("stiffness", (t.stiffness.cell, t.stiffness.face))?;
    out.set_item("tck", (t.tck.cell, t.tck.face))?;
    Ok(out)
}

/// Model FLOPs per element and time step.
#[pyfunction]
fn scheme_cost<'py>(py: Python<'py>, k: usize, d: usize, scheme: &str) -> PyResult<Bound<'py, PyDict>> {
    let s: SchemeKind = scheme.parse().map_err(to_py)?;
    let c = model_cost(k, d, s.cost_scheme()).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("mass", c.c_mass)?;
    out.set_item("stiffness", c.c_stiffness)?;
    out.set_item("tck", c.c_tck)?;
    out.set_item("tck_reduced", c.c_tck_reduced)?;
    out.set_item("total", c.c_scheme_total)?;
    out.set_item("total_reduced", c.c_scheme_total_reduced)?;
    Ok(out)
}

/// The standing-mode problem on the unit square or cube, advanced step by step.
#[pyclass]
struct Simulation {
    cfg: RunConfig,
    op: AcousticOperator,
    sol: ModeSolution,
    scheme: SchemeKind,
    state: StateVector,
    #[pyo3(get)]
    time: f64,
    #[pyo3(get)]
    dt: f64,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (options = None))]
    fn new(options: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = config(Command::Run, options)?;
        let op = cfg.build_operator(cfg.elements).map_err(to_py)?;
        let sol = ModeSolution::new(cfg.dim, cfg.mode, cfg.c, cfg.rho).map_err(to_py)?;
        let state = interpolate_initial(&op, &sol, 0.0);
        let dt = compute_dt(cfg.courant, &op.mesh, &op.material, op.k()).map_err(to_py)?;
        Ok(Simulation {
            scheme: cfg.schemes[0],
            cfg,
            op,
            sol,
            state,
            time: 0.0,
            dt,
        })
    }

    #[getter]
    fn n_dofs(&self) -> usize {
        self.op.n_dofs()
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        self.scheme.name()
    }

    /// Advances `steps` steps of size `dt`.
    fn advance(&mut self, py: Python<'_>, steps: usize) -> PyResult<()> {
        let (op, state, dt) = (&self.op, &mut self.state, self.dt);
        let sc = self.cfg.scheme_config(self.scheme, self.cfg.courant).map_err(to_py)?;
        py.detach(|| -> wavekernel::Result<()> {
            let mut st = Stepper::new(op, sc)?;
            st.run(state, dt, steps)
        })
        .map_err(to_py)?;
        self.time += steps as f64 * self.dt;
        Ok(())
    }

    /// L2 error of the pressure against the exact mode at the current time.
    fn pressure_error(&self) -> PyResult<f64> {
        l2_pressure_error(&self.op, &self.state, &self.sol, self.time).map_err(to_py)
    }

    /// Flat copy of the state, layout [element][component][node].
    fn state(&self) -> Vec<f64> {
        self.state.data.clone()
    }

    fn norm(&self) -> f64 {
        self.state.norm()
    }
}

#[pymodule]
fn pywavekernel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_calls, m)?)?;
    m.add_function(wrap_pyfunction!(scheme_cost, m)?)?;
    m.add_class::<Simulation>()?;
    Ok(())
}
