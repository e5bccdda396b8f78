//! Python module `pdesde`: scenarios, kernels, single paths and Monte Carlo
//! reports, returned as plain lists and dicts.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pdesde::analysis::{monte_carlo, RunSpec, Simulator};
use pdesde::config::{ControllerConfig, ScenarioConfig};
use pdesde::control::{default_poles, feedback_for_poles, Controller, LqLaw, LqWeights};
use pdesde::grid::{make_grid, SpaceTimeGrid};
use pdesde::kernels::{kernel_residuals, solve_kernels, KernelName, KernelSet};
use pdesde::params::SystemParams;
use pdesde::sim::{simulate_coupled, SimOptions};
use pdesde::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NonConvergence { .. } | Error::NonFinite(_) | Error::BlowUp { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A scenario with its grid and solved kernels.
#[pyclass(module = "pdesde", frozen)]
struct Scenario {
    cfg: ScenarioConfig,
    params: SystemParams,
    grid: SpaceTimeGrid,
    ks: Arc<KernelSet>,
}

impl Scenario {
    fn build(cfg: ScenarioConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let params = cfg.system_params()?;
        let grid = make_grid(&params, cfg.grid.nx)?;
        let ks =
            solve_kernels(&params, cfg.grid.nx, &cfg.gamma_beta_0(params.n()), cfg.kernels.tol, cfg.kernels.max_iter)?;
        Ok(Scenario { cfg, params, grid, ks: Arc::new(ks) })
    }

    fn controller(&self, kind: Option<&str>, poles: Option<Vec<f64>>, q: f64, r: f64) -> Result<Controller, Error> {
        let n = self.params.n();
        let cc = match kind {
            None if poles.is_none() => self.cfg.controller.clone(),
            None | Some("feedback") => {
                ControllerConfig::StabilizingFeedback { poles: poles.unwrap_or_else(|| default_poles(n)) }
            }
            Some("open_loop") => ControllerConfig::OpenLoop,
            Some("lq") => {
                ControllerConfig::LqOptimal { weights: LqWeights::constant(&(DMatrix::identity(n, n) * q), r) }
            }
            Some(other) => {
                return Err(Error::Config(format!("unknown controller {other:?} (open_loop, feedback, lq)")))
            }
        };
        Ok(match cc {
            ControllerConfig::OpenLoop => Controller::OpenLoop,
            ControllerConfig::StabilizingFeedback { poles } => feedback_for_poles(&self.params, &self.grid, &poles)?,
            ControllerConfig::LqOptimal { weights } => {
                Controller::Lq(Arc::new(LqLaw::new(&self.params, &self.ks, &weights, &self.grid)?))
            }
            ControllerConfig::Scripted { values } => Controller::Scripted(Arc::new(values)),
        })
    }
}

#[pymethods]
impl Scenario {
    /// Built-in scenario ("fig1" or "decoupled"), optionally regridded.
    #[new]
    #[pyo3(signature = (preset = "fig1", nx = None))]
    fn new(preset: &str, nx: Option<usize>) -> PyResult<Self> {
        let mut cfg = ScenarioConfig::preset(preset).map_err(py_err)?;
        if let Some(nx) = nx {
            cfg.grid.nx = nx;
        }
        Scenario::build(cfg).map_err(py_err)
    }

    /// Scenario from a JSON document following `schema/scenario.schema.json`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Scenario::build(ScenarioConfig::from_json(text).map_err(py_err)?).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.cfg.to_json().map_err(py_err)
    }

    #[getter]
    fn nx(&self) -> usize {
        self.grid.nx
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.grid.dt
    }

    #[getter]
    fn nt(&self) -> usize {
        self.grid.nt
    }

    #[getter]
    fn delay(&self) -> f64 {
        1.0 / self.params.mu
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.params.horizon
    }

    /// γ_α and γ_β on the spatial nodes, one row per node.
    fn gamma<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let rows = |g: &[nalgebra::RowDVector<f64>]| {
            g.iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()
        };
        let d = PyDict::new(py);
        d.set_item("x", (0..=self.grid.nx).map(|i| i as f64 * self.ks.dx()).collect::<Vec<_>>())?;
        d.set_item("alpha", rows(&self.ks.gamma_alpha))?;
        d.set_item("beta", rows(&self.ks.gamma_beta))?;
        Ok(d)
    }

    /// One kernel ("uu", "uv", "vu", "vv") as a full (nx+1)² table, zero above the diagonal.
    fn kernel(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let k = match name {
            "uu" => KernelName::Uu,
            "uv" => KernelName::Uv,
            "vu" => KernelName::Vu,
            "vv" => KernelName::Vv,
            _ => return Err(PyValueError::new_err(format!("unknown kernel {name:?}"))),
        };
        let f = self.ks.field(k);
        let nx = self.grid.nx;
        Ok((0..=nx).map(|i| (0..=nx).map(|j| if j <= i { f.get(i, j) } else { 0.0 }).collect()).collect())
    }

    /// Largest finite-difference residual of each kernel equation.
    fn residuals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for e in kernel_residuals(&self.ks, &self.params).entries {
            d.set_item(e.name.to_string(), e.max)?;
        }
        Ok(d)
    }

    /// One closed-loop path of the coupled system.
    #[pyo3(signature = (seed = 0, controller = None, poles = None, q = 1.0, r = 0.1))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        controller: Option<&str>,
        poles: Option<Vec<f64>>,
        q: f64,
        r: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let ctrl = self.controller(controller, poles, q, r).map_err(py_err)?;
        let spec = RunSpec::new(self.params.clone(), self.ks.clone(), self.grid.clone(), ctrl, Simulator::Coupled)
            .map_err(py_err)?;
        let path = spec.path(seed, 0).map_err(py_err)?;
        let tr = simulate_coupled(&self.params, &self.ks, &spec.controller, &path, &self.grid, SimOptions::default())
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("t", &tr.times)?;
        d.set_item("x", tr.x.iter().map(|x| x.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())?;
        d.set_item("v_eff", &tr.v_eff)?;
        d.set_item("v_in", &tr.v_in)?;
        d.set_item("beta0", &tr.beta0)?;
        Ok(d)
    }

    /// Mean, variance and V_min of X over `n_paths` seeded paths.
    #[pyo3(signature = (n_paths, seed = 7, controller = None, poles = None, q = 1.0, r = 0.1, simulator = "coupled", parallelism = 1))]
    #[allow(clippy::too_many_arguments)]
    fn monte_carlo<'py>(
        &self,
        py: Python<'py>,
        n_paths: usize,
        seed: u64,
        controller: Option<&str>,
        poles: Option<Vec<f64>>,
        q: f64,
        r: f64,
        simulator: &str,
        parallelism: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let sim = match simulator {
            "coupled" => Simulator::Coupled,
            "delayed" => Simulator::Delayed,
            _ => return Err(PyValueError::new_err(format!("unknown simulator {simulator:?}"))),
        };
        let ctrl = self.controller(controller, poles, q, r).map_err(py_err)?;
        let spec = RunSpec::new(self.params.clone(), self.ks.clone(), self.grid.clone(), ctrl, sim).map_err(py_err)?;
        let rep = py.detach(|| monte_carlo(&spec, n_paths, seed, parallelism)).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("t", &rep.times)?;
        d.set_item("mean_x", rep.mean_x.iter().map(|m| m.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())?;
        d.set_item("var_x", &rep.var_x)?;
        d.set_item("stderr_var", &rep.stderr_var)?;
        d.set_item("v_min", &rep.v_min)?;
        d.set_item("n_paths", rep.n_paths)?;
        Ok(d)
    }
}

/// Brownian increments and cumulative path for `seed`.
#[pyfunction]
fn sample_brownian(seed: u64, nt: usize, dt: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p = pdesde::brownian::sample_brownian(seed, nt, dt).map_err(py_err)?;
    Ok((p.increments, p.cumulative))
}

/// Gain K placing the eigenvalues of A − BK at `poles`, for A row-major.
#[pyfunction]
fn stabilizing_gain(a: Vec<Vec<f64>>, b: Vec<f64>, delay: f64, poles: Vec<f64>) -> PyResult<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("A must be {n}x{n}")));
    }
    let a = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let k = pdesde::control::stabilizing_gain(&a, &DVector::from_vec(b), delay, &poles).map_err(py_err)?;
    Ok(k.iter().copied().collect())
}

#[pymodule(name = "pdesde")]
fn pdesde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(sample_brownian, m)?)?;
    m.add_function(wrap_pyfunction!(stabilizing_gain, m)?)?;
    Ok(())
}
