//! Python bindings for emgrid.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyModule;

use emgrid::engine::{run_screening, run_simulation, OutputOptions, SimInputs};
use emgrid::irdrop::analyze;
use emgrid::montecarlo::run_mc;
use emgrid::netlist::{emit_netlist, parse_netlist_with, NetlistDoc};
use emgrid::params::Params;
use emgrid::report;
use emgrid::synth;
use emgrid::thermal::ThermalMap;

create_exception!(emgrid_py, EmgridError, PyException);

fn err(e: emgrid::Error) -> PyErr {
    EmgridError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Simulation parameters. Keys use the parameter-file form, e.g.
/// `material.sigma_crit` or `sim.outer_steps`.
#[pyclass(name = "Params", module = "emgrid_py")]
struct PyParams {
    inner: Params,
}

#[pymethods]
impl PyParams {
    #[new]
    fn new() -> Self {
        Self {
            inner: Params::default(),
        }
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Params::parse(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(e.into()))?;
        Self::parse(&text)
    }

    /// Set one value; the change is validated immediately.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(err)?;
        next.validate().map_err(err)?;
        self.inner = next;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let text = serde_json::to_string(&self.inner).map_err(|e| err(e.into()))?;
        json_to_py(py, &text)
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(outer_steps={}, outer_dt={:e}, sigma_crit={:e}, t0={})",
            self.inner.sim.outer_steps, self.inner.sim.outer_dt, self.inner.material.sigma_crit, self.inner.thermal.t0
        )
    }
}

/// A parsed power-grid netlist.
#[pyclass(name = "Netlist", module = "emgrid_py")]
struct PyNetlist {
    doc: NetlistDoc,
}

#[pymethods]
impl PyNetlist {
    /// Parse netlist text; `params` supplies layer geometry and the
    /// coordinate unit.
    #[staticmethod]
    #[pyo3(signature = (text, params=None))]
    fn parse(text: &str, params: Option<&PyParams>) -> PyResult<Self> {
        let opts = params.map(|p| p.inner.parse_options()).unwrap_or_default();
        Ok(Self {
            doc: parse_netlist_with(text, &opts).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, params=None))]
    fn load(path: PathBuf, params: Option<&PyParams>) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(e.into()))?;
        Self::parse(&text, params)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.doc.nodes.len()
    }

    #[getter]
    fn resistor_count(&self) -> usize {
        self.doc.resistors.len()
    }

    #[getter]
    fn supply_voltage(&self) -> f64 {
        self.doc.supply_voltage()
    }

    /// Set one resistor's value in place.
    fn set_resistance(&mut self, name: &str, ohms: f64) -> PyResult<()> {
        self.doc.set_resistance(name, ohms).map_err(err)
    }

    /// Static IR solve: `(max_drop_fraction, [(node_name, voltage), ...])`.
    fn ir_drop(&self) -> PyResult<(f64, Vec<(String, f64)>)> {
        let sol = analyze(&self.doc).map_err(err)?;
        let volts = self
            .doc
            .nodes
            .iter()
            .zip(&sol.voltages)
            .map(|(n, &v)| (n.to_string(), v))
            .collect();
        Ok((sol.max_drop_fraction, volts))
    }

    fn to_text(&self) -> String {
        emit_netlist(&self.doc)
    }

    fn __repr__(&self) -> String {
        format!(
            "Netlist(nodes={}, resistors={}, current_sources={}, voltage_sources={})",
            self.doc.nodes.len(),
            self.doc.resistors.len(),
            self.doc.current_sources.len(),
            self.doc.voltage_sources.len()
        )
    }
}

/// Result of one coupled aging run.
#[pyclass(name = "RunReport", module = "emgrid_py", frozen)]
struct PyRunReport {
    inner: report::RunReport,
}

#[pymethods]
impl PyRunReport {
    /// Network time to failure in seconds, or `None` when censored.
    #[getter]
    fn ttf(&self) -> Option<f64> {
        self.inner.ttf
    }

    #[getter]
    fn censored(&self) -> bool {
        self.inner.censored
    }

    #[getter]
    fn initial_max_drop(&self) -> f64 {
        self.inner.initial_max_drop
    }

    #[getter]
    fn final_max_drop(&self) -> f64 {
        self.inner.final_max_drop
    }

    /// `(time, max_drop_fraction)` after every outer step, starting at 0.
    #[getter]
    fn drop_history(&self) -> Vec<(f64, f64)> {
        self.inner
            .drop_history
            .iter()
            .map(|r| (r.time, r.max_drop_fraction))
            .collect()
    }

    #[getter]
    fn tree_count(&self) -> usize {
        self.inner.tree_count
    }

    #[getter]
    fn cache_hit_rate(&self) -> f64 {
        self.inner.cache.hit_rate()
    }

    /// Report without wall-clock timings; identical across repeated runs.
    fn deterministic_json(&self) -> PyResult<String> {
        self.inner.deterministic_json().map_err(err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let text = serde_json::to_string(&self.inner).map_err(|e| err(e.into()))?;
        json_to_py(py, &text)
    }

    fn __repr__(&self) -> String {
        match self.inner.ttf {
            Some(t) => format!("RunReport(trees={}, ttf={t:e})", self.inner.tree_count),
            None => format!(
                "RunReport(trees={}, censored, final_max_drop={:.4})",
                self.inner.tree_count, self.inner.final_max_drop
            ),
        }
    }
}

/// Monte Carlo lifetime statistics.
#[pyclass(name = "McReport", module = "emgrid_py", frozen)]
struct PyMcReport {
    inner: emgrid::montecarlo::McReport,
}

#[pymethods]
impl PyMcReport {
    #[getter]
    fn failed(&self) -> usize {
        self.inner.failed
    }

    #[getter]
    fn censored(&self) -> usize {
        self.inner.censored
    }

    #[getter]
    fn errored(&self) -> usize {
        self.inner.errored
    }

    /// Uncensored failure times in sample order.
    #[getter]
    fn failure_times(&self) -> Vec<f64> {
        self.inner.failure_times()
    }

    /// `(mean, std, cov)` of the failure times, or `None` if none failed.
    #[getter]
    fn stats(&self) -> Option<(f64, f64, f64)> {
        self.inner.stats.as_ref().map(|s| (s.mean, s.std, s.cov))
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let text = serde_json::to_string(&self.inner).map_err(|e| err(e.into()))?;
        json_to_py(py, &text)
    }

    fn __repr__(&self) -> String {
        format!(
            "McReport(failed={}, censored={}, errored={})",
            self.inner.failed, self.inner.censored, self.inner.errored
        )
    }
}

fn sim_inputs(netlist: &PyNetlist, params: Option<&PyParams>, tmap: Option<PathBuf>) -> PyResult<SimInputs> {
    let params = params.map(|p| p.inner.clone()).unwrap_or_default();
    params.validate().map_err(err)?;
    let map = match tmap {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| err(e.into()))?;
            Some(ThermalMap::parse(&text).map_err(err)?)
        }
        None => None,
    };
    Ok(SimInputs::new(netlist.doc.clone(), params, map))
}

/// Run the coupled aging simulation. When `out_dir` is given, the report,
/// drop history and per-step CSV maps are written there.
#[pyfunction]
#[pyo3(signature = (netlist, params=None, tmap=None, out_dir=None, krylov=true))]
fn simulate(
    py: Python<'_>,
    netlist: &PyNetlist,
    params: Option<&PyParams>,
    tmap: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    krylov: bool,
) -> PyResult<PyRunReport> {
    let mut inputs = sim_inputs(netlist, params, tmap)?;
    inputs.params.krylov.enable &= krylov;
    let inner = py
        .detach(|| {
            let opts = match &out_dir {
                Some(dir) => OutputOptions::all(dir),
                None => OutputOptions::default(),
            };
            run_simulation(&inputs, &opts)
        })
        .map_err(err)?;
    Ok(PyRunReport { inner })
}

/// Steady-state immortality screening, as a dict.
#[pyfunction]
#[pyo3(signature = (netlist, params=None, tmap=None))]
fn screen(
    py: Python<'_>,
    netlist: &PyNetlist,
    params: Option<&PyParams>,
    tmap: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let inputs = sim_inputs(netlist, params, tmap)?;
    let r = py.detach(|| run_screening(&inputs)).map_err(err)?;
    let text = serde_json::to_string(&r).map_err(|e| err(e.into()))?;
    json_to_py(py, &text)
}

/// Monte Carlo over lognormal diffusivity and critical-stress factors.
/// Unset arguments fall back to the `mc` section of `params`.
#[pyfunction]
#[pyo3(signature = (netlist, params=None, samples=None, cov=None, seed=None, tmap=None))]
fn monte_carlo(
    py: Python<'_>,
    netlist: &PyNetlist,
    params: Option<&PyParams>,
    samples: Option<usize>,
    cov: Option<f64>,
    seed: Option<u64>,
    tmap: Option<PathBuf>,
) -> PyResult<PyMcReport> {
    let inputs = sim_inputs(netlist, params, tmap)?;
    let mut cfg = inputs.params.mc;
    cfg.samples = samples.unwrap_or(cfg.samples);
    cfg.cov = cov.unwrap_or(cfg.cov);
    cfg.seed = seed.unwrap_or(cfg.seed);
    let inner = py.detach(|| run_mc(&inputs, &cfg)).map_err(err)?;
    Ok(PyMcReport { inner })
}

fn design_pair(d: synth::Design) -> PyResult<(PyNetlist, PyParams)> {
    let doc = d.doc().map_err(err)?;
    Ok((PyNetlist { doc }, PyParams { inner: d.params }))
}

/// Two-layer stripe mesh with matching parameters.
#[pyfunction]
#[pyo3(signature = (stripes=100, load=2e-5, seed=1))]
fn synth_mesh(stripes: usize, load: f64, seed: u64) -> PyResult<(PyNetlist, PyParams)> {
    let spec = synth::MeshSpec {
        rows: stripes,
        cols: stripes,
        load,
        seed,
        ..Default::default()
    };
    design_pair(synth::Design {
        netlist: synth::stripe_mesh(&spec),
        params: synth::mesh_params(&spec),
    })
}

/// Small mesh whose failure time follows the material perturbations.
#[pyfunction]
fn synth_marginal() -> PyResult<(PyNetlist, PyParams)> {
    design_pair(synth::marginal_design())
}

/// Small mesh that fails in the first outer step for any perturbation.
#[pyfunction]
fn synth_deep_mortal() -> PyResult<(PyNetlist, PyParams)> {
    design_pair(synth::deep_mortal_design())
}

#[pymodule]
fn emgrid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EmgridError", m.py().get_type::<EmgridError>())?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyNetlist>()?;
    m.add_class::<PyRunReport>()?;
    m.add_class::<PyMcReport>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(screen, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(synth_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(synth_marginal, m)?)?;
    m.add_function(wrap_pyfunction!(synth_deep_mortal, m)?)?;
    Ok(())
}
