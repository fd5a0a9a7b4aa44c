//! Python bindings for the intersection simulator.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use intersim::action::ActionId;
use intersim::config::{parse_config, ExperimentConfig};
use intersim::engine::Engine;
use intersim::geometry::free_flow_exit_time as ff_exit;
use intersim::learner::read_qtable;
use intersim::report::{energy_table, run_experiment, Mode, Scenario};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn config_from(toml: Option<&str>) -> PyResult<ExperimentConfig> {
    match toml {
        Some(text) => parse_config(text).map_err(value_err),
        None => Ok(ExperimentConfig::default()),
    }
}

fn scenario_from(name: &str) -> PyResult<Scenario> {
    match name {
        "mixed50" => Ok(Scenario::Mixed50),
        "hdv-only" | "hdv_only" => Ok(Scenario::HdvOnly),
        other => Err(value_err(format!("unknown scenario `{other}`"))),
    }
}

/// `(accel, jerk, objective)` of the unconstrained minimum-energy control.
#[pyfunction]
fn analytic_min_energy(p0: f64, v0: f64, pf: f64, vf: f64, horizon: f64) -> PyResult<(f64, f64, f64)> {
    let s = intersim::planner::analytic_min_energy(p0, v0, pf, vf, horizon).map_err(value_err)?;
    Ok((s.accel, s.jerk, s.objective))
}

/// Free-flow time at which a vehicle entering at `t_entry` leaves the merging zone.
#[pyfunction]
#[pyo3(signature = (t_entry, config_toml=None))]
fn free_flow_exit_time(t_entry: f64, config_toml: Option<&str>) -> PyResult<f64> {
    Ok(ff_exit(t_entry, &config_from(config_toml)?.intersection))
}

/// Effective configuration as JSON.
#[pyfunction]
#[pyo3(signature = (config_toml=None))]
fn effective_config(config_toml: Option<&str>) -> PyResult<String> {
    serde_json::to_string(&config_from(config_toml)?).map_err(runtime_err)
}

/// Runs `eval` (or `train` with `train=True`) into `out_dir`; returns summary.json text.
#[pyfunction]
#[pyo3(signature = (out_dir, scenario="mixed50", seed=0, config_toml=None, qtable_path=None, train=false))]
fn run(
    py: Python<'_>,
    out_dir: PathBuf,
    scenario: &str,
    seed: u64,
    config_toml: Option<&str>,
    qtable_path: Option<PathBuf>,
    train: bool,
) -> PyResult<String> {
    let mut cfg = config_from(config_toml)?;
    cfg.sim.seed = seed;
    let scenario = scenario_from(scenario)?;
    let q = match qtable_path {
        Some(p) => Some(read_qtable(std::fs::File::open(&p).map_err(value_err)?).map_err(value_err)?),
        None => None,
    };
    let mode = if train { Mode::Train } else { Mode::Eval };
    let out = py
        .detach(|| run_experiment(&cfg, scenario, mode, &out_dir, q))
        .map_err(runtime_err)?;
    serde_json::to_string(&out.summary).map_err(runtime_err)
}

/// Block-by-block engine driven from Python.
#[pyclass(unsendable)]
struct Simulation {
    engine: Option<Engine>,
    scenario: Scenario,
}

impl Simulation {
    fn engine(&mut self) -> PyResult<&mut Engine> {
        self.engine.as_mut().ok_or_else(|| runtime_err("simulation already finished"))
    }
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (seed=0, scenario="mixed50", horizon_s=None, config_toml=None))]
    fn new(seed: u64, scenario: &str, horizon_s: Option<f64>, config_toml: Option<&str>) -> PyResult<Self> {
        let mut cfg = config_from(config_toml)?;
        if let Some(h) = horizon_s {
            cfg.sim.horizon_s = h;
        }
        let scenario = scenario_from(scenario)?;
        let engine = cfg.engine(seed, scenario.p_av()).map_err(value_err)?;
        Ok(Self {
            engine: Some(engine),
            scenario,
        })
    }

    #[getter]
    fn clock(&mut self) -> PyResult<f64> {
        Ok(self.engine()?.clock())
    }

    #[getter]
    fn done(&mut self) -> PyResult<bool> {
        Ok(self.engine()?.is_done())
    }

    /// Control-zone counts per lane.
    fn observe(&mut self) -> PyResult<Vec<u32>> {
        Ok(self.engine()?.observe_state())
    }

    fn pending(&mut self) -> PyResult<Vec<String>> {
        Ok(self.engine()?.pending_actions().iter().map(|a| a.to_string()).collect())
    }

    /// Decides `action` ("open13", "open24", "all_red") and runs one block.
    /// Returns `(queues_before, queues_after, reward)`.
    fn step_block(&mut self, action: &str) -> PyResult<(Vec<u32>, Vec<u32>, f64)> {
        let a: ActionId = action.parse().map_err(value_err)?;
        let out = self.engine()?.run_block(a).map_err(runtime_err)?;
        Ok((out.x_before, out.x_after, out.reward))
    }

    /// Ends the run; returns `(exited, in_system, red_entries, [(group, count, mean), ...])`.
    fn finish(&mut self) -> PyResult<(u64, u64, usize, Vec<(String, usize, f64)>)> {
        let engine = self.engine.take().ok_or_else(|| runtime_err("simulation already finished"))?;
        let log = engine.finish();
        let energy = energy_table(&log, self.scenario)
            .into_iter()
            .map(|s| (s.group.as_str().to_string(), s.count, s.mean))
            .collect();
        Ok((log.exited(), log.in_system, log.red_entries.len(), energy))
    }
}

#[pymodule]
fn pyintersim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(analytic_min_energy, m)?)?;
    m.add_function(wrap_pyfunction!(free_flow_exit_time, m)?)?;
    m.add_function(wrap_pyfunction!(effective_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<Simulation>()?;
    Ok(())
}
