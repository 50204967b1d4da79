//! Python bindings: run pipeline commands and the step-response simulator
//! from Python.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use metaexo_core::autodiff::Tensor;
use metaexo_core::cli::{run_with_env, Cli, Command, ENV_PREFIX};
use metaexo_core::simcontrol::{
    lyapunov_report, simulate_tracking, Controller, ControllerGains, GravityCompensator, LyapunovOptions, PlantModel,
    SimState,
};
use metaexo_core::tasknet::loss_kl;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn core_err(e: metaexo_core::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_command(name: &str) -> PyResult<Command> {
    Ok(match name {
        "retarget" => Command::Retarget,
        "synth" => Command::Synth,
        "train" => Command::Train,
        "adapt" => Command::Adapt,
        "simulate" => Command::Simulate,
        "eval" => Command::Eval,
        "export-latents" | "export_latents" => Command::ExportLatents,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    })
}

/// Runs one pipeline command, as `metaexo [--config C] [--seed S] --out O <command>`.
///
/// `env` maps config keys to override values, with the same parsing as the
/// `METAEXO_<KEY>` variables; the process environment is not consulted.
#[pyfunction]
#[pyo3(signature = (command, out, config=None, seed=None, env=None))]
fn run(
    py: Python<'_>,
    command: &str,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    env: Option<BTreeMap<String, String>>,
) -> PyResult<()> {
    let cli = Cli {
        config,
        seed,
        out,
        command: parse_command(command)?,
    };
    let env: Vec<(String, String)> = env
        .unwrap_or_default()
        .into_iter()
        .map(|(k, v)| (format!("{ENV_PREFIX}{}", k.to_ascii_uppercase()), v))
        .collect();
    py.detach(|| run_with_env(&cli, env)).map_err(core_err)
}

/// Step from rest at 0 to `target` under PD plus exact gravity compensation
/// on the default plant without link mass. Returns the trace columns and
/// Lyapunov summary numbers.
#[pyfunction]
#[pyo3(signature = (kp, kd, target=0.5, seconds=5.0, dt=1e-3))]
fn simulate_step(kp: f64, kd: f64, target: f64, seconds: f64, dt: f64) -> PyResult<BTreeMap<String, Vec<f64>>> {
    if !(seconds > 0.0 && dt > 0.0) {
        return Err(PyValueError::new_err("seconds and dt must be positive"));
    }
    let plant = PlantModel {
        m_link: 0.0,
        ..PlantModel::default()
    };
    let comp = GravityCompensator::for_load(&plant).map_err(core_err)?;
    let ctl = Controller::new(ControllerGains::new(kp, kd).map_err(core_err)?, comp);
    let n = (seconds / dt).round() as usize + 1;
    let mut reference = vec![target; n];
    reference[0] = 0.0;
    let trace = simulate_tracking(&plant, &ctl, &reference, SimState::at_rest(0.0), dt).map_err(core_err)?;
    let report = lyapunov_report(&trace, &plant, &ctl, &LyapunovOptions::default());
    let mut out = BTreeMap::new();
    out.insert("t".to_string(), trace.t.clone());
    out.insert("q_r".to_string(), trace.q_r.clone());
    out.insert("q_d".to_string(), trace.q_d.clone());
    out.insert("tau".to_string(), trace.tau.clone());
    out.insert("e".to_string(), trace.e.clone());
    out.insert("V".to_string(), trace.v.clone());
    out.insert(
        "fraction_nonincreasing".to_string(),
        vec![report.fraction_nonincreasing],
    );
    out.insert("max_skew_residual".to_string(), vec![report.max_skew_residual]);
    Ok(out)
}

/// Closed-form `KL(N(mu, diag sigma^2) || N(0, I))`.
#[pyfunction]
fn kl_divergence(mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<f64> {
    if mu.len() != sigma.len() || mu.is_empty() {
        return Err(PyValueError::new_err(
            "mu and sigma must be non-empty and of equal length",
        ));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(PyValueError::new_err("sigma must be positive"));
    }
    Ok(loss_kl(&Tensor::row(&mu), &Tensor::row(&sigma))
        .map_err(core_err)?
        .item())
}

#[pymodule]
fn metaexo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_step, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    Ok(())
}
