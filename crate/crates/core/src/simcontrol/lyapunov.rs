use serde::{Deserialize, Serialize};

use super::{Controller, PlantModel, SimTrace};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOptions {
    /// `Vdot <= vdot_tol` counts as non-increasing.
    pub vdot_tol: f64,
    /// Allowed `|Vdot + kd edot^2|`.
    pub match_tol: f64,
    /// Allowed `|mdot - 2c|`.
    pub skew_tol: f64,
    /// `|e|` and `|edot|` below which `V = 0` is acceptable.
    pub zero_tol: f64,
    /// Gravity mismatch below which the loop counts as exactly compensated.
    pub gravity_tol: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            vdot_tol: 1e-9,
            match_tol: 1e-6,
            skew_tol: 1e-12,
            zero_tol: 1e-6,
            gravity_tol: 1e-12,
        }
    }
}

/// Numerical evidence about `V = m edot^2 / 2 + kp e^2 / 2` along a trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub samples: usize,
    pub v_min: f64,
    pub max_skew_residual: f64,
    pub max_gravity_mismatch: f64,
    /// Interior samples on constant, unsaturated reference segments.
    pub vdot_samples: usize,
    pub fraction_nonincreasing: f64,
    pub max_vdot: f64,
    /// Max `|Vdot + kd edot^2|` over the checked samples.
    pub max_match_residual: f64,
    /// Share of the checked samples with `|Vdot + kd edot^2| <= match_tol`.
    pub fraction_matched: f64,
    /// First sample breaking a check, with the reason.
    pub first_violation: Option<(usize, String)>,
}

impl LyapunovReport {
    pub fn into_result(self) -> Result<Self> {
        match &self.first_violation {
            Some((sample, reason)) => Err(Error::LyapunovViolation {
                sample: *sample,
                reason: reason.clone(),
            }),
            None => Ok(self),
        }
    }
}

/// Checks positivity of `V`, the skew-symmetry identity at every sample and,
/// where the reference is constant, the torque unsaturated and gravity
/// exactly compensated, that the central-difference `Vdot` equals
/// `-kd edot^2`.
///
/// The report is always computed; the first failing sample, if any, is
/// recorded in [`LyapunovReport::first_violation`].
pub fn lyapunov_report(
    trace: &SimTrace,
    plant: &PlantModel,
    controller: &Controller,
    opts: &LyapunovOptions,
) -> LyapunovReport {
    let n = trace.len();
    let mut r = LyapunovReport {
        samples: n,
        v_min: f64::INFINITY,
        ..Default::default()
    };
    let violation = |k: usize, reason: String, r: &mut LyapunovReport| {
        if r.first_violation.is_none() {
            r.first_violation = Some((k, reason));
        }
    };
    for k in 0..n {
        let (q, qd, v, e) = (trace.q_r[k], trace.qd_r[k], trace.v[k], trace.e[k]);
        r.v_min = r.v_min.min(v);
        if v < 0.0 {
            violation(k, format!("V = {v:e} is negative"), &mut r);
        }
        if v == 0.0 && (e.abs() > opts.zero_tol || qd.abs() > opts.zero_tol) {
            violation(
                k,
                format!("V = 0 away from the origin (e = {e:e}, qd = {qd:e})"),
                &mut r,
            );
        }
        let skew = plant.skew_residual(q, qd).abs();
        r.max_skew_residual = r.max_skew_residual.max(skew);
        if skew >= opts.skew_tol {
            violation(k, format!("|mdot - 2c| = {skew:e}"), &mut r);
        }
        r.max_gravity_mismatch = r.max_gravity_mismatch.max(controller.comp.mismatch(plant, q).abs());
    }
    if r.max_gravity_mismatch > opts.gravity_tol {
        return r;
    }
    let kd = controller.gains.kd;
    let mut nonincreasing = 0usize;
    let mut matched = 0usize;
    r.max_vdot = f64::NEG_INFINITY;
    for k in 1..n.saturating_sub(1) {
        let constant = trace.q_d[k - 1] == trace.q_d[k] && trace.q_d[k] == trace.q_d[k + 1];
        if !constant || trace.saturated[k - 1] || trace.saturated[k] {
            continue;
        }
        let vdot = (trace.v[k + 1] - trace.v[k - 1]) / (2.0 * trace.dt);
        let ed = controller.mode.error_rate(trace.qd_r[k], 0.0);
        let residual = (vdot + kd * ed * ed).abs();
        r.vdot_samples += 1;
        r.max_vdot = r.max_vdot.max(vdot);
        r.max_match_residual = r.max_match_residual.max(residual);
        if vdot <= opts.vdot_tol {
            nonincreasing += 1;
        }
        if residual <= opts.match_tol {
            matched += 1;
        } else {
            violation(k, format!("|Vdot + kd edot^2| = {residual:e}"), &mut r);
        }
    }
    if r.vdot_samples > 0 {
        r.fraction_nonincreasing = nonincreasing as f64 / r.vdot_samples as f64;
        r.fraction_matched = matched as f64 / r.vdot_samples as f64;
    }
    r
}

/// [`lyapunov_report`] that fails with the first offending sample.
pub fn check_lyapunov(
    trace: &SimTrace,
    plant: &PlantModel,
    controller: &Controller,
    opts: &LyapunovOptions,
) -> Result<LyapunovReport> {
    lyapunov_report(trace, plant, controller, opts).into_result()
}
