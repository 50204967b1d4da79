//! Single-joint exoskeleton plant, PD control with gravity compensation, and
//! numerical checks of the closed loop's Lyapunov structure.

mod lyapunov;
mod trace;

pub use lyapunov::{check_lyapunov, lyapunov_report, LyapunovOptions, LyapunovReport};
pub use trace::{resample, SimTrace};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const G_ACC: f64 = 9.81;

/// Joint speed beyond which a simulation is treated as diverged (rad/s).
pub const MAX_VELOCITY: f64 = 50.0;

fn d_a0() -> f64 {
    0.06
}
fn d_m_load() -> f64 {
    1.0
}
fn d_l_m() -> f64 {
    0.3
}
fn d_m_link() -> f64 {
    0.4
}
fn d_l_c() -> f64 {
    0.15
}
fn d_g() -> f64 {
    G_ACC
}

/// `m(q) qdd + c(q, qd) qd + g(q) = tau` with `m(q) = a0 + a1 sin q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantModel {
    /// kg m^2
    #[serde(default = "d_a0")]
    pub a0: f64,
    /// kg m^2
    #[serde(default)]
    pub a1: f64,
    /// Hand-held load (kg) at moment arm `l_m` (m).
    #[serde(default = "d_m_load")]
    pub m_load: f64,
    #[serde(default = "d_l_m")]
    pub l_m: f64,
    /// Forearm and cuff mass (kg) with center of mass at `l_c` (m).
    #[serde(default = "d_m_link")]
    pub m_link: f64,
    #[serde(default = "d_l_c")]
    pub l_c: f64,
    #[serde(default = "d_g")]
    pub g_acc: f64,
}

impl Default for PlantModel {
    fn default() -> Self {
        Self {
            a0: d_a0(),
            a1: 0.0,
            m_load: d_m_load(),
            l_m: d_l_m(),
            m_link: d_m_link(),
            l_c: d_l_c(),
            g_acc: d_g(),
        }
    }
}

impl PlantModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.a0,
            self.a1,
            self.m_load,
            self.l_m,
            self.m_link,
            self.l_c,
            self.g_acc,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("plant parameters must be finite".into()));
        }
        if !(self.a0 > self.a1.abs()) {
            return Err(Error::NonPositiveInertia(self.a0 - self.a1.abs()));
        }
        if self.m_load < 0.0 || self.m_link < 0.0 || self.l_m < 0.0 || self.l_c < 0.0 {
            return Err(Error::Config("plant masses and lengths must be non-negative".into()));
        }
        Ok(())
    }

    pub fn inertia(&self, q: f64) -> f64 {
        self.a0 + self.a1 * q.sin()
    }

    /// `dm/dq`
    pub fn inertia_slope(&self, q: f64) -> f64 {
        self.a1 * q.cos()
    }

    /// `c(q, qd) = m'(q) qd / 2`.
    pub fn coriolis(&self, q: f64, qd: f64) -> f64 {
        0.5 * self.inertia_slope(q) * qd
    }

    /// Time derivative of the inertia along the motion.
    pub fn inertia_rate(&self, q: f64, qd: f64) -> f64 {
        self.inertia_slope(q) * qd
    }

    /// `mdot - 2 c`.
    pub fn skew_residual(&self, q: f64, qd: f64) -> f64 {
        self.inertia_rate(q, qd) - 2.0 * self.coriolis(q, qd)
    }

    pub fn gravity(&self, q: f64) -> f64 {
        (self.m_load * self.l_m + self.m_link * self.l_c) * self.g_acc * q.sin()
    }

    /// Potential energy with zero at the hanging position.
    pub fn potential(&self, q: f64) -> f64 {
        (self.m_load * self.l_m + self.m_link * self.l_c) * self.g_acc * (1.0 - q.cos())
    }
}

/// `(qd, qdd)` of the plant under torque `tau`.
pub fn dynamics_rhs(plant: &PlantModel, q: f64, qd: f64, tau: f64) -> Result<(f64, f64)> {
    let m = plant.inertia(q);
    if !(m > 0.0) {
        return Err(Error::NonPositiveInertia(m));
    }
    Ok((qd, (tau - plant.coriolis(q, qd) * qd - plant.gravity(q)) / m))
}

/// Load-only gravity model `g_hat(q) = m_hat g l_m sin q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GravityCompensator {
    pub m_hat: f64,
    pub l_m: f64,
    pub g_acc: f64,
}

impl GravityCompensator {
    pub fn new(m_hat: f64, l_m: f64) -> Result<Self> {
        if !(m_hat >= 0.0 && m_hat.is_finite() && l_m > 0.0 && l_m.is_finite()) {
            return Err(Error::Config(format!(
                "compensator needs m_hat >= 0 and l_m > 0, got {m_hat}, {l_m}"
            )));
        }
        Ok(Self {
            m_hat,
            l_m,
            g_acc: G_ACC,
        })
    }

    /// Estimate matching the plant's load exactly (link term still uncompensated).
    pub fn for_load(plant: &PlantModel) -> Result<Self> {
        Self::new(plant.m_load, plant.l_m)
    }

    pub fn torque(&self, q: f64) -> f64 {
        self.m_hat * self.g_acc * self.l_m * q.sin()
    }

    /// `g(q) - g_hat(q)`.
    pub fn mismatch(&self, plant: &PlantModel, q: f64) -> f64 {
        plant.gravity(q) - self.torque(q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// N m / rad
    pub kp: f64,
    /// N m s / rad
    pub kd: f64,
}

impl ControllerGains {
    pub fn new(kp: f64, kd: f64) -> Result<Self> {
        if !(kp > 0.0 && kd > 0.0 && kp.is_finite() && kd.is_finite()) {
            return Err(Error::Config(format!(
                "gains must be positive, got kp = {kp}, kd = {kd}"
            )));
        }
        Ok(Self { kp, kd })
    }
}

/// How the error rate entering the damping term is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// `edot = -qd_r`: the damping acts on the joint speed only.
    #[default]
    Literal,
    /// `edot = qd_d - qd_r`.
    ReferenceRate,
}

impl DerivativeMode {
    pub fn error_rate(self, qd_r: f64, qd_d: f64) -> f64 {
        match self {
            DerivativeMode::Literal => -qd_r,
            DerivativeMode::ReferenceRate => qd_d - qd_r,
        }
    }
}

/// Default actuator torque limit (N m).
pub const TAU_MAX: f64 = 9.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Controller {
    pub gains: ControllerGains,
    pub comp: GravityCompensator,
    pub tau_max: f64,
    pub mode: DerivativeMode,
}

impl Controller {
    pub fn new(gains: ControllerGains, comp: GravityCompensator) -> Self {
        Self {
            gains,
            comp,
            tau_max: TAU_MAX,
            mode: DerivativeMode::Literal,
        }
    }

    /// Unsaturated and saturated command.
    pub fn command(&self, q_r: f64, qd_r: f64, q_d: f64, qd_d: f64) -> (f64, f64) {
        let e = q_d - q_r;
        let ed = self.mode.error_rate(qd_r, qd_d);
        let raw = self.comp.torque(q_r) + self.gains.kp * e + self.gains.kd * ed;
        (raw, raw.clamp(-self.tau_max, self.tau_max))
    }

    pub fn torque(&self, q_r: f64, qd_r: f64, q_d: f64, qd_d: f64) -> f64 {
        self.command(q_r, qd_r, q_d, qd_d).1
    }
}

/// `g_hat(q_r) + kp (q_d - q_r) - kd qd_r`, clamped to `+-tau_max`.
pub fn pd_gravity_torque(
    gains: &ControllerGains,
    comp: &GravityCompensator,
    q_r: f64,
    qd_r: f64,
    q_d: f64,
    tau_max: f64,
) -> f64 {
    let raw = comp.torque(q_r) + gains.kp * (q_d - q_r) - gains.kd * qd_r;
    raw.clamp(-tau_max, tau_max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub q: f64,
    pub qd: f64,
}

impl SimState {
    pub fn at_rest(q: f64) -> Self {
        Self { t: 0.0, q, qd: 0.0 }
    }
}

/// Classical RK4 step under a constant torque.
pub fn integrate_rk4(plant: &PlantModel, state: SimState, tau: f64, dt: f64) -> Result<SimState> {
    if !(dt > 0.0) {
        return Err(Error::BadParams(format!("dt must be positive, got {dt}")));
    }
    let f = |q: f64, qd: f64| dynamics_rhs(plant, q, qd, tau);
    let (k1q, k1v) = f(state.q, state.qd)?;
    let (k2q, k2v) = f(state.q + 0.5 * dt * k1q, state.qd + 0.5 * dt * k1v)?;
    let (k3q, k3v) = f(state.q + 0.5 * dt * k2q, state.qd + 0.5 * dt * k2v)?;
    let (k4q, k4v) = f(state.q + dt * k3q, state.qd + dt * k3v)?;
    let next = SimState {
        t: state.t + dt,
        q: state.q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
        qd: state.qd + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    };
    if !next.qd.is_finite() || next.qd.abs() > MAX_VELOCITY {
        return Err(Error::Divergence {
            t: next.t,
            velocity: next.qd,
        });
    }
    Ok(next)
}

/// One closed-loop step: torque from the state at the start of the step,
/// held over the step.
pub fn step_rk4(
    plant: &PlantModel,
    controller: &Controller,
    state: SimState,
    q_d: f64,
    qd_d: f64,
    dt: f64,
) -> Result<SimState> {
    let tau = controller.torque(state.q, state.qd, q_d, qd_d);
    integrate_rk4(plant, state, tau, dt)
}

/// Closed-loop rollout along `reference` sampled every `dt`.
///
/// Sample `k` of the trace holds the state at `t_k`, the reference, the
/// applied torque over `[t_k, t_k + dt)` and `V = m(q) edot^2 / 2 + kp e^2 / 2`.
pub fn simulate_tracking(
    plant: &PlantModel,
    controller: &Controller,
    reference: &[f64],
    init: SimState,
    dt: f64,
) -> Result<SimTrace> {
    plant.validate()?;
    if reference.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let n = reference.len();
    let ref_rate = |k: usize| -> f64 {
        if n < 2 {
            0.0
        } else if k == 0 {
            (reference[1] - reference[0]) / dt
        } else if k == n - 1 {
            (reference[n - 1] - reference[n - 2]) / dt
        } else {
            (reference[k + 1] - reference[k - 1]) / (2.0 * dt)
        }
    };
    let mut trace = SimTrace::with_capacity(dt, n);
    let mut state = init;
    for (k, &q_d) in reference.iter().enumerate() {
        let qd_d = ref_rate(k);
        let (raw, tau) = controller.command(state.q, state.qd, q_d, qd_d);
        let e = q_d - state.q;
        let ed = controller.mode.error_rate(state.qd, qd_d);
        let v = 0.5 * plant.inertia(state.q) * ed * ed + 0.5 * controller.gains.kp * e * e;
        trace.push(state.t, state.q, state.qd, q_d, tau, e, v, raw != tau);
        if k + 1 < n {
            state = integrate_rk4(plant, state, tau, dt)?;
        }
    }
    Ok(trace)
}
