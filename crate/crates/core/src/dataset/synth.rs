use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{extract_trajectory, TaskDataset, ELBOW_LIMITS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Minimum-jerk point-to-point flexion.
    Reach,
    /// Rectified-sinusoid flexion cycles.
    LiftCycle,
    /// Minimum-jerk segments through waypoints with holds in between.
    Gesture,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Reach => "reach",
            Family::LiftCycle => "lift_cycle",
            Family::Gesture => "gesture",
        })
    }
}

fn d_base() -> f64 {
    0.2
}
fn d_amplitude() -> f64 {
    1.0
}
fn d_duration() -> f64 {
    2.0
}
fn d_cycles() -> usize {
    2
}
fn d_waypoints() -> Vec<f64> {
    vec![1.0, 0.4, 0.8, 0.0]
}
fn d_hold() -> f64 {
    0.25
}
fn d_dt() -> f64 {
    0.01
}
fn d_noise() -> f64 {
    0.005
}
fn d_amp_jitter() -> f64 {
    0.10
}
fn d_dur_jitter() -> f64 {
    0.15
}
fn d_phase_jitter() -> f64 {
    0.10
}
fn d_subjects() -> usize {
    5
}

/// Generator settings for one synthetic task. Angles in rad, times in s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    pub task_id: String,
    pub family: Family,
    /// Resting flexion the motion starts from.
    #[serde(default = "d_base")]
    pub base: f64,
    /// Flexion excursion above `base`.
    #[serde(default = "d_amplitude")]
    pub amplitude: f64,
    /// Nominal duration of the movement, excluding the leading rest.
    #[serde(default = "d_duration")]
    pub duration: f64,
    /// Number of flexion peaks (`lift_cycle`).
    #[serde(default = "d_cycles")]
    pub cycles: usize,
    /// Gesture targets as fractions of `amplitude` above `base`.
    #[serde(default = "d_waypoints")]
    pub waypoints: Vec<f64>,
    /// Share of each gesture segment spent holding still.
    #[serde(default = "d_hold")]
    pub hold_fraction: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Standard deviation of additive angle noise.
    #[serde(default = "d_noise")]
    pub noise_sigma: f64,
    /// Relative amplitude jitter bound.
    #[serde(default = "d_amp_jitter")]
    pub amplitude_jitter: f64,
    /// Relative duration jitter bound.
    #[serde(default = "d_dur_jitter")]
    pub duration_jitter: f64,
    /// Upper bound of the leading rest, as a fraction of the duration.
    #[serde(default = "d_phase_jitter")]
    pub phase_jitter: f64,
    /// Trajectory `i` is attributed to subject `i % n_subjects`.
    #[serde(default = "d_subjects")]
    pub n_subjects: usize,
}

impl FamilyParams {
    pub fn new(task_id: impl Into<String>, family: Family) -> Self {
        Self {
            task_id: task_id.into(),
            family,
            base: d_base(),
            amplitude: d_amplitude(),
            duration: d_duration(),
            cycles: d_cycles(),
            waypoints: d_waypoints(),
            hold_fraction: d_hold(),
            dt: d_dt(),
            noise_sigma: d_noise(),
            amplitude_jitter: d_amp_jitter(),
            duration_jitter: d_dur_jitter(),
            phase_jitter: d_phase_jitter(),
            n_subjects: d_subjects(),
        }
    }

    /// Same settings without jitter or noise.
    pub fn nominal(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.amplitude_jitter = 0.0;
        self.duration_jitter = 0.0;
        self.phase_jitter = 0.0;
        self
    }

    /// Fractions of the amplitude the shape visits.
    fn shape_extremes(&self) -> (f64, f64) {
        match self.family {
            Family::Reach | Family::LiftCycle => (0.0, 1.0),
            Family::Gesture => self
                .waypoints
                .iter()
                .fold((0.0f64, 0.0f64), |(lo, hi), &w| (lo.min(w), hi.max(w))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadParams(format!("task {}: {m}", self.task_id)));
        let finite = [
            self.base,
            self.amplitude,
            self.duration,
            self.hold_fraction,
            self.dt,
            self.noise_sigma,
            self.amplitude_jitter,
            self.duration_jitter,
            self.phase_jitter,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.waypoints.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if self.dt <= 0.0 || self.duration <= 0.0 {
            return bad(format!(
                "dt ({}) and duration ({}) must be positive",
                self.dt, self.duration
            ));
        }
        if self.noise_sigma < 0.0 {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) || !(0.0..1.0).contains(&self.duration_jitter) {
            return bad("jitter bounds must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.phase_jitter) || !(0.0..1.0).contains(&self.hold_fraction) {
            return bad("phase_jitter must lie in [0, 1] and hold_fraction in [0, 1)".into());
        }
        if self.n_subjects == 0 {
            return bad("n_subjects must be at least 1".into());
        }
        match self.family {
            Family::LiftCycle if self.cycles == 0 => return bad("cycles must be at least 1".into()),
            Family::Gesture if self.waypoints.is_empty() => return bad("gesture needs waypoints".into()),
            _ => {}
        }
        let (lo, hi) = self.shape_extremes();
        let (lim_lo, lim_hi) = ELBOW_LIMITS;
        let reach = [lo, hi].map(|w| self.amplitude * w);
        let span = [
            self.base,
            self.base + reach[0] * (1.0 + self.amplitude_jitter),
            self.base + reach[1] * (1.0 + self.amplitude_jitter),
            self.base + reach[0] * (1.0 - self.amplitude_jitter),
            self.base + reach[1] * (1.0 - self.amplitude_jitter),
        ];
        if let Some(a) = span.iter().find(|&&a| a < lim_lo || a > lim_hi) {
            return bad(format!(
                "amplitude {} from base {} reaches {a:.4} rad, outside elbow limits [{lim_lo}, {lim_hi}]",
                self.amplitude, self.base
            ));
        }
        Ok(())
    }
}

/// Individual bias shared by all trajectories attributed to one subject.
/// Biases lie in `[-1, 1]` (phase in `[0, 1]`) and scale the jitter bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub id: String,
    pub amplitude_bias: f64,
    pub duration_bias: f64,
    pub phase_bias: f64,
}

/// Subject profiles are fixed per subject index so the same person shows
/// the same style across tasks.
const SUBJECT_SEED: u64 = 0x5eb1_ec75;

impl SubjectProfile {
    pub fn generate(n: usize) -> Vec<SubjectProfile> {
        let mut rng = ChaCha8Rng::seed_from_u64(SUBJECT_SEED);
        (0..n)
            .map(|k| SubjectProfile {
                id: format!("s{k}"),
                amplitude_bias: rng.random_range(-1.0..=1.0),
                duration_bias: rng.random_range(-1.0..=1.0),
                phase_bias: rng.random_range(0.0..=1.0),
            })
            .collect()
    }
}

pub(crate) fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// Shape in units of the amplitude at normalized movement time `tau`.
fn shape(p: &FamilyParams, tau: f64) -> f64 {
    match p.family {
        Family::Reach => min_jerk(tau),
        Family::LiftCycle => (std::f64::consts::PI * p.cycles as f64 * tau.clamp(0.0, 1.0))
            .sin()
            .abs(),
        Family::Gesture => {
            let n = p.waypoints.len();
            let seg = (tau.clamp(0.0, 1.0) * n as f64).min(n as f64 - 1e-12);
            let i = seg.floor() as usize;
            let local = seg - i as f64;
            let from = if i == 0 { 0.0 } else { p.waypoints[i - 1] };
            let to = p.waypoints[i];
            let moving = 1.0 - p.hold_fraction;
            from + (to - from) * min_jerk(local / moving)
        }
    }
}

/// Synthetic trajectories of one task, jittered per subject and execution.
///
/// Trajectory `i` draws from its own stream `(seed, i)`, so the dataset is
/// reproducible and independent of generation order.
pub fn synth_task_family(params: &FamilyParams, n_traj: usize, seed: u64) -> Result<TaskDataset> {
    if n_traj < 2 {
        return Err(Error::TooFewTrajectories(n_traj));
    }
    params.validate()?;
    let subjects = SubjectProfile::generate(params.n_subjects);
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::BadParams(e.to_string()))?;
    let (lo, hi) = ELBOW_LIMITS;
    let trajectories = (0..n_traj)
        .map(|i| {
            let subject = &subjects[i % subjects.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut draw = |bias: f64, lo: f64| 0.5 * bias + 0.5 * rng.random_range(lo..=1.0);
            let amp = params.amplitude * (1.0 + params.amplitude_jitter * draw(subject.amplitude_bias, -1.0));
            let dur = params.duration * (1.0 + params.duration_jitter * draw(subject.duration_bias, -1.0));
            let rest = params.duration * params.phase_jitter * draw(subject.phase_bias, 0.0);
            let total = dur + rest;
            let len = (total / params.dt).round() as usize + 1;
            let angles: Vec<f64> = (0..len)
                .map(|k| {
                    let t = k as f64 * params.dt;
                    let tau = ((t - rest) / dur).clamp(0.0, 1.0);
                    let clean = params.base + amp * shape(params, tau);
                    let n = if params.noise_sigma > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    (clean + n).clamp(lo, hi)
                })
                .collect();
            Ok(extract_trajectory(&angles, params.dt)?.with_ids(params.task_id.clone(), subject.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    TaskDataset::new(params.task_id.clone(), trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_jerk_boundaries() {
        assert_eq!(min_jerk(0.0), 0.0);
        assert!((min_jerk(1.0) - 1.0).abs() < 1e-15);
        assert!((min_jerk(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reach_example() {
        let mut p = FamilyParams::new("reach", Family::Reach).nominal();
        p.base = 0.0;
        p.amplitude = 1.0;
        p.duration = 2.0;
        let task = synth_task_family(&p, 2, 3).unwrap();
        let t = &task.trajectories[0];
        assert_eq!(t.len(), 201);
        assert_eq!(t.samples[0].angle, 0.0);
        assert!((t.samples[200].angle - 1.0).abs() < 1e-12);
        // one-sided differences at the ends see the flat tails of the polynomial
        assert!(t.samples[0].velocity.abs() < 1e-3);
        assert!(t.samples[200].velocity.abs() < 1e-3);
        let peak = t.velocities().into_iter().fold(0.0, f64::max);
        // closed form peak 15/8 * A / T
        assert!((peak - 15.0 / 16.0).abs() < 1e-3, "{peak}");
    }

    fn local_maxima(a: &[f64]) -> Vec<f64> {
        a.windows(3)
            .filter(|w| w[1] > w[0] && w[1] >= w[2])
            .map(|w| w[1])
            .collect()
    }

    #[test]
    fn lift_cycle_peaks() {
        let mut p = FamilyParams::new("lift", Family::LiftCycle);
        p.noise_sigma = 0.0;
        p.base = 0.0;
        p.amplitude = 1.2;
        p.cycles = 2;
        let task = synth_task_family(&p, 6, 11).unwrap();
        for t in &task.trajectories {
            let peaks = local_maxima(&t.angles());
            assert_eq!(peaks.len(), 2, "{peaks:?}");
            for pk in peaks {
                assert!((pk - 1.2).abs() <= 0.12 + 1e-3, "{pk}");
            }
        }
    }

    #[test]
    fn gesture_visits_waypoints() {
        let mut p = FamilyParams::new("g", Family::Gesture).nominal();
        p.waypoints = vec![1.0, 0.5];
        let t = &synth_task_family(&p, 2, 0).unwrap().trajectories[0];
        let a = t.angles();
        let mid = (a.len() - 1) / 2;
        assert!((a[mid] - (p.base + p.amplitude)).abs() < 1e-9);
        assert!((a[a.len() - 1] - (p.base + 0.5 * p.amplitude)).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_in_limits() {
        for family in [Family::Reach, Family::LiftCycle, Family::Gesture] {
            let mut p = FamilyParams::new("x", family);
            p.base = 0.0;
            p.amplitude = 2.3;
            p.noise_sigma = 0.05;
            let a = synth_task_family(&p, 8, 42).unwrap();
            assert_eq!(a, synth_task_family(&p, 8, 42).unwrap());
            assert_ne!(a, synth_task_family(&p, 8, 43).unwrap());
            for t in &a.trajectories {
                assert!(t.angles().iter().all(|&q| (0.0..=2.6).contains(&q)));
                let q = t.angles();
                for k in 1..q.len() - 1 {
                    let fd = (q[k + 1] - q[k - 1]) / (2.0 * t.dt);
                    assert!((fd - t.samples[k].velocity).abs() <= 2.0 * p.noise_sigma / t.dt);
                }
            }
        }
    }

    #[test]
    fn subjects_cycle() {
        let p = FamilyParams::new("x", Family::Reach);
        let task = synth_task_family(&p, 7, 1).unwrap();
        let ids: Vec<_> = task.trajectories.iter().map(|t| t.subject_id.as_str()).collect();
        assert_eq!(ids, ["s0", "s1", "s2", "s3", "s4", "s0", "s1"]);
    }

    #[test]
    fn rejects_out_of_limits() {
        let mut p = FamilyParams::new("x", Family::Reach);
        p.amplitude = 2.5;
        assert!(matches!(synth_task_family(&p, 3, 0), Err(Error::BadParams(_))));
        p.amplitude = -0.5;
        assert!(matches!(synth_task_family(&p, 3, 0), Err(Error::BadParams(_))));
        assert!(matches!(
            synth_task_family(&FamilyParams::new("x", Family::Reach), 1, 0),
            Err(Error::TooFewTrajectories(1))
        ));
    }
}
