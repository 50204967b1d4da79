//! Elbow-flexion trajectories, temporal windows, per-task datasets and the
//! synthetic task families used in place of recorded motion corpora.

mod io;
mod synth;

pub use io::{
    load_meta_dataset, load_task, load_trajectory_csv, save_meta_dataset, save_task, write_trajectory_csv, TaskManifest,
};
pub use synth::{synth_task_family, Family, FamilyParams, SubjectProfile};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Elbow flexion range of the built-in arm model (rad).
pub const ELBOW_LIMITS: (f64, f64) = (0.0, 2.6);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// rad
    pub angle: f64,
    /// rad/s
    pub velocity: f64,
}

/// Uniformly sampled elbow angle/velocity series of one task execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub dt: f64,
    pub task_id: String,
    pub subject_id: String,
}

fn wrap_angle(a: f64) -> f64 {
    if (-PI..=PI).contains(&a) {
        a
    } else {
        let w = (a + PI).rem_euclid(2.0 * PI) - PI;
        if w == -PI {
            PI
        } else {
            w
        }
    }
}

/// Builds a trajectory from an angle series; velocities are central
/// differences (one-sided at the ends) of the wrapped angles.
pub fn extract_trajectory(angles: &[f64], dt: f64) -> Result<Trajectory> {
    if angles.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: angles.len(),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::BadParams(format!("dt must be positive, got {dt}")));
    }
    if let Some(a) = angles.iter().find(|a| !a.is_finite()) {
        return Err(Error::NaNDetected(format!("in angle series ({a})")));
    }
    let q: Vec<f64> = angles.iter().map(|&a| wrap_angle(a)).collect();
    let n = q.len();
    let samples = (0..n)
        .map(|k| {
            let velocity = if k == 0 {
                (q[1] - q[0]) / dt
            } else if k == n - 1 {
                (q[n - 1] - q[n - 2]) / dt
            } else {
                (q[k + 1] - q[k - 1]) / (2.0 * dt)
            };
            Sample { angle: q[k], velocity }
        })
        .collect();
    Ok(Trajectory {
        samples,
        dt,
        task_id: String::new(),
        subject_id: String::new(),
    })
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.angle).collect()
    }

    pub fn velocities(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.velocity).collect()
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    pub fn with_ids(mut self, task_id: impl Into<String>, subject_id: impl Into<String>) -> Self {
        self.task_id = task_id.into();
        self.subject_id = subject_id.into();
        self
    }

    /// Checks the type invariants: `L >= 2`, `dt > 0`, finite values, angles in `[-pi, pi]`.
    pub fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: self.len(),
            });
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::BadParams(format!("dt must be positive, got {}", self.dt)));
        }
        for (k, s) in self.samples.iter().enumerate() {
            if !s.angle.is_finite() || !s.velocity.is_finite() || s.angle.abs() > PI {
                return Err(Error::BadParams(format!("sample {k} out of range: {s:?}")));
            }
        }
        Ok(())
    }
}

/// History of `delta_t + 1` samples (oldest first) and the next angle.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalWindow {
    pub history: Vec<Sample>,
    pub target: f64,
}

/// All windows of `traj`: one per step with a full history and a successor.
///
/// Yields `L - delta_t - 1` windows; window `j` covers samples
/// `j..=j + delta_t` and targets the angle at `j + delta_t + 1`.
pub fn make_windows(traj: &Trajectory, delta_t: usize) -> Result<Vec<TemporalWindow>> {
    let l = traj.len();
    if l < delta_t + 2 {
        return Err(Error::TooShort {
            needed: delta_t + 2,
            got: l,
        });
    }
    Ok((0..l - delta_t - 1)
        .map(|j| TemporalWindow {
            history: traj.samples[j..=j + delta_t].to_vec(),
            target: traj.samples[j + delta_t + 1].angle,
        })
        .collect())
}

/// Trajectories recorded for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
}

impl TaskDataset {
    pub fn new(task_id: impl Into<String>, trajectories: Vec<Trajectory>) -> Result<Self> {
        let task = Self {
            task_id: task_id.into(),
            trajectories,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.len() < 2 {
            return Err(Error::TooFewTrajectories(self.trajectories.len()));
        }
        let dt = self.trajectories[0].dt;
        for t in &self.trajectories {
            t.validate()?;
            if t.dt != dt {
                return Err(Error::BadParams(format!(
                    "task {}: trajectories disagree on dt ({} vs {dt})",
                    self.task_id, t.dt
                )));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.trajectories[0].dt
    }
}

/// Collection of task datasets with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaDataset {
    pub tasks: Vec<TaskDataset>,
}

impl MetaDataset {
    pub fn new(tasks: Vec<TaskDataset>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::BadParams("meta-dataset needs at least one task".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|o| o.task_id == t.task_id) {
                return Err(Error::BadParams(format!("duplicate task id {:?}", t.task_id)));
            }
        }
        Ok(Self { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Disjoint support/query partition of a task at trajectory granularity.
///
/// The support set gets `floor(N * fraction)` trajectories, moved into
/// `[1, N - 1]` so both parts are non-empty. Order follows a seeded shuffle.
pub fn split_support_query(
    task: &TaskDataset,
    support_fraction: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let n = task.trajectories.len();
    if n < 2 {
        return Err(Error::TooFewTrajectories(n));
    }
    if !(support_fraction > 0.0 && support_fraction < 1.0) {
        return Err(Error::BadParams(format!(
            "support fraction must lie in (0, 1), got {support_fraction}"
        )));
    }
    let n_support = ((n as f64 * support_fraction).floor() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let support = idx[..n_support].iter().map(|&i| task.trajectories[i].clone()).collect();
    let query = idx[n_support..].iter().map(|&i| task.trajectories[i].clone()).collect();
    Ok((support, query))
}

/// Per-channel affine normalization statistics, `[angle, velocity]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajStats {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl TrajStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 2],
            scale: [1.0; 2],
        }
    }

    /// Mean and standard deviation over every sample; a channel with zero
    /// spread gets scale 1.
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for t in trajs {
            for s in &t.samples {
                n += 1;
                for (c, v) in [s.angle, s.velocity].into_iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        if n == 0 {
            return Self::identity();
        }
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        let scale = [0, 1].map(|c| {
            let var = (sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
            let sd = var.sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        Self { mean, scale }
    }

    fn check(&self) -> Result<()> {
        for s in self.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::ZeroScale(s));
            }
        }
        if !self.mean.iter().all(|m| m.is_finite()) {
            return Err(Error::BadParams(format!("non-finite mean {:?}", self.mean)));
        }
        Ok(())
    }
}

/// `(x - mean) / scale` per channel. The result is a feature series and is
/// not bound by the angle-range invariant.
pub fn normalize(traj: &Trajectory, stats: &TrajStats) -> Result<Trajectory> {
    stats.check()?;
    let mut out = traj.clone();
    for s in &mut out.samples {
        s.angle = (s.angle - stats.mean[0]) / stats.scale[0];
        s.velocity = (s.velocity - stats.mean[1]) / stats.scale[1];
    }
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize(traj: &Trajectory, stats: &TrajStats) -> Result<Trajectory> {
    stats.check()?;
    let mut out = traj.clone();
    for s in &mut out.samples {
        s.angle = s.angle * stats.scale[0] + stats.mean[0];
        s.velocity = s.velocity * stats.scale[1] + stats.mean[1];
    }
    Ok(out)
}
