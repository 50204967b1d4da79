use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetaDataset, Sample, TaskDataset, Trajectory};
use crate::{Error, Result};

const HEADER: [&str; 3] = ["t", "angle", "velocity"];
const MANIFEST: &str = "manifest.json";

/// Per-task index stored next to the trajectory CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub task_id: String,
    pub dt: f64,
    /// CSV file names relative to the task directory.
    pub files: Vec<String>,
    pub subjects: Vec<String>,
    /// Raw sample count of each trajectory.
    pub lengths: Vec<usize>,
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(HEADER).map_err(csv_err)?;
    for (k, s) in traj.samples.iter().enumerate() {
        let t = k as f64 * traj.dt;
        w.write_record([t.to_string(), s.angle.to_string(), s.velocity.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `t,angle,velocity` CSV. `dt` is taken from the caller (usually
/// the manifest) and the time column must agree with it.
pub fn load_trajectory_csv(path: &Path, dt: f64) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::format(
            path,
            format!(
                "expected header `t,angle,velocity`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut samples = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        let mut vals = [0.0; 3];
        for (c, v) in vals.iter_mut().enumerate() {
            let field = rec.get(c).unwrap_or_default();
            *v = field.trim().parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {line}, column `{}`: cannot parse {field:?}", HEADER[c]),
                )
            })?;
        }
        if (vals[0] - k as f64 * dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(Error::format(
                path,
                format!("line {line}, column `t`: {} does not match dt = {dt}", vals[0]),
            ));
        }
        samples.push(Sample {
            angle: vals[1],
            velocity: vals[2],
        });
    }
    Ok(samples)
}

fn task_dir(root: &Path, task_id: &str) -> PathBuf {
    root.join("tasks").join(task_id)
}

pub fn save_task(task: &TaskDataset, root: &Path) -> Result<()> {
    let dir = task_dir(root, &task.task_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    for (i, t) in task.trajectories.iter().enumerate() {
        let name = format!("{i}.csv");
        write_trajectory_csv(t, &dir.join(&name))?;
        files.push(name);
    }
    let manifest = TaskManifest {
        task_id: task.task_id.clone(),
        dt: task.dt(),
        files,
        subjects: task.trajectories.iter().map(|t| t.subject_id.clone()).collect(),
        lengths: task.trajectories.iter().map(|t| t.len()).collect(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_task(dir: &Path) -> Result<TaskDataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: TaskManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&path, format!("line {}, column {}: {e}", e.line(), e.column())))?;
    if m.subjects.len() != m.files.len() || m.lengths.len() != m.files.len() {
        return Err(Error::format(
            &path,
            "fields `files`, `subjects` and `lengths` differ in length",
        ));
    }
    let mut trajectories = Vec::with_capacity(m.files.len());
    for ((file, subject), &len) in m.files.iter().zip(&m.subjects).zip(&m.lengths) {
        let csv_path = dir.join(file);
        let samples = load_trajectory_csv(&csv_path, m.dt)?;
        if samples.len() != len {
            return Err(Error::format(
                &csv_path,
                format!("{} samples, manifest says {len}", samples.len()),
            ));
        }
        let traj = Trajectory {
            samples,
            dt: m.dt,
            task_id: m.task_id.clone(),
            subject_id: subject.clone(),
        };
        traj.validate().map_err(|e| Error::format(&csv_path, e.to_string()))?;
        trajectories.push(traj);
    }
    TaskDataset::new(m.task_id, trajectories).map_err(|e| Error::format(&path, e.to_string()))
}

/// Writes `root/tasks/<task_id>/{manifest.json, 0.csv, 1.csv, ...}`.
pub fn save_meta_dataset(data: &MetaDataset, root: &Path) -> Result<()> {
    data.tasks.iter().try_for_each(|t| save_task(t, root))
}

/// Loads every task directory under `root/tasks`, ordered by directory name.
pub fn load_meta_dataset(root: &Path) -> Result<MetaDataset> {
    let tasks_root = root.join("tasks");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&tasks_root)
        .map_err(|e| Error::io(&tasks_root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let tasks = dirs.iter().map(|d| load_task(d)).collect::<Result<Vec<_>>>()?;
    MetaDataset::new(tasks).map_err(|e| Error::format(&tasks_root, e.to_string()))
}
