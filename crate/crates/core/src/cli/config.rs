use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Family, FamilyParams};
use crate::kinematics::Side;
use crate::simcontrol::{DerivativeMode, PlantModel, TAU_MAX};
use crate::tasknet::MetaConfig;
use crate::{Error, Result};

/// Prefix of environment variables that override config keys.
pub const ENV_PREFIX: &str = "METAEXO_";

/// Flat run configuration. Network and plant keys live at the top level next
/// to the keys below; they are split off into [`MetaConfig`] and
/// [`PlantModel`] on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    pub threads: usize,

    /// Sampling step of synthesized data (s). Task tables inherit it unless
    /// they set their own.
    pub dt: f64,
    pub traj_per_task: usize,
    /// Generated tasks per held-out spec.
    pub heldout_instances: usize,
    /// Relative amplitude spread between instances of one held-out spec.
    pub heldout_amplitude_spread: f64,
    pub train_task: Vec<toml::Table>,
    pub heldout_task: Vec<toml::Table>,

    pub dataset: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub adapted: Option<PathBuf>,
    /// Demonstration CSV (`t,angle,velocity`) sampled at `dt`.
    pub demo: Option<PathBuf>,
    /// Keypoint motion JSON for `retarget`.
    pub motion: Option<PathBuf>,

    pub iterations: u64,
    pub checkpoint_every: u64,

    pub retarget_side: Side,
    /// Source-to-target frame rotation as a rotation vector (rad).
    pub retarget_rotation: [f64; 3],

    pub kp: f64,
    pub kd: f64,
    /// Estimated load mass; defaults to the plant's `m_load`.
    pub m_hat: Option<f64>,
    pub tau_max: f64,
    pub derivative_mode: DerivativeMode,
    pub sim_dt: f64,

    /// Held-out tasks whose adapted rollouts are tracked in `eval`.
    pub eval_tracking_tasks: usize,
    /// Adaptation steps; defaults to `inner_steps_deploy`.
    pub adapt_steps: Option<usize>,

    #[serde(skip)]
    pub meta: MetaConfig,
    #[serde(skip)]
    pub plant: PlantModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            dt: 0.02,
            traj_per_task: 4,
            heldout_instances: 8,
            heldout_amplitude_spread: 0.1,
            train_task: Vec::new(),
            heldout_task: Vec::new(),
            dataset: None,
            heldout: None,
            checkpoint: None,
            adapted: None,
            demo: None,
            motion: None,
            iterations: 1000,
            checkpoint_every: 250,
            retarget_side: Side::Right,
            retarget_rotation: [0.0; 3],
            kp: 100.0,
            kd: 3.0,
            m_hat: None,
            tau_max: TAU_MAX,
            derivative_mode: DerivativeMode::Literal,
            sim_dt: 1e-3,
            eval_tracking_tasks: 5,
            adapt_steps: None,
            meta: MetaConfig::default(),
            plant: PlantModel::default(),
        }
    }
}

fn keys_of<T: Serialize>(value: &T) -> BTreeSet<String> {
    toml::Table::try_from(value)
        .expect("config structs serialize to tables")
        .keys()
        .cloned()
        .collect()
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_override(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `METAEXO_<KEY>` overrides from `env`,
    /// validates values and checks that every configured path exists.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::format(p, e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for (name, raw) in env {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                table.insert(key.to_ascii_lowercase(), parse_override(&raw));
            }
        }
        Self::from_table(table)
    }

    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        let split = |table: &mut toml::Table, keys: BTreeSet<String>| -> toml::Table {
            keys.iter()
                .filter_map(|k| table.remove(k).map(|v| (k.clone(), v)))
                .collect()
        };
        let meta_table = split(&mut table, keys_of(&MetaConfig::default()));
        let plant_table = split(&mut table, keys_of(&PlantModel::default()));
        let cfg_err = |what: &str, e: toml::de::Error| Error::Config(format!("{what}: {}", e.message()));
        let mut cfg: RunConfig = table.try_into().map_err(|e| cfg_err("run settings", e))?;
        cfg.meta = meta_table.try_into().map_err(|e| cfg_err("network settings", e))?;
        cfg.plant = plant_table.try_into().map_err(|e| cfg_err("plant settings", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.plant.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.sim_dt > 0.0 && self.dt.is_finite()) {
            return bad(format!(
                "dt and sim_dt must be positive, got {} and {}",
                self.dt, self.sim_dt
            ));
        }
        if self.traj_per_task < 2 {
            return bad(format!("traj_per_task must be at least 2, got {}", self.traj_per_task));
        }
        if self.heldout_instances == 0 || self.iterations == 0 || self.checkpoint_every == 0 {
            return bad("heldout_instances, iterations and checkpoint_every must be positive".into());
        }
        if !(0.0..1.0).contains(&self.heldout_amplitude_spread) {
            return bad(format!(
                "heldout_amplitude_spread must lie in [0, 1), got {}",
                self.heldout_amplitude_spread
            ));
        }
        if !(self.kp > 0.0 && self.kd > 0.0 && self.tau_max > 0.0) {
            return bad(format!(
                "kp, kd and tau_max must be positive, got {}, {}, {}",
                self.kp, self.kd, self.tau_max
            ));
        }
        if self.m_hat.is_some_and(|m| !(m >= 0.0 && m.is_finite())) {
            return bad("m_hat must be non-negative".into());
        }
        if self.retarget_rotation.iter().any(|v| !v.is_finite()) {
            return bad("retarget_rotation must be finite".into());
        }
        self.train_tasks()?;
        self.heldout_specs()?;
        let paths = [
            ("dataset", &self.dataset),
            ("heldout", &self.heldout),
            ("checkpoint", &self.checkpoint),
            ("adapted", &self.adapted),
            ("demo", &self.demo),
            ("motion", &self.motion),
        ];
        for (key, p) in paths {
            if let Some(p) = p {
                if !p.exists() {
                    return bad(format!("`{key}` points to {} which does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    fn parse_tasks(&self, tables: &[toml::Table], what: &str) -> Result<Vec<FamilyParams>> {
        let mut ids = BTreeSet::new();
        tables
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.entry("dt").or_insert(toml::Value::Float(self.dt));
                let p: FamilyParams = t
                    .try_into()
                    .map_err(|e: toml::de::Error| Error::Config(format!("{what}: {}", e.message())))?;
                p.validate().map_err(|e| Error::Config(format!("{what}: {e}")))?;
                if !ids.insert(p.task_id.clone()) {
                    return Err(Error::Config(format!("{what}: duplicate task_id `{}`", p.task_id)));
                }
                Ok(p)
            })
            .collect()
    }

    /// Training task generators; a built-in set of eight when none are configured.
    pub fn train_tasks(&self) -> Result<Vec<FamilyParams>> {
        if self.train_task.is_empty() {
            return Ok(default_train_tasks(self.dt));
        }
        self.parse_tasks(&self.train_task, "train_task")
    }

    /// Held-out task generators; a built-in set of three when none are configured.
    pub fn heldout_specs(&self) -> Result<Vec<FamilyParams>> {
        if self.heldout_task.is_empty() {
            return Ok(default_heldout_tasks(self.dt));
        }
        self.parse_tasks(&self.heldout_task, "heldout_task")
    }

    pub fn steps(&self) -> usize {
        self.adapt_steps.unwrap_or(self.meta.inner_steps_deploy)
    }
}

fn spec(id: &str, family: Family, base: f64, amplitude: f64, duration: f64, dt: f64) -> FamilyParams {
    FamilyParams {
        base,
        amplitude,
        duration,
        dt,
        ..FamilyParams::new(id, family)
    }
}

/// Eight task variants over the three synthetic families.
pub fn default_train_tasks(dt: f64) -> Vec<FamilyParams> {
    vec![
        spec("reach_low", Family::Reach, 0.2, 0.9, 2.0, dt),
        spec("reach_high", Family::Reach, 0.4, 1.4, 1.6, dt),
        spec("reach_slow", Family::Reach, 0.3, 0.7, 2.4, dt),
        FamilyParams {
            cycles: 2,
            ..spec("lift_double", Family::LiftCycle, 0.3, 0.9, 2.0, dt)
        },
        FamilyParams {
            cycles: 3,
            ..spec("lift_triple", Family::LiftCycle, 0.2, 1.2, 3.0, dt)
        },
        FamilyParams {
            cycles: 1,
            ..spec("lift_single", Family::LiftCycle, 0.5, 0.6, 1.5, dt)
        },
        spec("gesture_wave", Family::Gesture, 0.2, 1.0, 2.5, dt),
        FamilyParams {
            waypoints: vec![0.6, 1.0, 0.2, 0.7, 0.0],
            ..spec("gesture_zigzag", Family::Gesture, 0.3, 1.1, 3.0, dt)
        },
    ]
}

/// Three novel variants, one per family.
pub fn default_heldout_tasks(dt: f64) -> Vec<FamilyParams> {
    vec![
        spec("reach_novel", Family::Reach, 0.25, 1.2, 1.8, dt),
        FamilyParams {
            cycles: 2,
            ..spec("lift_novel", Family::LiftCycle, 0.35, 1.1, 2.5, dt)
        },
        FamilyParams {
            waypoints: vec![0.8, 0.3, 1.0, 0.0],
            ..spec("gesture_novel", Family::Gesture, 0.2, 1.0, 2.6, dt)
        },
    ]
}
