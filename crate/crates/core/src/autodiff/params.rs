use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tape, Tensor};
use crate::{Error, Result};

/// One named parameter array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Immutable snapshot of named parameters with a stable ordering.
///
/// Values are plain data so snapshots can be shared across worker threads;
/// [`ParamSet::attach`] turns them into leaves on a tape.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::BadParams(format!("duplicate parameter name {name:?}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "ParamSet::push",
                format!("{name}: shape {shape:?} with {} values", data.len()),
            ));
        }
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for p in &self.params {
            out.extend_from_slice(&p.data);
        }
        out
    }

    /// New set with this set's names and shapes and values taken from `flat`.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.numel() {
            return Err(Error::shape(
                "unflatten",
                format!("expected {} values, got {}", self.numel(), flat.len()),
            ));
        }
        let mut offset = 0;
        let params = self
            .params
            .iter()
            .map(|p| {
                let n = p.data.len();
                let data = flat[offset..offset + n].to_vec();
                offset += n;
                Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data,
                }
            })
            .collect();
        Ok(ParamSet { params })
    }

    /// Whether `other` has the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| Tensor::raw(p.shape.clone(), p.data.clone()))
            .collect()
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn attach(&self, tape: &Tape) -> Vec<Tensor> {
        self.tensors().iter().map(|t| tape.leaf(t)).collect()
    }

    /// Snapshot of `tensors` under this set's names; shapes must match.
    pub fn with_values(&self, tensors: &[Tensor]) -> Result<ParamSet> {
        if tensors.len() != self.params.len() {
            return Err(Error::shape(
                "with_values",
                format!("{} tensors for {} parameters", tensors.len(), self.params.len()),
            ));
        }
        let params = self
            .params
            .iter()
            .zip(tensors)
            .map(|(p, t)| {
                if t.shape() != p.shape.as_slice() {
                    return Err(Error::shape(
                        "with_values",
                        format!("{}: expected {:?}, got {:?}", p.name, p.shape, t.shape()),
                    ));
                }
                Ok(Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: t.to_vec(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(ParamSet { params })
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

pub const CHECKPOINT_FORMAT: &str = "metaexo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container of a parameter set plus the config that shaped it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format: String,
    pub version: u32,
    pub config: C,
    pub params: ParamSet,
}

impl<C: Serialize + for<'de> Deserialize<'de>> Checkpoint<C> {
    pub fn new(config: C, params: ParamSet) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        match value.get("format").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => return Err(Error::Checkpoint(format!("unrecognized format {other:?}"))),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "version mismatch: expected {CHECKPOINT_VERSION}, found {other:?}"
                )))
            }
        }
        let ckpt: Self = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        for p in ckpt.params.iter() {
            if p.shape.iter().product::<usize>() != p.data.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?} but {} values",
                    p.name,
                    p.shape,
                    p.data.len()
                )));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rejects checkpoints whose layout differs from `expected`.
    pub fn check_layout(&self, expected: &ParamSet) -> Result<()> {
        if !self.params.same_layout(expected) {
            let found: Vec<_> = self.params.iter().map(|p| (&p.name, &p.shape)).collect();
            let want: Vec<_> = expected.iter().map(|p| (&p.name, &p.shape)).collect();
            return Err(Error::Checkpoint(format!(
                "parameter layout mismatch: expected {want:?}, found {found:?}"
            )));
        }
        Ok(())
    }
}
