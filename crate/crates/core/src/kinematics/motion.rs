use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KinematicTree, SkeletonFrame, Vec3};
use crate::{Error, Result};

/// Keypoint motion file: a skeleton description plus `T x N x 3` positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub fps: f64,
    pub names: Vec<String>,
    /// Parent index per node, `-1` for the root.
    pub parents: Vec<i64>,
    pub rest_dirs: Vec<[f64; 3]>,
    pub lengths: Vec<f64>,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl MotionFile {
    pub fn from_tree(tree: &KinematicTree, fps: f64, frames: &[SkeletonFrame]) -> Self {
        Self {
            fps,
            names: tree.names().to_vec(),
            parents: tree.parents().iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            rest_dirs: tree.bones().map(|i| tree.rest_dir(i).into()).collect(),
            lengths: tree.bones().map(|i| tree.length(i)).collect(),
            frames: frames
                .iter()
                .map(|f| f.positions.iter().map(|p| (*p).into()).collect())
                .collect(),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let file: MotionFile = serde_json::from_str(text)
            .map_err(|e| Error::format(path, format!("line {}, column {}: {e}", e.line(), e.column())))?;
        file.validate(path)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |m: String| Err(Error::format(path, m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("field `fps` must be positive, got {}", self.fps));
        }
        let n = self.names.len();
        if self.parents.len() != n {
            return bad(format!(
                "field `parents` has {} entries for {n} names",
                self.parents.len()
            ));
        }
        if let Some(p) = self.parents.iter().find(|&&p| p < -1 || p >= n as i64) {
            return bad(format!("field `parents` contains out-of-range index {p}"));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != n {
                return bad(format!(
                    "field `frames[{t}]` has {} keypoints, expected {n}",
                    frame.len()
                ));
            }
            if frame.iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("field `frames[{t}]` contains non-finite values"));
            }
        }
        self.tree().map_err(|e| Error::format(path, format!("skeleton: {e}")))?;
        Ok(())
    }

    pub fn tree(&self) -> Result<KinematicTree> {
        KinematicTree::new(
            self.names.clone(),
            self.parents.iter().map(|&p| (p >= 0).then_some(p as usize)).collect(),
            self.rest_dirs.iter().map(|d| Vec3::from(*d)).collect(),
            self.lengths.clone(),
        )
    }

    pub fn skeleton_frames(&self) -> Vec<SkeletonFrame> {
        self.frames
            .iter()
            .enumerate()
            .map(|(t, f)| SkeletonFrame {
                positions: f.iter().map(|p| Vec3::from(*p)).collect(),
                timestamp: t as f64 / self.fps,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::HumanModel;

    #[test]
    fn roundtrip_builtin() {
        let m = HumanModel::builtin();
        let frames = vec![m.tree().rest_frame(Vec3::zeros()); 3];
        let file = MotionFile::from_tree(m.tree(), 30.0, &frames);
        let text = serde_json::to_string(&file).unwrap();
        let back = MotionFile::parse(&text, Path::new("x.json")).unwrap();
        assert_eq!(back.tree().unwrap(), *m.tree());
        assert_eq!(back.skeleton_frames()[2].timestamp, 2.0 / 30.0);
    }

    #[test]
    fn errors_name_the_field() {
        let p = Path::new("m.json");
        let err = MotionFile::parse(
            r#"{"fps": 30, "names": ["a"], "parents": [-1], "rest_dirs": [], "lengths": []}"#,
            p,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("frames"), "{err}");
        let err = MotionFile::parse(
            r#"{"fps": -1, "names": ["a"], "parents": [-1], "rest_dirs": [], "lengths": [], "frames": []}"#,
            p,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("fps"), "{err}");
        let err = MotionFile::parse("{\"fps\": 30,\n \"names\": [1]}", p)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
