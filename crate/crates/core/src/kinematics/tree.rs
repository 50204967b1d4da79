use super::{bone_vector, frame_transform, rodrigues_align, Rotation, Vec3};
use crate::{Error, Result};

/// Skeletal hierarchy with its rest pose.
///
/// Bones are indexed by their child node; `rest_dirs[i]` and `lengths[i]`
/// are meaningful only for non-root nodes (the root entry is zero).
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest_dirs: Vec<Vec3>,
    lengths: Vec<f64>,
    root: usize,
    order: Vec<usize>,
}

/// Keypoint positions of one time sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonFrame {
    pub positions: Vec<Vec3>,
    pub timestamp: f64,
}

impl KinematicTree {
    /// Builds a tree; `rest_dirs` and `lengths` list non-root nodes in index order.
    pub fn new(
        names: Vec<String>,
        parents: Vec<Option<usize>>,
        rest_dirs: Vec<Vec3>,
        lengths: Vec<f64>,
    ) -> Result<Self> {
        let n = parents.len();
        let bad = |m: String| Err(Error::InvalidSkeleton(m));
        if n == 0 {
            return bad("empty skeleton".into());
        }
        if names.len() != n {
            return bad(format!("{} names for {n} nodes", names.len()));
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return bad(format!("expected exactly one root, found {}", roots.len()));
        }
        if rest_dirs.len() != n - 1 || lengths.len() != n - 1 {
            return bad(format!(
                "expected {} rest directions and lengths, got {} and {}",
                n - 1,
                rest_dirs.len(),
                lengths.len()
            ));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == i {
                    return bad(format!("node {i} has invalid parent {p}"));
                }
            }
        }
        let root = roots[0];

        // Breadth-first order from the root; unreachable nodes imply a cycle.
        let mut order = vec![root];
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            order.extend((0..n).filter(|&c| parents[c] == Some(u)));
        }
        if order.len() != n {
            return bad("parent links contain a cycle".into());
        }

        let mut dirs = vec![Vec3::zeros(); n];
        let mut lens = vec![0.0; n];
        let mut it = rest_dirs.into_iter().zip(lengths);
        for i in (0..n).filter(|&i| i != root) {
            let (d, l) = it.next().expect("length checked above");
            let norm = d.norm();
            if !d.iter().all(|v| v.is_finite()) || (norm - 1.0).abs() > 1e-9 {
                return bad(format!("rest direction of node {i} is not unit (|v| = {norm})"));
            }
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("bone length of node {i} must be positive, got {l}"));
            }
            dirs[i] = d;
            lens[i] = l;
        }
        Ok(Self {
            names,
            parents,
            rest_dirs: dirs,
            lengths: lens,
            root,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn rest_dir(&self, i: usize) -> Vec3 {
        self.rest_dirs[i]
    }

    pub fn length(&self, i: usize) -> f64 {
        self.lengths[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Non-root node indices in ascending order (the order of per-bone lists).
    pub fn bones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| i != self.root)
    }

    /// Root-to-leaf traversal order.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Same tree with every bone length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let dirs = self.bones().map(|i| self.rest_dirs[i]).collect();
        let lens = self.bones().map(|i| self.lengths[i] * factor).collect();
        Self::new(self.names.clone(), self.parents.clone(), dirs, lens)
    }

    /// Rest-pose positions with the root at `root_pos`.
    pub fn rest_frame(&self, root_pos: Vec3) -> SkeletonFrame {
        let rotations = vec![Rotation::identity(); self.len() - 1];
        forward_kinematics(self, &rotations, root_pos).expect("rotation count matches")
    }

    pub(crate) fn check_frame(&self, frame: &SkeletonFrame) -> Result<()> {
        if frame.positions.len() != self.len() {
            return Err(Error::InvalidSkeleton(format!(
                "frame has {} positions, tree has {} nodes",
                frame.positions.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Per-bone rotations aligning each rest direction with the observed bone.
///
/// One rotation per non-root node, in [`KinematicTree::bones`] order.
pub fn source_rotations(frame: &SkeletonFrame, tree: &KinematicTree) -> Result<Vec<Rotation>> {
    tree.check_frame(frame)?;
    tree.bones()
        .map(|i| {
            let p = tree.parent(i).expect("non-root");
            let b = bone_vector(&frame.positions[p], &frame.positions[i])?;
            Ok(rodrigues_align(&tree.rest_dir(i), &b))
        })
        .collect()
}

/// Places every keypoint at its parent plus the rotated rest bone.
pub fn forward_kinematics(tree: &KinematicTree, rotations: &[Rotation], root_pos: Vec3) -> Result<SkeletonFrame> {
    if rotations.len() + 1 != tree.len() {
        return Err(Error::InvalidSkeleton(format!(
            "{} rotations for {} bones",
            rotations.len(),
            tree.len() - 1
        )));
    }
    let mut bone_rot = vec![Rotation::identity(); tree.len()];
    for (i, r) in tree.bones().zip(rotations) {
        bone_rot[i] = *r;
    }
    let mut positions = vec![Vec3::zeros(); tree.len()];
    positions[tree.root()] = root_pos;
    for &i in &tree.topological_order()[1..] {
        let p = tree.parent(i).expect("non-root");
        positions[i] = positions[p] + bone_rot[i].apply(&(tree.length(i) * tree.rest_dir(i)));
    }
    Ok(SkeletonFrame {
        positions,
        timestamp: 0.0,
    })
}

/// Transfers one frame of source motion onto the target skeleton.
pub fn retarget(
    source_frame: &SkeletonFrame,
    source_tree: &KinematicTree,
    target_tree: &KinematicTree,
    q: &Rotation,
    target_root: Vec3,
) -> Result<SkeletonFrame> {
    if source_tree.parents() != target_tree.parents() {
        return Err(Error::TopologyMismatch(format!(
            "source parents {:?} vs target parents {:?}",
            source_tree.parents(),
            target_tree.parents()
        )));
    }
    let target_rot: Vec<Rotation> = source_rotations(source_frame, source_tree)?
        .iter()
        .map(|r| frame_transform(r, q))
        .collect();
    let mut out = forward_kinematics(target_tree, &target_rot, target_root)?;
    out.timestamp = source_frame.timestamp;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain() -> KinematicTree {
        KinematicTree::new(
            vec!["root".into(), "elbow".into(), "wrist".into()],
            vec![None, Some(0), Some(1)],
            vec![Vec3::x(), Vec3::x()],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    fn branched() -> KinematicTree {
        KinematicTree::new(
            (0..6).map(|i| format!("n{i}")).collect(),
            vec![None, Some(0), Some(1), Some(1), Some(3), Some(0)],
            vec![Vec3::z(), Vec3::y(), -Vec3::y(), -Vec3::z(), Vec3::new(0.6, 0.0, -0.8)],
            vec![0.5, 0.2, 0.2, 0.3, 0.25],
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        let two_roots = KinematicTree::new(
            vec!["a".into(), "b".into()],
            vec![None, None],
            vec![Vec3::x()],
            vec![1.0],
        );
        assert!(two_roots.is_err());
        let cycle = KinematicTree::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![None, Some(2), Some(1)],
            vec![Vec3::x(), Vec3::x()],
            vec![1.0, 1.0],
        );
        assert!(cycle.unwrap_err().to_string().contains("cycle"));
        let nonunit = KinematicTree::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(0)],
            vec![Vec3::new(2.0, 0.0, 0.0)],
            vec![1.0],
        );
        assert!(nonunit.is_err());
        let zero_len = KinematicTree::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(0)],
            vec![Vec3::x()],
            vec![0.0],
        );
        assert!(zero_len.is_err());
    }

    #[test]
    fn rest_frame_gives_identity_rotations() {
        let t = branched();
        let f = t.rest_frame(Vec3::new(1.0, 2.0, 3.0));
        for r in source_rotations(&f, &t).unwrap() {
            assert!((r.matrix() - Rotation::identity().matrix()).amax() < 1e-15);
        }
    }

    #[test]
    fn single_bone_rotated() {
        let t = KinematicTree::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(0)],
            vec![Vec3::x()],
            vec![2.0],
        )
        .unwrap();
        let f = SkeletonFrame {
            positions: vec![Vec3::zeros(), Vec3::new(0.0, 2.0, 0.0)],
            timestamp: 0.0,
        };
        let r = source_rotations(&f, &t).unwrap();
        assert_eq!(r[0], rodrigues_align(&Vec3::x(), &Vec3::y()));
    }

    #[test]
    fn two_link_fk() {
        let t = chain();
        let rz = Rotation::rot_z(std::f64::consts::FRAC_PI_2);
        let f = forward_kinematics(&t, &[Rotation::identity(), rz], Vec3::zeros()).unwrap();
        assert!((f.positions[2] - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn identity_retarget_at_rest() {
        let t = branched();
        let root = Vec3::new(0.1, -0.2, 0.9);
        let out = retarget(&t.rest_frame(Vec3::zeros()), &t, &t, &Rotation::identity(), root).unwrap();
        assert_eq!(out.positions.len(), t.len());
        for (a, b) in out.positions.iter().zip(t.rest_frame(root).positions) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn topology_mismatch() {
        let err = retarget(
            &chain().rest_frame(Vec3::zeros()),
            &chain(),
            &branched(),
            &Rotation::identity(),
            Vec3::zeros(),
        );
        assert!(matches!(err, Err(Error::TopologyMismatch(_))));
    }

    #[test]
    fn degenerate_bone_propagates() {
        let t = chain();
        let f = SkeletonFrame {
            positions: vec![Vec3::zeros(), Vec3::zeros(), Vec3::x()],
            timestamp: 0.0,
        };
        assert!(matches!(source_rotations(&f, &t), Err(Error::DegenerateBone { .. })));
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -3.1f64..3.1)
            .prop_filter("axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z, a)| Rotation::about_axis(&Vec3::new(x, y, z).normalize(), a))
    }

    proptest! {
        #[test]
        fn fk_preserves_lengths(rots in proptest::collection::vec(arb_rotation(), 5)) {
            let t = branched();
            let f = forward_kinematics(&t, &rots, Vec3::new(0.3, 0.0, 1.0)).unwrap();
            for i in t.bones() {
                let p = t.parent(i).unwrap();
                prop_assert!(((f.positions[i] - f.positions[p]).norm() - t.length(i)).abs() < 1e-9);
            }
        }

        #[test]
        fn identity_retarget_is_reroot(rots in proptest::collection::vec(arb_rotation(), 5),
                                       rx in -1.0f64..1.0, ry in -1.0f64..1.0) {
            let t = branched();
            let src = forward_kinematics(&t, &rots, Vec3::new(rx, ry, 0.5)).unwrap();
            let target_root = Vec3::new(-0.5, 0.25, 0.0);
            let out = retarget(&src, &t, &t, &Rotation::identity(), target_root).unwrap();
            let shift = target_root - src.positions[t.root()];
            for (a, b) in out.positions.iter().zip(&src.positions) {
                prop_assert!((a - (b + shift)).amax() < 1e-9);
            }
        }

        #[test]
        fn scaled_target_has_target_lengths(rots in proptest::collection::vec(arb_rotation(), 5)) {
            let t = branched();
            let big = t.scaled(2.0).unwrap();
            let src = forward_kinematics(&t, &rots, Vec3::zeros()).unwrap();
            let out = retarget(&src, &t, &big, &Rotation::identity(), Vec3::zeros()).unwrap();
            for i in big.bones() {
                let p = big.parent(i).unwrap();
                prop_assert!(((out.positions[i] - out.positions[p]).norm() - big.length(i)).abs() < 1e-9);
            }
        }
    }
}
