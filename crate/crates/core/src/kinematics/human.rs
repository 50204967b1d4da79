use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{forward_kinematics, KinematicTree, Rotation, SkeletonFrame, Vec3};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Serial chain of one arm: three orthogonal shoulder hinges followed by one
/// elbow flexion hinge.
///
/// The upper arm and forearm both point along `rest_dir` at zero angles. The
/// shoulder rotation is `R(a0, q0) R(a1, q1) R(a2, q2)` over `shoulder_axes`;
/// the elbow hinge turns about `elbow_axis` expressed in the upper-arm frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmChain {
    pub side: Side,
    pub shoulder_node: usize,
    pub elbow_node: usize,
    pub wrist_node: usize,
    /// Index of this arm's first DOF in the joint vector.
    pub dof_offset: usize,
    pub upper_length: f64,
    pub forearm_length: f64,
    pub rest_dir: Vec3,
    pub shoulder_axes: [Vec3; 3],
    pub elbow_axis: Vec3,
}

pub const ARM_DOF: usize = 4;

struct ArmPose {
    shoulder: Vec3,
    elbow: Vec3,
    wrist: Vec3,
    /// World hinge axes, shoulder x3 then elbow.
    axes: [Vec3; 4],
}

impl ArmChain {
    fn pose(&self, shoulder: Vec3, q: &[f64]) -> ArmPose {
        let r0 = Rotation::about_axis(&self.shoulder_axes[0], q[0]);
        let r01 = r0.compose(&Rotation::about_axis(&self.shoulder_axes[1], q[1]));
        let r_sh = r01.compose(&Rotation::about_axis(&self.shoulder_axes[2], q[2]));
        let r_fore = r_sh.compose(&Rotation::about_axis(&self.elbow_axis, q[3]));
        let elbow = shoulder + r_sh.apply(&(self.upper_length * self.rest_dir));
        let wrist = elbow + r_fore.apply(&(self.forearm_length * self.rest_dir));
        ArmPose {
            shoulder,
            elbow,
            wrist,
            axes: [
                self.shoulder_axes[0],
                r0.apply(&self.shoulder_axes[1]),
                r01.apply(&self.shoulder_axes[2]),
                r_sh.apply(&self.elbow_axis),
            ],
        }
    }
}

/// Minimal upper-body model: rigid torso rooted at the pelvis plus two
/// four-DOF arms.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanModel {
    tree: KinematicTree,
    arms: Vec<ArmChain>,
    limits: Vec<(f64, f64)>,
}

/// Result of one inverse-kinematics solve.
#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    /// Objective value: sum of squared keypoint distances (m^2).
    pub residual: f64,
    pub iterations: usize,
    /// Norm of the limit-projected objective gradient at `q`.
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkOptions {
    pub damping: f64,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 1e-6,
            max_iterations: 200,
            grad_tolerance: 1e-10,
        }
    }
}

impl HumanModel {
    pub fn new(tree: KinematicTree, arms: Vec<ArmChain>, limits: Vec<(f64, f64)>) -> Result<Self> {
        let h = arms.len() * ARM_DOF;
        if limits.len() != h {
            return Err(Error::BadParams(format!("{} limits for {h} DOFs", limits.len())));
        }
        if let Some((i, l)) = limits.iter().enumerate().find(|(_, (lo, hi))| !(lo < hi)) {
            return Err(Error::BadParams(format!("limit {i} is not ordered: {l:?}")));
        }
        for arm in &arms {
            if arm.dof_offset + ARM_DOF > h {
                return Err(Error::BadParams(format!("arm {:?} DOFs exceed H = {h}", arm.side)));
            }
            for node in [arm.shoulder_node, arm.elbow_node, arm.wrist_node] {
                if node >= tree.len() {
                    return Err(Error::BadParams(format!("arm node {node} outside tree")));
                }
            }
            if tree.parent(arm.elbow_node) != Some(arm.shoulder_node)
                || tree.parent(arm.wrist_node) != Some(arm.elbow_node)
            {
                return Err(Error::BadParams(format!(
                    "arm {:?} nodes do not form a chain",
                    arm.side
                )));
            }
        }
        Ok(Self { tree, arms, limits })
    }

    /// Built-in eight-keypoint upper body: pelvis, neck, and per arm shoulder,
    /// elbow and wrist. Arms hang along -z at zero angles and flex forward (+x).
    pub fn builtin() -> Self {
        let names = [
            "pelvis",
            "neck",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
        ];
        let parents = vec![None, Some(0), Some(1), Some(2), Some(3), Some(1), Some(5), Some(6)];
        let down = -Vec3::z();
        let dirs = vec![Vec3::z(), Vec3::y(), down, down, -Vec3::y(), down, down];
        let (upper, fore) = (0.30, 0.25);
        let lengths = vec![0.50, 0.18, upper, fore, 0.18, upper, fore];
        let tree = KinematicTree::new(names.iter().map(|s| s.to_string()).collect(), parents, dirs, lengths)
            .expect("builtin skeleton is valid");
        let arm = |side, shoulder_node, dof_offset| ArmChain {
            side,
            shoulder_node,
            elbow_node: shoulder_node + 1,
            wrist_node: shoulder_node + 2,
            dof_offset,
            upper_length: upper,
            forearm_length: fore,
            rest_dir: down,
            shoulder_axes: [Vec3::x(), Vec3::y(), Vec3::z()],
            // flexion swings the forearm from -z toward +x
            elbow_axis: -Vec3::y(),
        };
        let arm_limits = [(-1.6, 1.6), (-2.8, 0.8), (-1.4, 1.4), (0.0, 2.6)];
        let limits = arm_limits.iter().chain(arm_limits.iter()).copied().collect();
        Self::new(tree, vec![arm(Side::Left, 2, 0), arm(Side::Right, 5, 4)], limits).expect("builtin model is valid")
    }

    pub fn tree(&self) -> &KinematicTree {
        &self.tree
    }

    pub fn arms(&self) -> &[ArmChain] {
        &self.arms
    }

    /// Total hinge DOF count `H`.
    pub fn dof(&self) -> usize {
        self.limits.len()
    }

    pub fn limits(&self) -> &[(f64, f64)] {
        &self.limits
    }

    /// Index of the elbow-flexion DOF of `side`.
    pub fn elbow_index(&self, side: Side) -> Option<usize> {
        self.arms
            .iter()
            .find(|a| a.side == side)
            .map(|a| a.dof_offset + ARM_DOF - 1)
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, (lo, hi)) in q.iter_mut().zip(&self.limits) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof() && q.iter().zip(&self.limits).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    fn poses(&self, q: &[f64], torso: &SkeletonFrame) -> Vec<ArmPose> {
        self.arms
            .iter()
            .map(|a| {
                a.pose(
                    torso.positions[a.shoulder_node],
                    &q[a.dof_offset..a.dof_offset + ARM_DOF],
                )
            })
            .collect()
    }

    fn torso(&self, root: Vec3) -> SkeletonFrame {
        self.tree.rest_frame(root)
    }

    /// Keypoint positions for joint vector `q` with the pelvis at `root`.
    pub fn forward(&self, q: &[f64], root: Vec3) -> Result<SkeletonFrame> {
        if q.len() != self.dof() {
            return Err(Error::BadParams(format!(
                "joint vector has {} entries, H = {}",
                q.len(),
                self.dof()
            )));
        }
        let mut frame = self.torso(root);
        for (arm, pose) in self.arms.iter().zip(self.poses(q, &frame.clone())) {
            frame.positions[arm.shoulder_node] = pose.shoulder;
            frame.positions[arm.elbow_node] = pose.elbow;
            frame.positions[arm.wrist_node] = pose.wrist;
        }
        Ok(frame)
    }

    /// Per-bone rotations (tree bone order) reproducing the arm pose under
    /// [`forward_kinematics`]; torso bones stay at rest.
    pub fn bone_rotations(&self, q: &[f64]) -> Result<Vec<Rotation>> {
        let frame = self.forward(q, Vec3::zeros())?;
        let mut rots = Vec::with_capacity(self.tree.len() - 1);
        for i in self.tree.bones() {
            let p = self.tree.parent(i).expect("non-root");
            let b = super::bone_vector(&frame.positions[p], &frame.positions[i])?;
            rots.push(super::rodrigues_align(&self.tree.rest_dir(i), &b));
        }
        debug_assert!(forward_kinematics(&self.tree, &rots, Vec3::zeros()).is_ok());
        Ok(rots)
    }

    /// Residual vector `f(q) - targets` and its Jacobian (3N x H).
    fn residual_jacobian(&self, q: &[f64], targets: &SkeletonFrame) -> (DVector<f64>, DMatrix<f64>) {
        let root = targets.positions[self.tree.root()];
        let n = self.tree.len();
        let torso = self.torso(root);
        let mut pos = torso.positions.clone();
        let mut jac = DMatrix::zeros(3 * n, self.dof());
        for (arm, pose) in self.arms.iter().zip(self.poses(q, &torso)) {
            pos[arm.elbow_node] = pose.elbow;
            pos[arm.wrist_node] = pose.wrist;
            let o = arm.dof_offset;
            for j in 0..3 {
                let de = pose.axes[j].cross(&(pose.elbow - pose.shoulder));
                let dw = pose.axes[j].cross(&(pose.wrist - pose.shoulder));
                jac.fixed_view_mut::<3, 1>(3 * arm.elbow_node, o + j).copy_from(&de);
                jac.fixed_view_mut::<3, 1>(3 * arm.wrist_node, o + j).copy_from(&dw);
            }
            let dw = pose.axes[3].cross(&(pose.wrist - pose.elbow));
            jac.fixed_view_mut::<3, 1>(3 * arm.wrist_node, o + 3).copy_from(&dw);
        }
        let mut r = DVector::zeros(3 * n);
        for (i, (p, t)) in pos.iter().zip(&targets.positions).enumerate() {
            r.fixed_rows_mut::<3>(3 * i).copy_from(&(p - t));
        }
        (r, jac)
    }

    fn projected_gradient_norm(&self, q: &[f64], grad: &DVector<f64>) -> f64 {
        grad.iter()
            .zip(q.iter().zip(&self.limits))
            .map(|(&g, (&v, &(lo, hi)))| {
                let blocked = (v <= lo && g > 0.0) || (v >= hi && g < 0.0);
                if blocked {
                    0.0
                } else {
                    g * g
                }
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Damped Gauss-Newton solve of `min_q sum_i |f_i(q) - P_i|^2` within limits.
    ///
    /// The model root is pinned to the target root keypoint. On hitting the
    /// iteration cap the best iterate is returned inside
    /// [`Error::NonConvergence`].
    pub fn inverse_kinematics(&self, targets: &SkeletonFrame, q_init: &[f64], opts: &IkOptions) -> Result<IkSolution> {
        self.tree.check_frame(targets)?;
        if q_init.len() != self.dof() {
            return Err(Error::BadParams(format!(
                "q_init has {} entries, H = {}",
                q_init.len(),
                self.dof()
            )));
        }
        let mut q = q_init.to_vec();
        self.clamp(&mut q);
        let h = self.dof();
        let (mut r, mut jac) = self.residual_jacobian(&q, targets);
        let mut cost = r.norm_squared();
        let mut grad = 2.0 * jac.transpose() * &r;
        let mut gnorm = self.projected_gradient_norm(&q, &grad);
        let mut iterations = 0;
        while gnorm > opts.grad_tolerance && iterations < opts.max_iterations {
            iterations += 1;
            let jtj = jac.transpose() * &jac + DMatrix::identity(h, h) * opts.damping;
            let rhs = -(jac.transpose() * &r);
            let step = match jtj.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => break,
            };
            // Halve until the clamped step does not increase the objective.
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let mut trial: Vec<f64> = q.iter().zip(step.iter()).map(|(a, d)| a + scale * d).collect();
                self.clamp(&mut trial);
                let (tr, tj) = self.residual_jacobian(&trial, targets);
                let tc = tr.norm_squared();
                if tc <= cost {
                    accepted = Some((trial, tr, tj, tc));
                    break;
                }
                scale *= 0.5;
            }
            let Some((nq, nr, nj, nc)) = accepted else { break };
            let stalled = nq == q;
            q = nq;
            r = nr;
            jac = nj;
            cost = nc;
            grad = 2.0 * jac.transpose() * &r;
            gnorm = self.projected_gradient_norm(&q, &grad);
            if stalled {
                break;
            }
        }
        let solution = IkSolution {
            q,
            residual: cost,
            iterations,
            grad_norm: gnorm,
            converged: gnorm <= opts.grad_tolerance,
        };
        if solution.converged {
            Ok(solution)
        } else {
            Err(Error::NonConvergence {
                iterations,
                grad_norm: gnorm,
                best: Box::new(solution),
            })
        }
    }

    /// Solves every frame in order, warm-starting each from the previous
    /// solution. Frames that hit the iteration cap keep their best iterate
    /// with `converged = false`.
    pub fn solve_sequence(
        &self,
        frames: &[SkeletonFrame],
        q_init: &[f64],
        opts: &IkOptions,
    ) -> Result<Vec<IkSolution>> {
        let mut q = q_init.to_vec();
        let mut out = Vec::with_capacity(frames.len());
        for frame in frames {
            let sol = match self.inverse_kinematics(frame, &q, opts) {
                Ok(s) => s,
                Err(Error::NonConvergence { best, .. }) => *best,
                Err(e) => return Err(e),
            };
            q.clone_from(&sol.q);
            out.push(sol);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(model: &HumanModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        model
            .limits()
            .iter()
            .map(|&(lo, hi)| {
                // stay off the limits so the truth is an interior optimum
                let m = 0.05 * (hi - lo);
                rng.random_range(lo + m..hi - m)
            })
            .collect()
    }

    #[test]
    fn builtin_layout() {
        let m = HumanModel::builtin();
        assert_eq!(m.dof(), 8);
        assert_eq!(m.elbow_index(Side::Left), Some(3));
        assert_eq!(m.elbow_index(Side::Right), Some(7));
        assert_eq!(m.limits()[7], (0.0, 2.6));
        let rest = m.forward(&[0.0; 8], Vec3::zeros()).unwrap();
        assert_eq!(rest, m.tree().rest_frame(Vec3::zeros()));
    }

    #[test]
    fn elbow_flexes_forward() {
        let m = HumanModel::builtin();
        let mut q = [0.0; 8];
        q[7] = std::f64::consts::FRAC_PI_2;
        let f = m.forward(&q, Vec3::zeros()).unwrap();
        let fore = f.positions[7] - f.positions[6];
        assert!((fore - Vec3::new(0.25, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn bone_rotations_reproduce_pose() {
        let m = HumanModel::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_q(&m, &mut rng);
        let rots = m.bone_rotations(&q).unwrap();
        let a = forward_kinematics(m.tree(), &rots, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let b = m.forward(&q, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        for (x, y) in a.positions.iter().zip(&b.positions) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = HumanModel::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_q(&m, &mut rng);
        let target = m.forward(&[0.1; 8], Vec3::zeros()).unwrap();
        let (_, jac) = m.residual_jacobian(&q, &target);
        let h = 1e-6;
        for j in 0..8 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            let (rp, _) = m.residual_jacobian(&qp, &target);
            let (rm, _) = m.residual_jacobian(&qm, &target);
            let fd = (rp - rm) / (2.0 * h);
            assert!((fd - jac.column(j)).amax() < 1e-8, "column {j}");
        }
    }

    #[test]
    fn rest_targets_give_zero() {
        let m = HumanModel::builtin();
        let targets = m.tree().rest_frame(Vec3::new(0.0, 0.0, 1.0));
        let sol = m
            .inverse_kinematics(&targets, &[0.0; 8], &IkOptions::default())
            .unwrap();
        assert!(sol.q.iter().all(|v| v.abs() < 1e-12));
        assert!(sol.residual < 1e-20);
    }

    #[test]
    fn round_trip_near_truth() {
        let m = HumanModel::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let q_true = random_q(&m, &mut rng);
            let targets = m.forward(&q_true, Vec3::new(0.2, -0.1, 1.0)).unwrap();
            let mut q0: Vec<f64> = q_true.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
            m.clamp(&mut q0);
            let sol = m.inverse_kinematics(&targets, &q0, &IkOptions::default()).unwrap();
            assert!(sol.residual < 1e-10);
            for side in [Side::Left, Side::Right] {
                let e = m.elbow_index(side).unwrap();
                assert!((sol.q[e] - q_true[e]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unreachable_target_bounded_below() {
        let m = HumanModel::builtin();
        let mut targets = m.tree().rest_frame(Vec3::zeros());
        // right wrist 0.3 m beyond full reach, straight out forward
        let sh = targets.positions[5];
        let reach = 0.55;
        let gap = 0.3;
        targets.positions[7] = sh + Vec3::new(reach + gap, 0.0, 0.0);
        let mut q0 = vec![0.0; 8];
        q0[7] = 0.3;
        let sol = m.inverse_kinematics(&targets, &q0, &IkOptions::default()).unwrap();
        assert!(sol.residual >= gap * gap - 1e-12, "residual {}", sol.residual);
        assert!(m.within_limits(&sol.q));
    }
}
