//! Skeleton representation, bone-rotation transfer between skeletons, and
//! inverse kinematics onto a hinge-chain arm model.

mod human;
mod motion;
mod tree;

pub use human::{ArmChain, HumanModel, IkOptions, IkSolution, Side};
pub use motion::MotionFile;
pub use tree::{forward_kinematics, retarget, source_rotations, KinematicTree, SkeletonFrame};

use nalgebra::Matrix3;

use crate::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Minimum bone length before a bone direction is considered undefined (m).
pub const MIN_BONE_LENGTH: f64 = 1e-9;

/// Proper rotation matrix in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and unit determinant to `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let r = Rotation(m);
        let (orth, det) = (r.orthonormality_error(), m.determinant());
        if !m.iter().all(|v| v.is_finite()) || orth > tol || (det - 1.0).abs() > tol {
            return Err(Error::BadParams(format!(
                "not a rotation: |R^T R - I| = {orth:e}, det = {det}"
            )));
        }
        Ok(r)
    }

    /// Right-handed rotation by `angle` about the unit vector `axis`.
    pub fn about_axis(axis: &Vec3, angle: f64) -> Self {
        let k = skew(axis);
        Rotation(Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::about_axis(&Vec3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::about_axis(&Vec3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::about_axis(&Vec3::z(), angle)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Max-abs entry of `R^T R - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }
}

pub(crate) fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit vector pointing from `parent` to `child`.
pub fn bone_vector(parent: &Vec3, child: &Vec3) -> Result<Vec3> {
    let d = child - parent;
    let length = d.norm();
    if !(length > MIN_BONE_LENGTH) {
        return Err(Error::DegenerateBone { length });
    }
    Ok(d / length)
}

/// Unit vector orthogonal to `v`, built against the basis axis on which `v`
/// has its smallest component (first such axis on ties).
pub fn orthogonal_unit(v: &Vec3) -> Vec3 {
    let a = v.abs();
    let basis = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    v.cross(&basis).normalize()
}

/// Below this squared sine the rotation axis `v x b` is numerically undefined.
const ANTIPODAL_SIN2: f64 = 1e-24;

/// Minimal rotation taking unit vector `v` onto unit vector `b` (Rodrigues).
///
/// `R = I + [k]x + [k]x^2 / (1 + c)` with `k = v x b`, `c = v . b`. For
/// obtuse angles `1 + c` is evaluated as `|k|^2 / (1 - c)`, which keeps
/// `R v = b` accurate up to the antipodal limit. When `v` and `b` are opposite
/// the minimal axis is undefined; the rotation is then a half-turn about
/// [`orthogonal_unit`]`(v)` followed by the alignment of `-v` onto `b`.
pub fn rodrigues_align(v: &Vec3, b: &Vec3) -> Rotation {
    let c = v.dot(b);
    let k = v.cross(b);
    let sin2 = k.norm_squared();
    if c < 0.0 && sin2 < ANTIPODAL_SIN2 {
        // About a unit axis a, the half-turn is exactly 2 a a^T - I.
        let a = orthogonal_unit(v);
        let half_turn = Rotation(2.0 * a * a.transpose() - Matrix3::identity());
        return rodrigues_align(&(-v), b).compose(&half_turn);
    }
    let one_plus_c = if c >= 0.0 { 1.0 + c } else { sin2 / (1.0 - c) };
    let kx = skew(&k);
    Rotation(Matrix3::identity() + kx + kx * kx / one_plus_c)
}

/// Re-expresses a rotation in another frame: `Q R Q^T`.
pub fn frame_transform(r_source: &Rotation, q: &Rotation) -> Rotation {
    Rotation(q.0 * r_source.0 * q.0.transpose())
}
