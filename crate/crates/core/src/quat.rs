//! Quaternion algebra and the geometric primitives behind the spatial
//! feature transform and the kinematics augmentation.
//!
//! Convention: components are ordered (x, y, z, w) with w the scalar part,
//! and composition uses the Hamilton product. No other convention is
//! accepted at API boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance within which a quaternion counts as unit-norm.
pub const UNIT_TOL: f64 = 1e-6;
/// Norm drift tolerated before rotation refuses to renormalize an input.
const RENORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Self = Self {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self { x, y, z, w }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.w.is_finite()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }

    /// Scales to unit norm. Errors on zero or non-finite norm.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::NonUnitQuaternion { norm: n });
        }
        Ok(Self::new(self.x / n, self.y / n, self.z / n, self.w / n))
    }
}

impl Vec3 {
    pub const X: Self = Self {
        x: 1.0,
        y: 0.0,
        z: 0.0,
    };
    pub const Y: Self = Self {
        x: 0.0,
        y: 1.0,
        z: 0.0,
    };
    pub const Z: Self = Self {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn scale(&self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn sub(&self, other: &Vec3) -> Vec3 {
        Vec3::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }

    pub fn normalized(&self) -> Result<Vec3> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroAxis);
        }
        Ok(self.scale(1.0 / n))
    }
}

/// Hamilton product q1 ⊗ q2.
pub fn qmul(q1: &Quaternion, q2: &Quaternion) -> Quaternion {
    Quaternion::new(
        q1.w * q2.x + q1.x * q2.w + q1.y * q2.z - q1.z * q2.y,
        q1.w * q2.y + q1.y * q2.w + q1.z * q2.x - q1.x * q2.z,
        q1.w * q2.z + q1.z * q2.w + q1.x * q2.y - q1.y * q2.x,
        q1.w * q2.w - q1.x * q2.x - q1.y * q2.y - q1.z * q2.z,
    )
}

/// Conjugate [-x, -y, -z, w].
pub fn qconj(q: &Quaternion) -> Quaternion {
    Quaternion::new(-q.x, -q.y, -q.z, q.w)
}

/// Rotates `v` by the unit quaternion `q`: the vector part of
/// (q ⊗ [v, 0]) ⊗ q*.
///
/// Inputs within 1e-3 of unit norm are renormalized; anything further off
/// is rejected so a silent scale error cannot masquerade as a rotation.
pub fn rotate_vec(q: &Quaternion, v: &Vec3) -> Result<Vec3> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > RENORM_TOL {
        return Err(Error::NonUnitQuaternion { norm: n });
    }
    let q = q.normalized()?;
    let pure = Quaternion::new(v.x, v.y, v.z, 0.0);
    let r = qmul(&qmul(&q, &pure), &qconj(&q));
    Ok(Vec3::new(r.x, r.y, r.z))
}

/// Rotation quaternion of angle `theta` about `axis`:
/// [a·sin(θ/2), cos(θ/2)]. The axis is normalized internally.
pub fn axis_angle_quat(axis: &Vec3, theta: f64) -> Result<Quaternion> {
    let a = axis.normalized()?;
    let half = theta / 2.0;
    let s = half.sin();
    Ok(Quaternion::new(a.x * s, a.y * s, a.z * s, half.cos()))
}

/// Reflects `v` across the plane with unit normal `n`: v - 2(v·n)n.
pub fn mirror_vec(v: &Vec3, n: &Vec3) -> Result<Vec3> {
    if !n.is_unit() {
        return Err(Error::NonUnitNormal { norm: n.norm() });
    }
    let d = 2.0 * v.dot(n);
    Ok(v.sub(&n.scale(d)))
}

/// The shortest-arc rotation carrying unit vector `v_from` onto `v_to`:
/// vector part v_from × v_to, scalar part 1 + v_from·v_to, normalized to
/// unit so downstream rotations stay isometric.
///
/// Antipodal inputs degenerate that form to the zero quaternion, so they
/// take an explicit branch: a 180-degree rotation about a deterministic
/// axis orthogonal to `v_from` (Gram-Schmidt of x-hat against `v_from`,
/// falling back to y-hat when `v_from` is parallel to x-hat).
pub fn transition_quat(v_from: &Vec3, v_to: &Vec3) -> Result<Quaternion> {
    if !v_from.is_unit() || !v_to.is_unit() {
        return Err(Error::InvalidParameter(
            "transition_quat expects unit input vectors".into(),
        ));
    }
    let d = v_from.dot(v_to);
    if d <= -1.0 + 1e-9 {
        let axis = orthogonal_axis(v_from);
        return axis_angle_quat(&axis, std::f64::consts::PI);
    }
    let c = v_from.cross(v_to);
    Quaternion::new(c.x, c.y, c.z, 1.0 + d).normalized()
}

/// Deterministic unit vector orthogonal to unit `v`.
fn orthogonal_axis(v: &Vec3) -> Vec3 {
    let candidate = Vec3::X.sub(&v.scale(Vec3::X.dot(v)));
    if candidate.norm() > 1e-6 {
        candidate.normalized().expect("non-zero by construction")
    } else {
        let fallback = Vec3::Y.sub(&v.scale(Vec3::Y.dot(v)));
        fallback.normalized().expect("v cannot align with both axes")
    }
}
