//! Rigid poses, pinhole cameras and the projection primitives shared by every
//! other module.
//!
//! Conventions used throughout the crate:
//!
//! * [`Pose`] is always **world-from-camera**: `rotation` maps camera-frame
//!   directions to world-frame directions and `translation` is the camera
//!   center expressed in world coordinates. `p_world = R * p_cam + t`.
//! * Camera frame is x right, y down, z forward (OpenCV).
//! * Pixel coordinates put the center of pixel `(col, row)` at `(col, row)`.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera-frame depth below which a point is considered behind the camera.
pub const MIN_PROJECT_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth {0}: must be finite and positive")]
    InvalidDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// A rigid SE(3) transform, world-from-camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a camera at `eye` looking toward `target`, with image "up"
    /// (negative camera y) as close as possible to `up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            x = z.cross(&Vector3::new(1.0, 0.0, 0.0));
            if x.norm() < 1e-9 {
                x = z.cross(&Vector3::new(0.0, 1.0, 0.0));
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        Self::new(rotation, eye)
    }

    /// Parses a 4×4 homogeneous world-from-camera matrix. The rotation block
    /// is re-orthonormalized.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-3 {
            return Err(GeometryError::InvalidPose(format!(
                "rotation block determinant {det} is not 1"
            )));
        }
        let rotation = UnitQuaternion::from_matrix(&r);
        let translation = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        Ok(Self::new(rotation, translation))
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m[(0, 3)] = self.translation.x;
        m[(1, 3)] = self.translation.y;
        m[(2, 3)] = self.translation.z;
        m
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Camera frame → world frame.
    pub fn transform_point(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    /// World frame → camera frame.
    pub fn inverse_transform_point(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p_world - self.translation)
    }
}

/// Pinhole intrinsics. Image size is in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Same field of view at a different resolution.
    pub fn scaled_to(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Unit-depth ray direction (x/z, y/z, 1) for pixel `u`.
    pub fn ray(&self, u: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, u: &Vector2<f64>) -> bool {
        u.x >= -0.5
            && u.y >= -0.5
            && u.x < self.width as f64 - 0.5
            && u.y < self.height as f64 - 0.5
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Rotation matrix of a (not necessarily normalized) quaternion stored as
/// `[w, x, y, z]`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    uq.to_rotation_matrix().into_inner()
}

/// Normalizes a `[w, x, y, z]` quaternion in place; a degenerate quaternion
/// resets to identity.
pub fn normalize_quat(q: &mut [f64; 4]) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < 1e-12 || !n.is_finite() {
        *q = [1.0, 0.0, 0.0, 0.0];
    } else {
        for c in q.iter_mut() {
            *c /= n;
        }
    }
}

/// `R · S · Sᵀ · Rᵀ` for activated scale `s` and rotation `q` (`[w,x,y,z]`).
pub fn compose_covariance(scale: &Vector3<f64>, q: &[f64; 4]) -> Matrix3<f64> {
    let r = quat_to_matrix(q);
    let m = r * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// World point → (pixel, camera-frame depth).
pub fn project_point(
    p_world: &Vector3<f64>,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    let pc = pose.inverse_transform_point(p_world);
    if pc.z <= MIN_PROJECT_DEPTH {
        return Err(GeometryError::BehindCamera { z: pc.z });
    }
    let u = Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
    Ok((u, pc.z))
}

/// Pixel + camera-frame depth → world point.
pub fn unproject_pixel(
    u: &Vector2<f64>,
    depth: f64,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    Ok(pose.transform_point(&(k.ray(u) * depth)))
}

/// Translation error in centimetres and rotation error in degrees.
pub fn pose_errors(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let dt = (estimate.translation - truth.translation).norm() * 100.0;
    let r = truth.rotation_matrix();
    let r_hat = estimate.rotation_matrix();
    let a = r.transpose() * r_hat;
    // atan2 form stays accurate for tiny angles, unlike acos of the trace.
    let sin = Vector3::new(a[(2, 1)] - a[(1, 2)], a[(0, 2)] - a[(2, 0)], a[(1, 0)] - a[(0, 1)]).norm() / 2.0;
    let cos = (a.trace() - 1.0) / 2.0;
    (dt, sin.atan2(cos).to_degrees())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}
