//! Tile-parallel CPU splatting of color, depth, landmark score and alpha,
//! with analytic gradients of any per-pixel loss with respect to primitive
//! parameters.
//!
//! Each primitive is projected by the affine (EWA) approximation
//! `Σ̃ = J W Σ Wᵀ Jᵀ`, sorted by camera-frame center depth and composited
//! front to back:
//!
//! ```text
//! α_i = min(0.99, σ_i · exp(-½ dᵀ Σ̃⁻¹ d))     d = pixel − μ̃_i
//! C   = Σ_i c_i α_i T_i                       T_i = Π_{j<i} (1 − α_j)
//! ```
//!
//! Depth (`d_i` = center depth) and landmark score (`a_i`) are blended with
//! the same weights. Traversal of a pixel stops once `T < 1e-4`.

mod raster;
pub mod sh;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{quat_to_matrix, sigmoid, CameraIntrinsics, GeometryError, Pose};
use crate::maps::{ColorMap, ScalarMap};
use crate::scene::{sh_rest_count, GaussianPrimitive};

pub use raster::{render, render_backward, render_with_state, ForwardState};

/// Tile edge length in pixels.
pub const TILE_SIZE: usize = 16;
/// Upper bound on a single fragment's opacity.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Pixel traversal stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Added to the diagonal of every projected covariance (px²).
pub const LOWPASS: f64 = 0.3;
/// Primitives whose center is closer than this to the image plane are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Extent of a splat's screen-space footprint, in standard deviations.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;
/// Fragments whose Gaussian exponent is below this contribute < 1e-8 and
/// are skipped.
pub(crate) const MIN_POWER: f64 = -18.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("forward state does not match the scene: {0}")]
    StateMismatch(String),
    #[error("gradient map shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A primitive after projection into one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    /// Pixel-space center μ̃.
    pub mu2d: Vector2<f64>,
    /// Screen covariance Σ̃ including the low-pass term (px²).
    pub cov2d: Matrix2<f64>,
    /// Σ̃⁻¹.
    pub conic: Matrix2<f64>,
    /// Camera-frame z of the center (meters).
    pub depth: f64,
    pub source_index: usize,
    /// View-dependent color (equals the base color at SH degree 0).
    pub color: Vector3<f64>,
    /// Activated opacity σ.
    pub opacity: f64,
    /// Activated landmark probability a.
    pub score: f64,
    /// Half-width of the screen footprint (px).
    pub radius: f64,
}

/// Intermediate quantities of the projection that the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct ProjectionParts {
    pub p_cam: Vector3<f64>,
    pub w: Matrix3<f64>,
    pub j: Matrix2x3<f64>,
    pub rot: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub cov3d: Matrix3<f64>,
    /// Unnormalized view vector μ − camera center.
    pub view: Vector3<f64>,
    /// Clamped x/z and y/z used by `j` when the center lies outside the
    /// guard band.
    pub clamped: [Option<f64>; 2],
}

/// Fraction of the image size by which the guard band extends past each
/// edge.
pub const GUARD_BAND: f64 = 0.15;

/// `t` clamped to the guard band of the axis with focal `f`, principal point
/// `c` and `size` pixels; `None` when inside.
fn guard_clamp(t: f64, f: f64, c: f64, size: usize) -> Option<f64> {
    let pad = GUARD_BAND * size as f64;
    let lo = (-0.5 - c - pad) / f;
    let hi = (size as f64 - 0.5 - c + pad) / f;
    (t < lo || t > hi).then(|| t.clamp(lo, hi))
}

pub(crate) fn projection_parts(
    prim: &GaussianPrimitive,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<ProjectionParts, GeometryError> {
    let w = pose.rotation_matrix().transpose();
    let p_cam = w * (prim.mu - pose.translation);
    if p_cam.z <= NEAR_PLANE {
        return Err(GeometryError::BehindCamera { z: p_cam.z });
    }
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    // Far off-axis centers close to the image plane would otherwise get
    // unbounded screen footprints; the Jacobian is evaluated at the nearest
    // guard-band direction instead.
    let clamped = [guard_clamp(x / z, k.fx, k.cx, k.width), guard_clamp(y / z, k.fy, k.cy, k.height)];
    let (tx, ty) = (clamped[0].unwrap_or(x / z), clamped[1].unwrap_or(y / z));
    let j = Matrix2x3::new(k.fx / z, 0.0, -k.fx * tx / z, 0.0, k.fy / z, -k.fy * ty / z);
    let rot = quat_to_matrix(&prim.q);
    let scale = prim.scale();
    let m = rot * Matrix3::from_diagonal(&scale);
    let cov3d = m * m.transpose();
    Ok(ProjectionParts {
        p_cam,
        w,
        j,
        rot,
        scale,
        cov3d,
        view: prim.mu - pose.translation,
        clamped,
    })
}

pub(crate) fn view_color(prim: &GaussianPrimitive, view: &Vector3<f64>, sh_degree: u8) -> Vector3<f64> {
    let n = sh_rest_count(sh_degree).min(prim.sh_rest.len());
    if n == 0 {
        return prim.color;
    }
    let norm = view.norm();
    if norm < 1e-12 {
        return prim.color;
    }
    let mut y = [0.0; 15];
    sh::basis(&(view / norm), n, &mut y);
    let mut c = prim.color;
    for (coeff, b) in prim.sh_rest.iter().zip(&y[..n]) {
        c += Vector3::from(*coeff) * *b;
    }
    c
}

/// Projects one primitive with the default (degree-0) color model.
pub fn project_gaussian(
    prim: &GaussianPrimitive,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<ProjectedGaussian, RenderError> {
    project_with_degree(prim, 0, pose, k)
}

pub(crate) fn project_with_degree(
    prim: &GaussianPrimitive,
    sh_degree: u8,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<ProjectedGaussian, RenderError> {
    let parts = projection_parts(prim, pose, k)?;
    let t = parts.j * parts.w;
    let mut cov2d = t * parts.cov3d * t.transpose();
    cov2d[(0, 0)] += LOWPASS;
    cov2d[(1, 1)] += LOWPASS;
    // Symmetrize against round-off so the conic is exactly symmetric.
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    let det = cov2d.determinant();
    let conic = Matrix2::new(cov2d[(1, 1)], -off, -off, cov2d[(0, 0)]) / det;
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let (x, y, z) = (parts.p_cam.x, parts.p_cam.y, parts.p_cam.z);
    Ok(ProjectedGaussian {
        mu2d: Vector2::new(k.fx * x / z + k.cx, k.fy * y / z + k.cy),
        cov2d,
        conic,
        depth: z,
        source_index: 0,
        color: view_color(prim, &parts.view, sh_degree),
        opacity: prim.opacity(),
        score: sigmoid(prim.landmark_logit),
        radius: (FOOTPRINT_SIGMAS * lambda_max.sqrt()).ceil(),
    })
}

/// Blended output of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMaps {
    pub color: ColorMap,
    pub depth: ScalarMap,
    pub score: ScalarMap,
    pub alpha: ScalarMap,
}

impl RenderedMaps {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: ColorMap::new(width, height),
            depth: ScalarMap::new(width, height),
            score: ScalarMap::new(width, height),
            alpha: ScalarMap::new(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }
}

/// ∂L/∂(rendered map) for each output channel. Channels the loss does not
/// touch stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGradients {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, `3·W·H`.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub score: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl MapGradients {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            score: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }

    fn check(&self) -> Result<(), RenderError> {
        let n = self.width * self.height;
        if self.color.len() != 3 * n || self.depth.len() != n || self.score.len() != n || self.alpha.len() != n {
            return Err(RenderError::ShapeMismatch(format!(
                "buffers do not match {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Per-primitive parameter gradients, indexed like `SceneModel::primitives`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveGradients {
    pub mu: Vec<Vector3<f64>>,
    pub q: Vec<[f64; 4]>,
    pub log_scale: Vec<Vector3<f64>>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
    /// `sh_rest_count(degree)` RGB triples per primitive, flattened.
    pub sh_rest: Vec<[f64; 3]>,
    pub landmark_logit: Vec<f64>,
}

impl PrimitiveGradients {
    pub fn zeros(n: usize, sh_degree: u8) -> Self {
        Self {
            mu: vec![Vector3::zeros(); n],
            q: vec![[0.0; 4]; n],
            log_scale: vec![Vector3::zeros(); n],
            opacity_logit: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
            sh_rest: vec![[0.0; 3]; n * sh_rest_count(sh_degree)],
            landmark_logit: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `self += other · weight`.
    pub fn add_scaled(&mut self, other: &PrimitiveGradients, weight: f64) {
        for (a, b) in self.mu.iter_mut().zip(&other.mu) {
            *a += b * weight;
        }
        for (a, b) in self.q.iter_mut().zip(&other.q) {
            for c in 0..4 {
                a[c] += b[c] * weight;
            }
        }
        for (a, b) in self.log_scale.iter_mut().zip(&other.log_scale) {
            *a += b * weight;
        }
        for (a, b) in self.opacity_logit.iter_mut().zip(&other.opacity_logit) {
            *a += b * weight;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += b * weight;
        }
        for (a, b) in self.sh_rest.iter_mut().zip(&other.sh_rest) {
            for c in 0..3 {
                a[c] += b[c] * weight;
            }
        }
        for (a, b) in self.landmark_logit.iter_mut().zip(&other.landmark_logit) {
            *a += b * weight;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.q.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.log_scale.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.opacity_logit.iter().all(|c| c.is_finite())
            && self.color.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.sh_rest.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.landmark_logit.iter().all(|c| c.is_finite())
    }
}

/// Options of the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BackwardOptions {
    /// Zero the center gradient of key primitives.
    pub freeze_key_centers: bool,
}
