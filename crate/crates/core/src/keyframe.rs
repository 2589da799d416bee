//! Posed RGB-D keyframes with their precomputed 2D feature and score maps.

use nalgebra::DVector;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Pose};
use crate::maps::{ColorMap, ScalarMap};

/// Depth readings above this are treated as invalid (meters).
pub const MAX_DEPTH: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyframeError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{0} map is {1}x{2}, expected {3}x{4}")]
    ShapeMismatch(&'static str, usize, usize, usize, usize),
    #[error("feature map has zero descriptor dimension")]
    EmptyFeatures,
}

/// Coarse grid of descriptors, row-major with the descriptor innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize) -> Self {
        Self {
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
        }
    }

    pub fn cell(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn cell_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.dim;
        &mut self.data[i..i + self.dim]
    }

    /// Unit descriptor at full-resolution pixel `(u, v)` of an image of
    /// `image_w × image_h`, bilinear over the coarse grid with edge clamping.
    /// `None` if the interpolated vector vanishes.
    pub fn sample(&self, u: f64, v: f64, image_w: usize, image_h: usize) -> Option<DVector<f64>> {
        let sx = image_w as f64 / self.width as f64;
        let sy = image_h as f64 / self.height as f64;
        let fx = ((u + 0.5) / sx - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = ((v + 0.5) / sy - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = (fx.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (fy.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let mut out = DVector::<f64>::zeros(self.dim);
        for (x, y, w) in [
            (x0, y0, (1.0 - ax) * (1.0 - ay)),
            (x1, y0, ax * (1.0 - ay)),
            (x0, y1, (1.0 - ax) * ay),
            (x1, y1, ax * ay),
        ] {
            if w == 0.0 {
                continue;
            }
            for (o, &c) in out.iter_mut().zip(self.cell(x, y)) {
                *o += w * c as f64;
            }
        }
        let n = out.norm();
        (n > 1e-12).then(|| out / n)
    }
}

#[derive(Debug, Clone)]
pub struct KeyframeRecord {
    pub color: ColorMap,
    /// Meters, 0 = invalid.
    pub depth: ScalarMap,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub feature_map: FeatureMap,
    /// 2D keypoint score in [0, 1], full resolution.
    pub score_map: ScalarMap,
}

impl KeyframeRecord {
    pub fn validate(&self) -> Result<(), KeyframeError> {
        self.intrinsics.validate()?;
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        for (name, mw, mh) in [
            ("color", self.color.width, self.color.height),
            ("depth", self.depth.width, self.depth.height),
            ("score", self.score_map.width, self.score_map.height),
        ] {
            if mw != w || mh != h {
                return Err(KeyframeError::ShapeMismatch(name, mw, mh, w, h));
            }
        }
        if self.feature_map.dim == 0 || self.feature_map.width == 0 || self.feature_map.height == 0 {
            return Err(KeyframeError::EmptyFeatures);
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Depth at `(x, y)` if within (0, MAX_DEPTH].
    pub fn valid_depth(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.depth.get(x, y);
        (d > 0.0 && d <= MAX_DEPTH && d.is_finite()).then_some(d)
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth
            .data
            .iter()
            .filter(|&&d| d > 0.0 && d <= MAX_DEPTH && d.is_finite())
            .count()
    }
}
