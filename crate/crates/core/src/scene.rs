//! The Gaussian map: primitives, bounds and the attached descriptor field.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::DescriptorField;
use crate::geometry::{compose_covariance, normalize_quat, sigmoid};

/// Activated scales are kept inside this open interval (meters).
pub const MIN_SCALE: f64 = 1e-7;
pub const MAX_SCALE: f64 = 10.0;
/// Primitive centers may leave the scene box by at most this margin (meters).
pub const BOUNDS_MARGIN: f64 = 1.0;
/// Highest supported spherical-harmonics degree.
pub const MAX_SH_DEGREE: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("primitive at {0:?} lies outside the scene bounds (+{BOUNDS_MARGIN} m margin)")]
    OutOfBounds([f64; 3]),
    #[error("spherical-harmonics degree {0} is not supported (max {MAX_SH_DEGREE})")]
    UnsupportedShDegree(u8),
    #[error("primitive carries {got} SH coefficients, scene expects {expected}")]
    ShMismatch { expected: usize, got: usize },
}

/// Axis-aligned scene box, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self {
            min: min.into(),
            max: max.into(),
        }
    }

    pub fn min(&self) -> Vector3<f64> {
        Vector3::from(self.min)
    }

    pub fn max(&self) -> Vector3<f64> {
        Vector3::from(self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max() - self.min()
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains_with_margin(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - margin && p[i] <= self.max[i] + margin)
    }

    pub fn clamp_with_margin(&self, p: &mut Vector3<f64>, margin: f64) {
        for i in 0..3 {
            p[i] = p[i].clamp(self.min[i] - margin, self.max[i] + margin);
        }
    }
}

/// Number of non-constant SH coefficients per channel for `degree`.
pub fn sh_rest_count(degree: u8) -> usize {
    let n = degree as usize + 1;
    n * n - 1
}

/// One anisotropic Gaussian. Scale is stored as log, opacity and landmark
/// probability as logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub mu: Vector3<f64>,
    /// `[w, x, y, z]`, unit norm between optimizer steps.
    pub q: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// Base RGB (the degree-0 term).
    pub color: Vector3<f64>,
    /// Higher-order SH coefficients, `sh_rest_count(degree)` RGB triples.
    pub sh_rest: Vec<[f64; 3]>,
    pub landmark_logit: f64,
    pub is_key: bool,
    /// 2D keypoint score at the spawning pixel (key primitives only).
    pub spawn_score: f64,
}

impl GaussianPrimitive {
    pub fn new(mu: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            mu,
            q: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.clamp(MIN_SCALE * 2.0, MAX_SCALE * 0.5).ln()),
            opacity_logit: crate::geometry::logit(opacity),
            color,
            sh_rest: Vec::new(),
            landmark_logit: 0.0,
            is_key: false,
            spawn_score: 0.0,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn landmark_probability(&self) -> f64 {
        sigmoid(self.landmark_logit)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        compose_covariance(&self.scale(), &self.q)
    }

    /// Restores the type invariants after a parameter update.
    pub fn sanitize(&mut self) {
        normalize_quat(&mut self.q);
        let lo = (MIN_SCALE * 1.0001).ln();
        let hi = (MAX_SCALE * 0.9999).ln();
        for v in self.log_scale.iter_mut() {
            *v = v.clamp(lo, hi);
        }
        // Keep σ and a strictly inside (0, 1) in f64.
        self.opacity_logit = self.opacity_logit.clamp(-30.0, 30.0);
        self.landmark_logit = self.landmark_logit.clamp(-30.0, 30.0);
        for c in self.color.iter_mut() {
            *c = c.clamp(0.0, 1.0);
        }
    }
}

/// The reconstructed map.
#[derive(Debug, Clone)]
pub struct SceneModel {
    primitives: Vec<GaussianPrimitive>,
    pub bounds: SceneBounds,
    sh_degree: u8,
    pub config_hash: u64,
    pub descriptor_field: Option<DescriptorField>,
    revision: u64,
}

impl SceneModel {
    pub fn new(bounds: SceneBounds, sh_degree: u8) -> Result<Self, SceneError> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(SceneError::UnsupportedShDegree(sh_degree));
        }
        Ok(Self {
            primitives: Vec::new(),
            bounds,
            sh_degree,
            config_hash: 0,
            descriptor_field: None,
            revision: 0,
        })
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn primitives(&self) -> &[GaussianPrimitive] {
        &self.primitives
    }

    /// Mutable access; bumps the revision so stale render states are
    /// detected.
    pub fn primitives_mut(&mut self) -> &mut Vec<GaussianPrimitive> {
        self.revision += 1;
        &mut self.primitives
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn push(&mut self, mut prim: GaussianPrimitive) -> Result<usize, SceneError> {
        if !self.bounds.contains_with_margin(&prim.mu, BOUNDS_MARGIN) {
            return Err(SceneError::OutOfBounds(prim.mu.into()));
        }
        let expected = sh_rest_count(self.sh_degree);
        if prim.sh_rest.is_empty() {
            prim.sh_rest = vec![[0.0; 3]; expected];
        } else if prim.sh_rest.len() != expected {
            return Err(SceneError::ShMismatch {
                expected,
                got: prim.sh_rest.len(),
            });
        }
        self.revision += 1;
        self.primitives.push(prim);
        Ok(self.primitives.len() - 1)
    }

    /// Drops every primitive for which `keep` is false; returns the number
    /// removed.
    pub fn retain(&mut self, mut keep: impl FnMut(&GaussianPrimitive) -> bool) -> usize {
        let before = self.primitives.len();
        self.primitives.retain(|p| keep(p));
        self.revision += 1;
        before - self.primitives.len()
    }

    pub fn key_indices(&self) -> Vec<usize> {
        self.primitives
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_key)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn mean_key_scale(&self) -> Option<f64> {
        let keys: Vec<f64> = self
            .primitives
            .iter()
            .filter(|p| p.is_key)
            .map(|p| p.scale().mean())
            .collect();
        (!keys.is_empty()).then(|| keys.iter().sum::<f64>() / keys.len() as f64)
    }

    /// Restores per-primitive invariants and clamps centers into the
    /// expanded bounds.
    pub fn sanitize(&mut self) {
        let bounds = self.bounds;
        for p in self.primitives_mut() {
            p.sanitize();
            bounds.clamp_with_margin(&mut p.mu, BOUNDS_MARGIN);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> SceneBounds {
        SceneBounds::new(Vector3::zeros(), Vector3::repeat(2.0))
    }

    #[test]
    fn push_enforces_margin_and_sh_layout() {
        let mut s = SceneModel::new(bounds(), 1).unwrap();
        let inside = GaussianPrimitive::new(Vector3::new(2.5, 1.0, -0.5), 0.01, 0.5, Vector3::repeat(0.5));
        let idx = s.push(inside).unwrap();
        assert_eq!(s.primitives()[idx].sh_rest.len(), 3);
        let outside = GaussianPrimitive::new(Vector3::new(3.5, 1.0, 1.0), 0.01, 0.5, Vector3::repeat(0.5));
        assert!(matches!(s.push(outside), Err(SceneError::OutOfBounds(_))));
        let mut wrong = GaussianPrimitive::new(Vector3::repeat(1.0), 0.01, 0.5, Vector3::zeros());
        wrong.sh_rest = vec![[0.0; 3]; 8];
        assert!(matches!(s.push(wrong), Err(SceneError::ShMismatch { .. })));
        assert!(SceneModel::new(bounds(), 4).is_err());
    }

    #[test]
    fn sanitize_restores_invariants() {
        let mut p = GaussianPrimitive::new(Vector3::zeros(), 0.01, 0.5, Vector3::new(1.5, -0.2, 0.3));
        p.q = [2.0, 0.0, 0.0, 0.0];
        p.log_scale = Vector3::new(-40.0, 0.0, 9.0);
        p.opacity_logit = 1e6;
        p.sanitize();
        assert!((p.q[0] - 1.0).abs() < 1e-15);
        let s = p.scale();
        assert!(s.iter().all(|&v| v > MIN_SCALE && v < MAX_SCALE));
        assert!(p.opacity() < 1.0 && p.opacity() > 0.0);
        assert_eq!(p.color, Vector3::new(1.0, 0.0, 0.3));
    }

    #[test]
    fn revision_tracks_mutation() {
        let mut s = SceneModel::new(bounds(), 0).unwrap();
        let r0 = s.revision();
        s.push(GaussianPrimitive::new(Vector3::repeat(1.0), 0.01, 0.5, Vector3::zeros()))
            .unwrap();
        assert!(s.revision() > r0);
        let r1 = s.revision();
        let _ = s.primitives();
        assert_eq!(s.revision(), r1);
        s.primitives_mut()[0].mu.x = 0.5;
        assert!(s.revision() > r1);
    }
}
