//! Fused 3D feature volume with a TSDF channel, trilinear sampling, and
//! surface extraction for surface-restricted distillation.

mod io;
mod marching;
mod mc_tables;

pub use marching::{marching_cubes, sample_triangles, Triangle};

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::unproject_pixel;
use crate::keyframe::KeyframeRecord;
use crate::scene::SceneBounds;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("point {0:?} lies outside the volume")]
    OutOfVolume([f64; 3]),
    #[error("TSDF has no zero crossing")]
    NoSurface,
    #[error("invalid volume: {0}")]
    Invalid(String),
    #[error("feature dimension {got} does not match volume dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("volume I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt volume file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VolumeConfig {
    pub voxel_size: f64,
    /// Truncation band as a multiple of the voxel size.
    pub truncation_factor: f64,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.04,
            truncation_factor: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    /// Feature cells that received an observation.
    pub updated_cells: usize,
    /// Pixels whose back-projection fell outside the volume.
    pub out_of_bounds: usize,
    pub tsdf_voxels: usize,
}

/// Points on the extracted surface with their target features, one column
/// per point.
#[derive(Debug, Clone)]
pub struct SurfaceSamples {
    pub points: Vec<Vector3<f64>>,
    pub features: DMatrix<f64>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Dense voxel grid. Cell `(x, y, z)` has its center at
/// `origin + (idx + 0.5) · voxel_size`; storage is x-fastest.
///
/// Features hold the running mean of raw observations; readers renormalize.
/// Feature storage is allocated per cell on first observation, so memory
/// follows the observed surface rather than the full grid.
const NO_SLOT: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub dim: usize,
    pub truncation: f64,
    /// Pool offset (in units of `dim`) per cell; `NO_SLOT` when unallocated.
    slots: Vec<u32>,
    pool: Vec<f64>,
    zeros: Vec<f64>,
    pub(crate) weights: Vec<f64>,
    pub(crate) tsdf: Vec<f64>,
    pub(crate) tsdf_weights: Vec<f64>,
}

impl FeatureVolume {
    pub fn new(origin: Vector3<f64>, dims: [usize; 3], voxel_size: f64, dim: usize, truncation: f64) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d < 2) {
            return Err(VolumeError::Invalid(format!("dims {dims:?} must be ≥ 2 per axis")));
        }
        if !(voxel_size > 0.0) || !(truncation > 0.0) || dim == 0 {
            return Err(VolumeError::Invalid("voxel size, truncation and feature dim must be positive".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            dim,
            truncation,
            slots: vec![NO_SLOT; n],
            pool: Vec::new(),
            zeros: vec![0.0; dim],
            weights: vec![0.0; n],
            tsdf: vec![truncation; n],
            tsdf_weights: vec![0.0; n],
        })
    }

    /// Volume covering `bounds` at the configured resolution.
    pub fn for_bounds(bounds: &SceneBounds, config: &VolumeConfig, dim: usize) -> Result<Self, VolumeError> {
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|a| ((ext[a] / config.voxel_size).ceil() as usize).max(2));
        Self::new(
            bounds.min(),
            dims,
            config.voxel_size,
            dim,
            config.voxel_size * config.truncation_factor,
        )
    }

    pub fn cell_count(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Inverse of [`Self::index`].
    pub fn unindex(&self, i: usize) -> (usize, usize, usize) {
        let [dx, dy, _] = self.dims;
        (i % dx, (i / dx) % dy, i / (dx * dy))
    }

    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        self.origin + Vector3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.voxel_size
    }

    /// Cell containing `p`, if inside.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let g = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(g >= 0.0 && g < self.dims[a] as f64) {
                return None;
            }
            c[a] = g as usize;
        }
        Some(c)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| {
            p[a] >= self.origin[a] && p[a] <= self.origin[a] + self.dims[a] as f64 * self.voxel_size
        })
    }

    pub fn weight(&self, x: usize, y: usize, z: usize) -> f64 {
        self.weights[self.index(x, y, z)]
    }

    /// Stored (unnormalized) running mean.
    pub fn raw_feature(&self, x: usize, y: usize, z: usize) -> &[f64] {
        match self.slots[self.index(x, y, z)] {
            NO_SLOT => &self.zeros,
            s => &self.pool[s as usize * self.dim..(s as usize + 1) * self.dim],
        }
    }

    /// Unit-length feature of an observed cell.
    pub fn cell_feature(&self, x: usize, y: usize, z: usize) -> Option<DVector<f64>> {
        if self.weight(x, y, z) <= 0.0 {
            return None;
        }
        let v = DVector::from_column_slice(self.raw_feature(x, y, z));
        let n = v.norm();
        (n > 0.0).then(|| v / n)
    }

    /// Overwrites one cell's stored value and weight.
    pub fn set_cell(&mut self, x: usize, y: usize, z: usize, feature: &[f64], weight: f64) {
        let i = self.index(x, y, z);
        self.slot_mut(i).copy_from_slice(feature);
        self.weights[i] = weight;
    }

    fn slot_mut(&mut self, i: usize) -> &mut [f64] {
        if self.slots[i] == NO_SLOT {
            self.slots[i] = (self.pool.len() / self.dim) as u32;
            self.pool.resize(self.pool.len() + self.dim, 0.0);
        }
        let s = self.slots[i] as usize;
        &mut self.pool[s * self.dim..(s + 1) * self.dim]
    }

    /// Number of cells with allocated feature storage.
    pub fn allocated_cells(&self) -> usize {
        self.pool.len() / self.dim
    }

    /// Weighted running-mean update of one cell.
    pub fn fuse_observation(&mut self, cell: [usize; 3], f: &[f64]) -> Result<(), VolumeError> {
        if f.len() != self.dim {
            return Err(VolumeError::DimensionMismatch {
                expected: self.dim,
                got: f.len(),
            });
        }
        let i = self.index(cell[0], cell[1], cell[2]);
        let w = self.weights[i];
        for (v, o) in self.slot_mut(i).iter_mut().zip(f) {
            *v = (w * *v + o) / (w + 1.0);
        }
        self.weights[i] = w + 1.0;
        Ok(())
    }

    /// Fuses one feature per valid-depth pixel and integrates the TSDF.
    pub fn integrate_keyframe(&mut self, kf: &KeyframeRecord) -> Result<IntegrationStats, VolumeError> {
        kf.validate().map_err(|e| VolumeError::Invalid(e.to_string()))?;
        if kf.feature_map.dim != self.dim {
            return Err(VolumeError::DimensionMismatch {
                expected: self.dim,
                got: kf.feature_map.dim,
            });
        }
        let (w, h) = (kf.width(), kf.height());
        let mut stats = IntegrationStats::default();
        let mut touched = std::collections::HashSet::new();
        for y in 0..h {
            for x in 0..w {
                let Some(d) = kf.valid_depth(x, y) else { continue };
                let u = Vector2::new(x as f64, y as f64);
                let Ok(p) = unproject_pixel(&u, d, &kf.pose, &kf.intrinsics) else {
                    continue;
                };
                let Some(cell) = self.cell_of(&p) else {
                    stats.out_of_bounds += 1;
                    continue;
                };
                let Some(f) = kf.feature_map.sample(x as f64, y as f64, w, h) else {
                    continue;
                };
                self.fuse_observation(cell, f.as_slice())?;
                touched.insert(cell);
            }
        }
        stats.updated_cells = touched.len();
        stats.tsdf_voxels = self.integrate_tsdf(kf);
        Ok(stats)
    }

    /// Projective TSDF update of every voxel in front of the camera; returns
    /// the number of voxels updated.
    fn integrate_tsdf(&mut self, kf: &KeyframeRecord) -> usize {
        let [dx, dy, _] = self.dims;
        let slice = dx * dy;
        let trunc = self.truncation;
        let origin = self.origin;
        let vs = self.voxel_size;
        let k = &kf.intrinsics;
        let pose = &kf.pose;
        self.tsdf
            .par_chunks_mut(slice)
            .zip(self.tsdf_weights.par_chunks_mut(slice))
            .enumerate()
            .map(|(z, (ts, tw))| {
                let mut count = 0;
                for y in 0..dy {
                    for x in 0..dx {
                        let c = origin + Vector3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * vs;
                        let pc = pose.inverse_transform_point(&c);
                        if pc.z <= 0.01 {
                            continue;
                        }
                        let u = k.fx * pc.x / pc.z + k.cx;
                        let v = k.fy * pc.y / pc.z + k.cy;
                        let (ui, vi) = (u.round(), v.round());
                        if ui < 0.0 || vi < 0.0 || ui >= k.width as f64 || vi >= k.height as f64 {
                            continue;
                        }
                        let Some(d) = kf.valid_depth(ui as usize, vi as usize) else { continue };
                        let sdf = d - pc.z;
                        if sdf < -trunc {
                            continue;
                        }
                        let val = sdf.min(trunc);
                        let i = x + dx * y;
                        ts[i] = (tw[i] * ts[i] + val) / (tw[i] + 1.0);
                        tw[i] += 1.0;
                        count += 1;
                    }
                }
                count
            })
            .sum()
    }

    /// Sets the TSDF from a signed-distance function (clamped to the band),
    /// marking every voxel observed.
    pub fn fill_tsdf(&mut self, sdf: impl Fn(&Vector3<f64>) -> f64) {
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let i = self.index(x, y, z);
                    let v = sdf(&self.cell_center(x, y, z));
                    self.tsdf[i] = v.clamp(-self.truncation, self.truncation);
                    self.tsdf_weights[i] = 1.0;
                }
            }
        }
    }

    pub fn tsdf_at(&self, x: usize, y: usize, z: usize) -> Option<f64> {
        let i = self.index(x, y, z);
        (self.tsdf_weights[i] > 0.0).then(|| self.tsdf[i])
    }

    /// Base cell and fractional offsets of `p` relative to cell centers.
    fn lattice(&self, p: &Vector3<f64>) -> Result<([usize; 3], [f64; 3]), VolumeError> {
        if !self.contains(p) {
            return Err(VolumeError::OutOfVolume((*p).into()));
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let mut g = ((p[a] - self.origin[a]) / self.voxel_size - 0.5).clamp(0.0, (self.dims[a] - 1) as f64);
            // Snap round-off so cell centers hit their node exactly.
            if (g - g.round()).abs() < 1e-9 {
                g = g.round();
            }
            let b = (g.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = g - b as f64;
        }
        Ok((base, frac))
    }

    fn corners(base: [usize; 3], frac: [f64; 3]) -> impl Iterator<Item = ([usize; 3], f64)> {
        (0..8usize).map(move |c| {
            let mut idx = base;
            let mut w = 1.0;
            for a in 0..3 {
                if (c >> a) & 1 == 1 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            (idx, w)
        })
    }

    /// Trilinear interpolation of the stored values over observed cells,
    /// weights renormalized; `None` when all eight are unobserved.
    pub fn sample_raw(&self, p: &Vector3<f64>) -> Result<Option<DVector<f64>>, VolumeError> {
        let (base, frac) = self.lattice(p)?;
        let mut acc = DVector::zeros(self.dim);
        let mut wsum = 0.0;
        for (c, w) in Self::corners(base, frac) {
            if w == 0.0 || self.weight(c[0], c[1], c[2]) <= 0.0 {
                continue;
            }
            acc.iter_mut()
                .zip(self.raw_feature(c[0], c[1], c[2]))
                .for_each(|(a, v)| *a += w * v);
            wsum += w;
        }
        Ok((wsum > 0.0).then(|| acc / wsum))
    }

    /// Unit-length interpolated feature; `None` for an empty neighbourhood.
    pub fn sample_feature(&self, p: &Vector3<f64>) -> Result<Option<DVector<f64>>, VolumeError> {
        Ok(self.sample_raw(p)?.and_then(|v| {
            let n = v.norm();
            (n > 1e-12).then(|| v / n)
        }))
    }

    pub fn sample_tsdf(&self, p: &Vector3<f64>) -> Result<Option<f64>, VolumeError> {
        let (base, frac) = self.lattice(p)?;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (c, w) in Self::corners(base, frac) {
            if w == 0.0 {
                continue;
            }
            if let Some(v) = self.tsdf_at(c[0], c[1], c[2]) {
                acc += w * v;
                wsum += w;
            }
        }
        Ok((wsum > 0.0).then(|| acc / wsum))
    }

    /// Isosurface of the TSDF at level 0.
    pub fn surface_mesh(&self) -> Vec<Triangle> {
        marching_cubes(self.dims, self.truncation, |x, y, z| self.tsdf_at(x, y, z), |x, y, z| {
            self.cell_center(x, y, z)
        })
    }

    /// Area-weighted samples on the isosurface with their fused features.
    /// Samples with an empty feature neighbourhood, or whose interpolated
    /// TSDF exceeds one voxel, are dropped.
    pub fn extract_surface(&self, n_samples: usize, rng: &mut impl Rng) -> Result<SurfaceSamples, VolumeError> {
        let mesh = self.surface_mesh();
        if mesh.is_empty() {
            return Err(VolumeError::NoSurface);
        }
        let mut points = Vec::with_capacity(n_samples);
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n_samples);
        for (p, _) in sample_triangles(&mesh, n_samples, rng) {
            let Ok(Some(f)) = self.sample_feature(&p) else { continue };
            match self.sample_tsdf(&p) {
                Ok(Some(t)) if t.abs() < self.voxel_size => {}
                _ => continue,
            }
            points.push(p);
            cols.push(f);
        }
        let features = if cols.is_empty() {
            DMatrix::zeros(self.dim, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Ok(SurfaceSamples { points, features })
    }
}
