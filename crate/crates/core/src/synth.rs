//! Procedural RGB-D scenes with ground-truth geometry and descriptors: a
//! closed room with boxes and spheres, dark feature dots that serve as
//! keypoints, and a smooth random descriptor field over space.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::*;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::keyframe::{FeatureMap, KeyframeRecord};
use crate::localize::{thumbnail, Keypoint, QueryObservation};
use crate::maps::{ColorMap, ScalarMap};
use crate::spatial::PointGrid;

/// Score-map value at the edge of a dot's key region.
pub const DOT_EDGE_SCORE: f64 = 0.004;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Room extents (x, y, z); floor at z = 0, centered in x and y.
    pub room: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub train_frames: usize,
    pub query_frames: usize,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    pub dots: usize,
    /// Radius around a dot center inside which the score map exceeds the
    /// default key threshold.
    pub dot_radius: f64,
    pub descriptor_dim: usize,
    pub fourier_features: usize,
    /// Spatial wavelength of the descriptor field (meters).
    pub descriptor_wavelength: f64,
    /// Feature maps are stored at 1/`feature_downsample` resolution.
    pub feature_downsample: usize,
    /// Std-dev of per-component Gaussian noise on query descriptors, in units
    /// of 1/√D before renormalization.
    pub descriptor_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            room: [4.4, 4.0, 2.6],
            width: 160,
            height: 120,
            focal: 130.0,
            train_frames: 50,
            query_frames: 20,
            orbit_radius: 1.5,
            orbit_height: 1.3,
            dots: 2500,
            dot_radius: 0.015,
            descriptor_dim: 256,
            fourier_features: 128,
            descriptor_wavelength: 0.5,
            feature_downsample: 2,
            descriptor_noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            self.width as f64 / 2.0 - 0.5,
            self.height as f64 / 2.0 - 0.5,
            self.width,
            self.height,
        )
        .expect("synthetic intrinsics")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Closed box viewed from inside.
    Room { min: Vector3<f64>, max: Vector3<f64> },
    Cuboid { min: Vector3<f64>, max: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Shape {
    /// Signed distance, positive in free space.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Room { min, max } => {
                let mut d = f64::INFINITY;
                for a in 0..3 {
                    d = d.min(p[a] - min[a]).min(max[a] - p[a]);
                }
                if d >= 0.0 {
                    d
                } else {
                    // Outside the room: distance to the box, negated.
                    -box_distance(p, &min, &max)
                }
            }
            Shape::Cuboid { min, max } => {
                let c = (min + max) / 2.0;
                let h = (max - min) / 2.0;
                let q = (p - c).abs() - h;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
        }
    }

    /// Smallest ray parameter `t > eps` where `o + t·d` meets the surface.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            Shape::Room { min, max } => {
                // Inside a box the exit point is the nearest positive plane hit.
                let mut t = f64::INFINITY;
                for a in 0..3 {
                    if d[a] > 0.0 {
                        t = t.min((max[a] - o[a]) / d[a]);
                    } else if d[a] < 0.0 {
                        t = t.min((min[a] - o[a]) / d[a]);
                    }
                }
                (t.is_finite() && t > EPS).then_some(t)
            }
            Shape::Cuboid { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a].abs() < 1e-300 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.norm_squared();
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                // Numerically stable pair of roots.
                let sgn = if b >= 0.0 { 1.0 } else { -1.0 };
                let q = -(b + sgn * s);
                let (r1, r2) = if q != 0.0 { (q / a, c / q) } else { (-b / a, -b / a) };
                let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
                if lo > EPS {
                    Some(lo)
                } else if hi > EPS {
                    Some(hi)
                } else {
                    None
                }
            }
        }
    }
}

fn box_distance(p: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> f64 {
    let q = Vector3::new(
        (min.x - p.x).max(p.x - max.x).max(0.0),
        (min.y - p.y).max(p.y - max.y).max(0.0),
        (min.z - p.z).max(p.z - max.z).max(0.0),
    );
    q.norm()
}

/// Band-limited random descriptor field: unit-normalized random Fourier
/// features of position.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierField {
    omegas: Vec<Vector3<f64>>,
    phases: Vec<f64>,
    /// D × K mixing matrix.
    mix: DMatrix<f64>,
}

impl FourierField {
    pub fn new(dim: usize, features: usize, wavelength: f64, rng: &mut impl Rng) -> Self {
        let k = 2.0 * std::f64::consts::PI / wavelength;
        let omegas = (0..features)
            .map(|_| {
                let v = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                v.normalize() * k
            })
            .collect();
        let phases = (0..features).map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI)).collect();
        let mix = DMatrix::from_fn(dim, features, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self { omegas, phases, mix }
    }

    pub fn dim(&self) -> usize {
        self.mix.nrows()
    }

    pub fn eval(&self, p: &Vector3<f64>) -> DVector<f64> {
        let c = DVector::from_iterator(
            self.omegas.len(),
            self.omegas.iter().zip(&self.phases).map(|(w, ph)| (w.dot(p) + ph).cos()),
        );
        let v = &self.mix * c;
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            let mut e = DVector::zeros(self.dim());
            e[0] = 1.0;
            e
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub shape: usize,
}

/// Per-pixel maps of one synthetic view.
#[derive(Debug, Clone)]
pub struct SyntheticView {
    pub color: ColorMap,
    pub depth: ScalarMap,
    pub score: ScalarMap,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SynthConfig,
    pub shapes: Vec<Shape>,
    pub dots: Vec<Vector3<f64>>,
    pub field: FourierField,
    dot_grid: PointGrid,
    base_colors: Vec<Vector3<f64>>,
}

impl SyntheticWorld {
    /// Default room layout with objects clustered in the middle.
    pub fn new(config: &SynthConfig) -> Self {
        let [rx, ry, rz] = config.room;
        let shapes = vec![
            Shape::Room {
                min: Vector3::new(-rx / 2.0, -ry / 2.0, 0.0),
                max: Vector3::new(rx / 2.0, ry / 2.0, rz),
            },
            Shape::Cuboid {
                min: Vector3::new(-0.55, -0.25, 0.0),
                max: Vector3::new(-0.1, 0.25, 0.5),
            },
            Shape::Cuboid {
                min: Vector3::new(0.15, 0.1, 0.0),
                max: Vector3::new(0.6, 0.55, 0.3),
            },
            Shape::Sphere {
                center: Vector3::new(0.35, -0.35, 0.25),
                radius: 0.25,
            },
            Shape::Sphere {
                center: Vector3::new(-0.3, 0.6, 0.2),
                radius: 0.2,
            },
        ];
        Self::with_shapes(config, shapes)
    }

    pub fn with_shapes(config: &SynthConfig, shapes: Vec<Shape>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let field = FourierField::new(
            config.descriptor_dim,
            config.fourier_features,
            config.descriptor_wavelength,
            &mut rng,
        );
        let palette = [
            Vector3::new(0.85, 0.8, 0.7),
            Vector3::new(0.8, 0.35, 0.3),
            Vector3::new(0.3, 0.55, 0.8),
            Vector3::new(0.4, 0.75, 0.35),
            Vector3::new(0.85, 0.7, 0.25),
        ];
        let base_colors = (0..shapes.len()).map(|i| palette[i % palette.len()]).collect();
        let mut world = Self {
            config: config.clone(),
            shapes,
            dots: Vec::new(),
            field,
            dot_grid: PointGrid::new(config.dot_radius.max(1e-3) * 4.0),
            base_colors,
        };
        world.dots = world.sample_dots(config.dots, &mut rng);
        world.dot_grid = PointGrid::from_points(config.dot_radius.max(1e-3) * 4.0, &world.dots);
        world
    }

    /// Free-space signed distance of the whole scene.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        self.shapes.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, s) in self.shapes.iter().enumerate() {
            if let Some(t) = s.intersect(o, d) {
                if best.map_or(true, |b| t < b.t) {
                    best = Some(Hit {
                        t,
                        point: o + d * t,
                        shape: i,
                    });
                }
            }
        }
        best
    }

    /// Uniform-by-area samples on exposed surfaces.
    fn sample_dots(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        enum Patch {
            Rect(Vector3<f64>, Vector3<f64>, Vector3<f64>),
            Ball(Vector3<f64>, f64),
        }
        let mut patches = Vec::new();
        for s in &self.shapes {
            match *s {
                Shape::Room { min, max } | Shape::Cuboid { min, max } => {
                    let e = max - min;
                    for a in 0..3 {
                        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                        let mut u = Vector3::zeros();
                        u[b] = e[b];
                        let mut v = Vector3::zeros();
                        v[c] = e[c];
                        let mut hi = min;
                        hi[a] = max[a];
                        patches.push(Patch::Rect(min, u, v));
                        patches.push(Patch::Rect(hi, u, v));
                    }
                }
                Shape::Sphere { center, radius } => patches.push(Patch::Ball(center, radius)),
            }
        }
        let areas: Vec<f64> = patches
            .iter()
            .map(|p| match p {
                Patch::Rect(_, u, v) => u.norm() * v.norm(),
                Patch::Ball(_, r) => 4.0 * std::f64::consts::PI * r * r,
            })
            .collect();
        let total: f64 = areas.iter().sum();
        let mut dots = Vec::with_capacity(n);
        let mut attempts = 0;
        while dots.len() < n && attempts < n * 200 {
            attempts += 1;
            let mut pick = rng.gen_range(0.0..total);
            let mut idx = 0;
            while idx + 1 < areas.len() && pick >= areas[idx] {
                pick -= areas[idx];
                idx += 1;
            }
            let p = match &patches[idx] {
                Patch::Rect(o, u, v) => o + u * rng.gen_range(0.0..1.0) + v * rng.gen_range(0.0..1.0),
                Patch::Ball(c, r) => {
                    let d = Vector3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    );
                    c + d.normalize() * *r
                }
            };
            // Reject points buried inside other geometry or at the frame edges
            // of a face where two surfaces meet.
            if self.sdf(&p) < -1e-9 {
                continue;
            }
            let near_other = self
                .shapes
                .iter()
                .filter(|s| s.sdf(&p).abs() > 1e-9)
                .any(|s| s.sdf(&p) < 2.0 * self.config.dot_radius);
            if near_other {
                continue;
            }
            dots.push(p);
        }
        dots
    }

    fn score_sigma(&self) -> f64 {
        self.config.dot_radius / (2.0 * (1.0 / DOT_EDGE_SCORE).ln()).sqrt()
    }

    /// Keypoint score at a surface point: a narrow Gaussian bump around each
    /// dot center.
    pub fn score_at(&self, p: &Vector3<f64>) -> f64 {
        let sigma = self.score_sigma();
        let reach = 4.0 * sigma;
        let mut best2 = f64::INFINITY;
        self.dot_grid.visit_within(p, reach, |_, d2| best2 = best2.min(d2));
        if best2 > reach * reach {
            0.0
        } else {
            (-best2 / (2.0 * sigma * sigma)).exp()
        }
    }

    pub fn color_at(&self, hit: &Hit) -> Vector3<f64> {
        let p = hit.point;
        let tau = 2.0 * std::f64::consts::PI;
        let pattern = 0.5
            + 0.25 * (tau * p.x / 0.37).sin() * (tau * p.y / 0.41).cos()
            + 0.25 * (tau * (p.z + 0.3 * p.x) / 0.53).sin();
        let base = self.base_colors[hit.shape] * (0.6 + 0.4 * pattern);
        // Dark dots, a little wider than the key region.
        let s = 1.5 * self.score_sigma();
        let mut best2 = f64::INFINITY;
        self.dot_grid.visit_within(&p, 4.0 * s, |_, d2| best2 = best2.min(d2));
        let ink = if best2.is_finite() { (-best2 / (2.0 * s * s)).exp() } else { 0.0 };
        base * (1.0 - 0.9 * ink)
    }

    pub fn render_view(&self, pose: &Pose, k: &CameraIntrinsics) -> SyntheticView {
        let (w, h) = (k.width, k.height);
        let o = pose.center();
        let rot = pose.rotation_matrix();
        let rows: Vec<Vec<(f64, [f64; 3], f64)>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let ray_c = k.ray(&Vector2::new(x as f64, y as f64));
                        let d = rot * ray_c;
                        match self.cast(&o, &d) {
                            // Ray has unit camera z, so t is the z-depth.
                            Some(hit) => {
                                let c = self.color_at(&hit);
                                (hit.t, [c.x, c.y, c.z], self.score_at(&hit.point))
                            }
                            None => (0.0, [0.0; 3], 0.0),
                        }
                    })
                    .collect()
            })
            .collect();
        let mut color = ColorMap::new(w, h);
        let mut depth = ScalarMap::new(w, h);
        let mut score = ScalarMap::new(w, h);
        for (y, row) in rows.iter().enumerate() {
            for (x, &(d, c, s)) in row.iter().enumerate() {
                depth.set(x, y, d);
                color.set(x, y, c);
                score.set(x, y, s);
            }
        }
        SyntheticView { color, depth, score }
    }

    /// Ground-truth descriptors at the surface points seen through a coarse
    /// grid of pixel positions.
    pub fn feature_map(&self, pose: &Pose, k: &CameraIntrinsics, factor: usize) -> FeatureMap {
        let factor = factor.max(1);
        let (fw, fh) = (k.width.div_ceil(factor), k.height.div_ceil(factor));
        let dim = self.field.dim();
        let o = pose.center();
        let rot = pose.rotation_matrix();
        let sx = k.width as f64 / fw as f64;
        let sy = k.height as f64 / fh as f64;
        let cells: Vec<Vec<f32>> = (0..fw * fh)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % fw, i / fw);
                let u = Vector2::new((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5);
                let d = rot * k.ray(&u);
                match self.cast(&o, &d) {
                    Some(hit) => self.field.eval(&hit.point).iter().map(|&v| v as f32).collect(),
                    None => vec![0.0; dim],
                }
            })
            .collect();
        let mut fm = FeatureMap::new(fw, fh, dim);
        for (i, c) in cells.into_iter().enumerate() {
            fm.cell_mut(i % fw, i / fw).copy_from_slice(&c);
        }
        fm
    }

    /// Dots visible from `pose`: exact sub-pixel projections with (noisy)
    /// ground-truth descriptors. Also returns the dot indices.
    pub fn detect(
        &self,
        pose: &Pose,
        k: &CameraIntrinsics,
        rng: &mut impl Rng,
    ) -> (Vec<Keypoint>, DMatrix<f64>, Vec<usize>) {
        let o = pose.center();
        let mut kps = Vec::new();
        let mut ids = Vec::new();
        for (i, p) in self.dots.iter().enumerate() {
            let pc = pose.inverse_transform_point(p);
            if pc.z <= 0.05 {
                continue;
            }
            let u = Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
            if !(u.x >= 0.0 && u.y >= 0.0 && u.x <= k.width as f64 - 1.0 && u.y <= k.height as f64 - 1.0) {
                continue;
            }
            let dir = p - o;
            let dist = dir.norm();
            let Some(hit) = self.cast(&o, &(dir / dist)) else { continue };
            if (hit.t - dist).abs() > 1e-3 * dist + 1e-4 {
                continue;
            }
            kps.push(Keypoint { x: u.x, y: u.y, score: 1.0 });
            ids.push(i);
        }
        let dim = self.field.dim();
        let noise = self.config.descriptor_noise / (dim as f64).sqrt();
        let mut desc = DMatrix::zeros(ids.len(), dim);
        for (row, &i) in ids.iter().enumerate() {
            let mut d = self.field.eval(&self.dots[i]);
            if noise > 0.0 {
                for v in d.iter_mut() {
                    *v += noise * rng.sample::<f64, _>(StandardNormal);
                }
                d /= d.norm();
            }
            desc.row_mut(row).copy_from(&d.transpose());
        }
        (kps, desc, ids)
    }

    fn look_target(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(0.2..0.5))
    }

    /// Orbit around the room center, looking inward.
    pub fn training_poses(&self) -> Vec<Pose> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0x7472_6169_6e00);
        (0..c.train_frames)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / c.train_frames.max(1) as f64;
                let r = c.orbit_radius + 0.1 * (2.0 * th).cos();
                let z = c.orbit_height + 0.2 * (3.0 * th).sin();
                let eye = Vector3::new(r * th.cos(), r * th.sin(), z);
                Pose::look_at(eye, self.look_target(&mut rng), Vector3::z())
            })
            .collect()
    }

    /// Views interleaved with the training orbit, perturbed in radius and
    /// height.
    pub fn query_poses(&self) -> Vec<Pose> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0x7175_6572_7900);
        (0..c.query_frames)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * (j as f64 + rng.gen_range(0.3..0.7)) / c.query_frames.max(1) as f64;
                let r = c.orbit_radius + 0.1 * (2.0 * th).cos() + rng.gen_range(-0.1..0.1);
                let z = c.orbit_height + 0.2 * (3.0 * th).sin() + rng.gen_range(-0.08..0.08);
                let eye = Vector3::new(r * th.cos(), r * th.sin(), z);
                Pose::look_at(eye, self.look_target(&mut rng), Vector3::z())
            })
            .collect()
    }
}

impl SyntheticWorld {
    /// Training keyframes, rendered in memory.
    pub fn keyframes(&self) -> Vec<KeyframeRecord> {
        let k = self.config.intrinsics();
        self.training_poses()
            .into_iter()
            .map(|pose| {
                let view = self.render_view(&pose, &k);
                KeyframeRecord {
                    color: view.color,
                    depth: view.depth,
                    pose,
                    intrinsics: k,
                    feature_map: self.feature_map(&pose, &k, self.config.feature_downsample),
                    score_map: view.score,
                }
            })
            .collect()
    }

    /// Query frames with detections and ground truth, rendered in memory.
    /// Identical to what [`generate_dataset`] writes (up to the f32 storage
    /// of descriptors).
    pub fn queries(&self) -> Vec<QueryFrame> {
        let k = self.config.intrinsics();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x6b70_7473);
        self.query_poses()
            .into_iter()
            .enumerate()
            .map(|(j, pose)| {
                let view = self.render_view(&pose, &k);
                let (keypoints, descriptors, _) = self.detect(&pose, &k, &mut rng);
                QueryFrame {
                    index: j,
                    name: format!("{}.png", frame_name(j)),
                    observation: QueryObservation {
                        keypoints,
                        descriptors,
                        intrinsics: k,
                        thumbnail: thumbnail(&view.color),
                    },
                    color: view.color,
                    ground_truth: Some(pose),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub train_frames: usize,
    pub query_frames: usize,
    pub dots: usize,
    pub mean_query_keypoints: f64,
    pub min_query_keypoints: usize,
}

/// Writes a full dataset (training frames plus `queries/`) under `dir`.
pub fn generate_dataset(config: &SynthConfig, dir: &Path) -> Result<SynthSummary, DatasetError> {
    let world = SyntheticWorld::new(config);
    let k = config.intrinsics();
    let mk = |p: &Path| fs::create_dir_all(p).map_err(|source| DatasetError::Io { path: p.to_path_buf(), source });
    for sub in ["color", "depth", "score", "feat"] {
        mk(&dir.join(sub))?;
    }
    let qdir = dir.join("queries");
    for sub in ["color", "keypoints"] {
        mk(&qdir.join(sub))?;
    }
    write_intrinsics(&dir.join("intrinsics.json"), &k)?;
    write_intrinsics(&qdir.join("intrinsics.json"), &k)?;

    let train = world.keyframes();
    for (i, kf) in train.iter().enumerate() {
        let name = frame_name(i);
        write_color_png(&dir.join("color").join(format!("{name}.png")), &kf.color)?;
        write_raw_map(&dir.join("depth").join(format!("{name}.raw")), &kf.depth)?;
        write_raw_map(&dir.join("score").join(format!("{name}.raw")), &kf.score_map)?;
        write_feature_map(&dir.join("feat").join(format!("{name}.featraw")), &kf.feature_map)?;
    }
    write_poses(&dir.join("poses.txt"), &train.iter().map(|kf| kf.pose).enumerate().collect::<Vec<_>>())?;

    let queries = world.queries();
    let mut counts = Vec::new();
    for q in &queries {
        let name = frame_name(q.index);
        write_color_png(&qdir.join("color").join(format!("{name}.png")), &q.color)?;
        write_keypoints(
            &qdir.join("keypoints").join(format!("{name}.kpt")),
            &q.observation.keypoints,
            &q.observation.descriptors,
        )?;
        counts.push(q.observation.keypoints.len());
    }
    let gt: Vec<(usize, Pose)> = queries.iter().filter_map(|q| Some((q.index, q.ground_truth?))).collect();
    write_poses(&qdir.join("poses.txt"), &gt)?;

    let summary = SynthSummary {
        train_frames: train.len(),
        query_frames: queries.len(),
        dots: world.dots.len(),
        mean_query_keypoints: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
        min_query_keypoints: counts.iter().copied().min().unwrap_or(0),
    };
    let cfg_text = serde_json::to_string_pretty(config).expect("config serialize");
    fs::write(dir.join("synth.json"), cfg_text).map_err(|source| DatasetError::Io {
        path: dir.join("synth.json"),
        source,
    })?;
    Ok(summary)
}
