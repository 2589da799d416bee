//! Incremental reconstruction: primitive spawning from keyframes, the
//! rendering losses, scale regularization of key primitives, and the
//! optimization schedule.

mod optimize;

pub use optimize::{
    bounds_from_depth, optimize_step, prune_transparent, reconstruct, LearningRates, OptimizerState, ReconstructConfig,
};

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::unproject_pixel;
use crate::keyframe::{KeyframeError, KeyframeRecord};
use crate::render::{MapGradients, RenderError, RenderedMaps};
use crate::scene::{GaussianPrimitive, SceneError, SceneModel};
use crate::spatial::PointGrid;

/// Spawned points closer than this to an existing primitive are dropped.
pub const DEDUP_RADIUS: f64 = 0.01;
/// Rendered alpha above which color and depth losses apply.
pub const ALPHA_MASK: f64 = 0.5;
pub const BCE_CLAMP: f64 = 1e-6;
const INIT_OPACITY: f64 = 0.5;
const INIT_LANDMARK: f64 = 0.5;
const SCALE_NEIGHBOR: usize = 3;
const MIN_INIT_SCALE: f64 = 1e-3;
const MAX_INIT_SCALE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum MapperError {
    #[error("keyframe has no valid depth pixels")]
    NoValidDepth,
    #[error("dataset contains no keyframes")]
    EmptyDataset,
    #[error("scene has no primitives")]
    EmptyScene,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite {term} loss")]
    NonFiniteLoss { term: &'static str },
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub color: f64,
    pub depth: f64,
    pub landmark: f64,
    pub distill: f64,
    pub regularization: f64,
    /// Target key-primitive scale at zero keypoint score, meters.
    pub delta: f64,
    pub key_score_threshold: f64,
    /// Fraction of the remaining valid pixels spawned as non-key primitives.
    pub sample_fraction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            color: 1.0,
            depth: 0.5,
            landmark: 1.0,
            distill: 1.0,
            regularization: 0.01,
            delta: 0.02,
            key_score_threshold: 0.005,
            sample_fraction: 1.0 / 64.0,
        }
    }
}

/// Individual loss terms and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub color: f64,
    pub depth: f64,
    pub landmark: f64,
    pub distill: f64,
    pub regularization: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.color * self.color
            + w.depth * self.depth
            + w.landmark * self.landmark
            + w.distill * self.distill
            + w.regularization * self.regularization
    }
}

/// Spawns key primitives at every pixel scoring above the threshold and
/// non-key primitives at a random subset of the other valid pixels. Returns
/// the number of primitives added.
pub fn initialize_from_keyframe(
    scene: &mut SceneModel,
    kf: &KeyframeRecord,
    weights: &LossWeights,
    rng: &mut impl Rng,
) -> Result<usize, MapperError> {
    kf.validate()?;
    let (w, h) = (kf.width(), kf.height());
    let mut key_px = Vec::new();
    let mut rest_px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if kf.valid_depth(x, y).is_none() {
                continue;
            }
            if kf.score_map.get(x, y) > weights.key_score_threshold {
                key_px.push((x, y));
            } else {
                rest_px.push((x, y));
            }
        }
    }
    if key_px.is_empty() && rest_px.is_empty() {
        return Err(MapperError::NoValidDepth);
    }
    let n_rest = ((rest_px.len() as f64) * weights.sample_fraction).round() as usize;
    let mut chosen: Vec<usize> = sample(rng, rest_px.len(), n_rest.min(rest_px.len())).into_vec();
    chosen.sort_unstable();

    let existing = PointGrid::from_points(
        DEDUP_RADIUS,
        &scene.primitives().iter().map(|p| p.mu).collect::<Vec<_>>(),
    );
    let mut spawn: Vec<(Vector3<f64>, (usize, usize), bool)> = Vec::new();
    let candidates = key_px
        .iter()
        .map(|&px| (px, true))
        .chain(chosen.iter().map(|&i| (rest_px[i], false)));
    for ((x, y), is_key) in candidates {
        let d = kf.valid_depth(x, y).unwrap_or_default();
        let p = unproject_pixel(&Vector2::new(x as f64, y as f64), d, &kf.pose, &kf.intrinsics)
            .map_err(KeyframeError::from)?;
        if !scene.bounds.contains_with_margin(&p, crate::scene::BOUNDS_MARGIN) {
            continue;
        }
        if existing.any_within(&p, DEDUP_RADIUS) {
            continue;
        }
        spawn.push((p, (x, y), is_key));
    }

    // Spacing is measured against the whole map so that later keyframes
    // fill in with finer primitives instead of stacking coarse layers.
    let mut all = PointGrid::from_points(0.05, &scene.primitives().iter().map(|p| p.mu).collect::<Vec<_>>());
    let first = all.len();
    for s in &spawn {
        all.insert(s.0);
    }
    let spacing: Vec<Option<f64>> = (first..all.len()).map(|i| all.kth_neighbor_distance(i, SCALE_NEIGHBOR)).collect();
    let fallback = spacing.iter().flatten().copied().fold(f64::NAN, f64::min);
    for ((p, (x, y), is_key), sp) in spawn.iter().zip(&spacing) {
        let scale = sp
            .or((!fallback.is_nan()).then_some(fallback))
            .unwrap_or(0.01)
            .clamp(MIN_INIT_SCALE, MAX_INIT_SCALE);
        let c = kf.color.get(*x, *y);
        let mut prim = GaussianPrimitive::new(*p, scale, INIT_OPACITY, Vector3::from(c));
        prim.landmark_logit = crate::geometry::logit(INIT_LANDMARK);
        prim.is_key = *is_key;
        prim.spawn_score = kf.score_map.get(*x, *y);
        scene.push(prim)?;
    }
    Ok(spawn.len())
}

/// Color, depth and landmark-score losses of one rendered view with their
/// map gradients (already scaled by `weights`).
pub fn reconstruction_losses(
    rendered: &RenderedMaps,
    kf: &KeyframeRecord,
) -> Result<(f64, f64, f64), MapperError> {
    let b = loss_maps(rendered, kf, &LossWeights::default(), false)?;
    Ok((b.0.color, b.0.depth, b.0.landmark))
}

pub(crate) fn loss_maps(
    rendered: &RenderedMaps,
    kf: &KeyframeRecord,
    weights: &LossWeights,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<MapGradients>), MapperError> {
    let (w, h) = (rendered.width(), rendered.height());
    if kf.color.width != w || kf.color.height != h || !kf.depth.same_shape(&rendered.depth) || !kf.score_map.same_shape(&rendered.score) {
        return Err(MapperError::ShapeMismatch(format!(
            "rendered {w}x{h}, keyframe {}x{}",
            kf.color.width, kf.color.height
        )));
    }
    let mut g = with_grads.then(|| MapGradients::zeros(w, h));
    let n = w * h;
    let mut color_px = 0usize;
    let mut depth_px = 0usize;
    for i in 0..n {
        if rendered.alpha.data[i] > ALPHA_MASK {
            color_px += 1;
            let d = kf.depth.data[i];
            if d > 0.0 && d <= crate::keyframe::MAX_DEPTH {
                depth_px += 1;
            }
        }
    }
    let mut lc = 0.0;
    let mut ld = 0.0;
    let mut lm = 0.0;
    let gc = if color_px > 0 { weights.color / (3 * color_px) as f64 } else { 0.0 };
    let gd = if depth_px > 0 { weights.depth / depth_px as f64 } else { 0.0 };
    let gm = weights.landmark / n as f64;
    for i in 0..n {
        if rendered.alpha.data[i] > ALPHA_MASK {
            for c in 0..3 {
                let r = rendered.color.data[3 * i + c] - kf.color.data[3 * i + c];
                lc += r.abs();
                if let Some(g) = g.as_mut() {
                    g.color[3 * i + c] = gc * sign(r);
                }
            }
            let d = kf.depth.data[i];
            if d > 0.0 && d <= crate::keyframe::MAX_DEPTH {
                let r = rendered.depth.data[i] - d;
                ld += r.abs();
                if let Some(g) = g.as_mut() {
                    g.depth[i] = gd * sign(r);
                }
            }
        }
        let a = kf.score_map.data[i];
        let raw = rendered.score.data[i];
        let p = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        lm += -(a * p.ln() + (1.0 - a) * (1.0 - p).ln());
        if let Some(g) = g.as_mut() {
            // The clamp is flat outside its interval.
            if raw > BCE_CLAMP && raw < 1.0 - BCE_CLAMP {
                g.score[i] = gm * (p - a) / (p * (1.0 - p));
            }
        }
    }
    let b = LossBreakdown {
        color: if color_px > 0 { lc / (3 * color_px) as f64 } else { 0.0 },
        depth: if depth_px > 0 { ld / depth_px as f64 } else { 0.0 },
        landmark: lm / n as f64,
        ..LossBreakdown::default()
    };
    Ok((b, g))
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Σ over key primitives and axes of |exp(s) − δ·(1 − m)|.
pub fn regularization_loss(scene: &SceneModel, weights: &LossWeights) -> f64 {
    scene
        .primitives()
        .iter()
        .filter(|p| p.is_key)
        .map(|p| {
            let target = weights.delta * (1.0 - p.spawn_score);
            p.scale().iter().map(|s| (s - target).abs()).sum::<f64>()
        })
        .sum()
}

/// ∂L_reg/∂log_scale for one primitive.
pub(crate) fn regularization_grad(p: &GaussianPrimitive, weights: &LossWeights) -> Vector3<f64> {
    if !p.is_key {
        return Vector3::zeros();
    }
    let target = weights.delta * (1.0 - p.spawn_score);
    p.scale().map(|s| sign(s - target) * s)
}
