use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{initialize_from_keyframe, loss_maps, regularization_grad, regularization_loss, LossBreakdown, LossWeights, MapperError};
use crate::geometry::unproject_pixel;
use crate::keyframe::KeyframeRecord;
use crate::render::{render_backward, render_with_state, BackwardOptions, PrimitiveGradients};
use crate::scene::{sh_rest_count, SceneBounds, SceneModel};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub color: f64,
    pub sh_rest: f64,
    pub opacity: f64,
    pub landmark: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            color: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
            opacity: 0.05,
            landmark: 0.05,
            scale: 0.001,
            rotation: 0.001,
        }
    }
}

// Packed per-primitive parameter layout.
const MU: usize = 0;
const Q: usize = 3;
const SCALE: usize = 7;
const OPACITY: usize = 10;
const COLOR: usize = 11;
const LANDMARK: usize = 14;
const SH: usize = 15;

/// Adam moments for every primitive parameter, aligned with the scene's
/// primitive order.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    stride: usize,
}

impl OptimizerState {
    pub fn new(sh_degree: u8) -> Self {
        Self {
            stride: SH + 3 * sh_rest_count(sh_degree),
            ..Self::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn fit(&mut self, n: usize) {
        self.m.resize(n * self.stride, 0.0);
        self.v.resize(n * self.stride, 0.0);
    }

    /// Drops moments of primitives for which `keep[i]` is false.
    fn retain(&mut self, keep: &[bool]) {
        let s = self.stride;
        let mut w = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                self.m.copy_within(i * s..(i + 1) * s, w * s);
                self.v.copy_within(i * s..(i + 1) * s, w * s);
                w += 1;
            }
        }
        self.m.truncate(w * s);
        self.v.truncate(w * s);
    }

    #[inline]
    fn update(&mut self, slot: usize, param: &mut f64, g: f64, lr: f64, c1: f64, c2: f64) {
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *param -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
    }
}

/// One Adam step on the λ-weighted rendering and regularization losses of
/// `batch` (a mean over its views). Key-primitive centers are left untouched
/// when `freeze_key_centers` is set.
pub fn optimize_step(
    scene: &mut SceneModel,
    batch: &[&KeyframeRecord],
    weights: &LossWeights,
    rates: &LearningRates,
    state: &mut OptimizerState,
    freeze_key_centers: bool,
) -> Result<LossBreakdown, MapperError> {
    if scene.is_empty() {
        return Err(MapperError::EmptyScene);
    }
    if batch.is_empty() {
        return Err(MapperError::EmptyDataset);
    }
    let n = scene.len();
    let deg = scene.sh_degree();
    let mut grads = PrimitiveGradients::zeros(n, deg);
    let mut terms = LossBreakdown::default();
    let opts = BackwardOptions { freeze_key_centers };
    let inv_b = 1.0 / batch.len() as f64;
    for kf in batch {
        let (maps, fwd) = render_with_state(scene, &kf.pose, &kf.intrinsics);
        let (b, g) = loss_maps(&maps, kf, weights, true)?;
        let g = g.expect("gradients requested");
        let pg = render_backward(scene, &kf.pose, &kf.intrinsics, &fwd, &g, &opts)?;
        grads.add_scaled(&pg, inv_b);
        terms.color += b.color * inv_b;
        terms.depth += b.depth * inv_b;
        terms.landmark += b.landmark * inv_b;
    }
    terms.regularization = regularization_loss(scene, weights);
    for (term, v) in [
        ("color", terms.color),
        ("depth", terms.depth),
        ("landmark", terms.landmark),
        ("regularization", terms.regularization),
    ] {
        if !v.is_finite() {
            return Err(MapperError::NonFiniteLoss { term });
        }
    }
    terms.total = terms.weighted_total(weights);
    if !grads.is_finite() {
        return Err(MapperError::NonFiniteLoss { term: "gradient" });
    }
    if weights.regularization != 0.0 {
        for (g, p) in grads.log_scale.iter_mut().zip(scene.primitives()) {
            *g += regularization_grad(p, weights) * weights.regularization;
        }
    }

    state.fit(n);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let stride = state.stride;
    let sh_n = sh_rest_count(deg);
    for (i, p) in scene.primitives_mut().iter_mut().enumerate() {
        let base = i * stride;
        if !(freeze_key_centers && p.is_key) {
            for a in 0..3 {
                state.update(base + MU + a, &mut p.mu[a], grads.mu[i][a], rates.position, c1, c2);
            }
        }
        for a in 0..4 {
            state.update(base + Q + a, &mut p.q[a], grads.q[i][a], rates.rotation, c1, c2);
        }
        for a in 0..3 {
            state.update(base + SCALE + a, &mut p.log_scale[a], grads.log_scale[i][a], rates.scale, c1, c2);
            state.update(base + COLOR + a, &mut p.color[a], grads.color[i][a], rates.color, c1, c2);
        }
        state.update(base + OPACITY, &mut p.opacity_logit, grads.opacity_logit[i], rates.opacity, c1, c2);
        state.update(base + LANDMARK, &mut p.landmark_logit, grads.landmark_logit[i], rates.landmark, c1, c2);
        for k in 0..sh_n {
            for c in 0..3 {
                let slot = base + SH + 3 * k + c;
                state.update(slot, &mut p.sh_rest[k][c], grads.sh_rest[i * sh_n + k][c], rates.sh_rest, c1, c2);
            }
        }
    }
    scene.sanitize();
    Ok(terms)
}

/// Removes primitives with opacity below `min_opacity`, keeping optimizer
/// moments aligned. Returns the number removed.
pub fn prune_transparent(scene: &mut SceneModel, state: &mut OptimizerState, min_opacity: f64) -> usize {
    let keep: Vec<bool> = scene.primitives().iter().map(|p| p.opacity() >= min_opacity).collect();
    if keep.iter().all(|&k| k) {
        return 0;
    }
    state.fit(scene.len());
    state.retain(&keep);
    let mut it = keep.iter();
    scene.retain(|_| *it.next().unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    pub weights: LossWeights,
    pub rates: LearningRates,
    /// Optimization iterations after each keyframe is added.
    pub iters_per_keyframe: usize,
    /// Frames sampled per iteration.
    pub frames_per_batch: usize,
    /// Final appearance-refinement iterations (one random frame each).
    pub refinement_iters: usize,
    /// Prune every this many iterations; 0 disables interval pruning.
    pub prune_interval: usize,
    pub min_opacity: f64,
    pub sh_degree: u8,
    pub freeze_key_centers: bool,
    /// Scene box; derived from the depth maps when absent.
    pub bounds: Option<SceneBounds>,
    pub seed: u64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            rates: LearningRates::default(),
            iters_per_keyframe: 10,
            frames_per_batch: 5,
            refinement_iters: 300,
            prune_interval: 100,
            min_opacity: 0.005,
            sh_degree: 0,
            freeze_key_centers: true,
            bounds: None,
            seed: 0,
        }
    }
}

impl ReconstructConfig {
    /// Scales every iteration count by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        let s = |n: usize| ((n as f64) * factor).round() as usize;
        self.iters_per_keyframe = s(self.iters_per_keyframe);
        self.refinement_iters = s(self.refinement_iters);
        self
    }
}

/// Axis-aligned box around every back-projected depth sample (every 4th
/// pixel), padded by 5 cm.
pub fn bounds_from_depth(keyframes: &[KeyframeRecord]) -> Option<SceneBounds> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for kf in keyframes {
        for y in (0..kf.height()).step_by(4) {
            for x in (0..kf.width()).step_by(4) {
                let Some(d) = kf.valid_depth(x, y) else { continue };
                if let Ok(p) = unproject_pixel(&nalgebra::Vector2::new(x as f64, y as f64), d, &kf.pose, &kf.intrinsics) {
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
        }
    }
    lo.iter()
        .all(|v| v.is_finite())
        .then(|| SceneBounds::new(lo - Vector3::repeat(0.05), hi + Vector3::repeat(0.05)))
}

fn sample_batch(rng: &mut impl Rng, available: usize, size: usize) -> Vec<usize> {
    let mut v = sample(rng, available, size.min(available)).into_vec();
    v.sort_unstable();
    v
}

/// Incremental reconstruction: each keyframe is spawned into the map and
/// followed by `iters_per_keyframe` steps on batches drawn from the frames
/// seen so far, then a refinement phase over all frames.
pub fn reconstruct(keyframes: &[KeyframeRecord], config: &ReconstructConfig) -> Result<SceneModel, MapperError> {
    if keyframes.is_empty() {
        return Err(MapperError::EmptyDataset);
    }
    let bounds = match config.bounds {
        Some(b) => b,
        None => bounds_from_depth(keyframes).ok_or(MapperError::NoValidDepth)?,
    };
    let mut scene = SceneModel::new(bounds, config.sh_degree)?;
    scene.config_hash = crate::config::config_hash(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new(config.sh_degree);
    let mut iter = 0usize;
    let step = |scene: &mut SceneModel, state: &mut OptimizerState, idx: &[usize], iter: &mut usize| {
        let batch: Vec<&KeyframeRecord> = idx.iter().map(|&i| &keyframes[i]).collect();
        let b = optimize_step(scene, &batch, &config.weights, &config.rates, state, config.freeze_key_centers)?;
        *iter += 1;
        if config.prune_interval > 0 && *iter % config.prune_interval == 0 {
            let removed = prune_transparent(scene, state, config.min_opacity);
            if removed > 0 {
                log::debug!("iteration {iter}: pruned {removed} primitives");
            }
        }
        Ok::<LossBreakdown, MapperError>(b)
    };

    for (i, kf) in keyframes.iter().enumerate() {
        let added = match initialize_from_keyframe(&mut scene, kf, &config.weights, &mut rng) {
            Ok(n) => n,
            Err(MapperError::NoValidDepth) => {
                log::warn!("keyframe {i} has no valid depth; skipped");
                0
            }
            Err(e) => return Err(e),
        };
        if scene.is_empty() {
            continue;
        }
        let mut last = LossBreakdown::default();
        for _ in 0..config.iters_per_keyframe {
            let idx = sample_batch(&mut rng, i + 1, config.frames_per_batch);
            last = step(&mut scene, &mut state, &idx, &mut iter)?;
        }
        log::info!(
            "keyframe {i}: +{added} primitives ({} total), loss {:.4}",
            scene.len(),
            last.total
        );
    }
    if scene.is_empty() {
        return Err(MapperError::NoValidDepth);
    }
    for r in 0..config.refinement_iters {
        let idx = [rng.gen_range(0..keyframes.len())];
        let b = step(&mut scene, &mut state, &idx, &mut iter)?;
        if r % 100 == 0 {
            log::info!("refinement {r}: loss {:.4} (color {:.4})", b.total, b.color);
        }
    }
    prune_transparent(&mut scene, &mut state, config.min_opacity);
    Ok(scene)
}
