//! The mapping and localization stages chained together, shared by the CLI,
//! the examples and the benchmark.

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::dataset::QueryFrame;
use crate::eval::{psnr_ssim, EvalError, FrameResult, ViewQuality};
use crate::field::{distill, DescriptorField, FieldError, TrainingLog};
use crate::geometry::pose_errors;
use crate::keyframe::KeyframeRecord;
use crate::landmarks::{
    build_observations, candidates, score_key_primitives, select_landmarks, select_uniform, LandmarkError, Selection,
};
use crate::localize::{localize, thumbnail, ReferenceFrame};
use crate::render::render;
use crate::scene::SceneModel;
use crate::volume::{FeatureVolume, VolumeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no keyframes")]
    NoKeyframes,
    #[error("no key primitives survived scoring")]
    NoKeyPrimitives,
}

/// Surface sampling for distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillStage {
    /// Points drawn from the extracted isosurface.
    pub surface_samples: usize,
    pub seed: u64,
}

impl Default for DistillStage {
    fn default() -> Self {
        Self {
            surface_samples: 200_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    Saliency,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkConfig {
    pub count: usize,
    pub method: SelectionMethod,
    /// Initial exclusion radius; the scene diagonal / 20 when absent.
    pub initial_radius: Option<f64>,
    /// Surface-distance scale of the geometry-consistency term, meters.
    pub consistency_scale: f64,
    /// A primitive counts as observed when its rendered depth agrees to
    /// within this distance, meters.
    pub visibility_tolerance: f64,
    pub seed: u64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            method: SelectionMethod::Saliency,
            initial_radius: None,
            consistency_scale: 0.01,
            visibility_tolerance: 0.10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub fused_cells: usize,
    pub surface_samples: usize,
    pub log: TrainingLog,
}

/// Fuses keyframe features into a volume, samples its surface and fits a
/// fresh descriptor field, which is attached to `scene`.
pub fn distill_scene(
    scene: &mut SceneModel,
    keyframes: &[KeyframeRecord],
    config: &Config,
) -> Result<DistillReport, PipelineError> {
    let first = keyframes.first().ok_or(PipelineError::NoKeyframes)?;
    let dim = first.feature_map.dim;
    let mut volume = FeatureVolume::for_bounds(&scene.bounds, &config.volume, dim)?;
    for kf in keyframes {
        volume.integrate_keyframe(kf)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.surface.seed);
    let samples = volume.extract_surface(config.surface.surface_samples, &mut rng)?;
    let fused_cells = volume.allocated_cells();
    drop(volume);
    log::info!("{fused_cells} fused cells, {} surface samples", samples.len());
    let mut field_cfg = config.field.clone();
    field_cfg.descriptor_dim = dim;
    let mut field = DescriptorField::new(&field_cfg, scene.bounds)?;
    let log = distill(&mut field, &samples, &config.distill)?;
    log::info!("distilled: mean cosine {:.4}", log.final_mean_cos);
    scene.descriptor_field = Some(field);
    Ok(DistillReport {
        fused_cells,
        surface_samples: samples.len(),
        log,
    })
}

/// Scores key primitives and picks `config.count` landmarks.
pub fn choose_landmarks(
    scene: &SceneModel,
    keyframes: &[KeyframeRecord],
    config: &LandmarkConfig,
) -> Result<Selection, PipelineError> {
    let obs = build_observations(scene, keyframes, config.visibility_tolerance, true);
    let records = score_key_primitives(scene, &obs, config.consistency_scale);
    let cands = candidates(scene, &records);
    if cands.is_empty() {
        return Err(PipelineError::NoKeyPrimitives);
    }
    let r0 = config.initial_radius.unwrap_or(scene.bounds.diagonal() / 20.0);
    Ok(match config.method {
        SelectionMethod::Saliency => select_landmarks(&cands, r0, config.count)?,
        SelectionMethod::Uniform => select_uniform(&cands, config.count, config.seed)?,
    })
}

pub fn reference_frames(keyframes: &[KeyframeRecord]) -> Vec<ReferenceFrame> {
    keyframes
        .iter()
        .enumerate()
        .map(|(id, kf)| ReferenceFrame {
            id,
            pose: kf.pose,
            intrinsics: kf.intrinsics,
            thumbnail: thumbnail(&kf.color),
        })
        .collect()
}

/// Localizes every query (in parallel) and scores it against its ground
/// truth when present. `pairs` maps query names to reference ids and
/// overrides retrieval.
pub fn localize_queries(
    scene: &SceneModel,
    landmarks: &[usize],
    db: &[ReferenceFrame],
    queries: &[QueryFrame],
    pairs: Option<&HashMap<String, usize>>,
    config: &Config,
) -> Vec<(FrameResult, Option<crate::Pose>)> {
    queries
        .par_iter()
        .map(|q| {
            let t = Instant::now();
            let out = localize(&q.observation, scene, landmarks, db, pairs.and_then(|m| m.get(&q.name).copied()), &config.localize);
            let seconds = t.elapsed().as_secs_f64();
            match out {
                Ok(l) => {
                    let errs = q.ground_truth.map(|gt| pose_errors(&l.estimate.pose, &gt));
                    (
                        FrameResult {
                            frame: q.name.clone(),
                            localized: true,
                            dt_cm: errs.map(|e| e.0),
                            dr_deg: errs.map(|e| e.1),
                            matches: l.diagnostics.matches,
                            inliers: l.diagnostics.inliers,
                            seconds,
                        },
                        Some(l.estimate.pose),
                    )
                }
                Err((e, d)) => {
                    log::warn!("{}: {e}", q.name);
                    (
                        FrameResult {
                            frame: q.name.clone(),
                            localized: false,
                            dt_cm: None,
                            dr_deg: None,
                            matches: d.matches,
                            inliers: d.inliers,
                            seconds,
                        },
                        None,
                    )
                }
            }
        })
        .collect()
}

/// PSNR/SSIM of the map re-rendered at each keyframe's pose.
pub fn render_quality(
    scene: &SceneModel,
    keyframes: &[KeyframeRecord],
    names: &[String],
) -> Result<Vec<ViewQuality>, PipelineError> {
    keyframes
        .iter()
        .zip(names)
        .map(|(kf, name)| {
            let r = render(scene, &kf.pose, &kf.intrinsics);
            let (psnr, ssim) = psnr_ssim(&r.color, &kf.color)?;
            Ok(ViewQuality {
                frame: name.clone(),
                psnr,
                ssim,
            })
        })
        .collect()
}
