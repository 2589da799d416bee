//! Query localization: reference retrieval, frustum-restricted landmark
//! candidates, descriptor matching and RANSAC + PnP.

mod matching;
pub mod pnp;
mod ransac;

use std::collections::HashMap;

use nalgebra::{DMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_point, CameraIntrinsics, Pose};
use crate::maps::ColorMap;
use crate::scene::SceneModel;

pub use matching::{match_descriptors, Match2D3D, MatchConfig};
pub use ransac::{solve_pnp_ransac, PoseEstimate, RansacConfig};

pub const THUMBNAIL_SIZE: usize = 16;
/// Landmarks closer than this to the reference camera are ignored.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizeError {
    #[error("reference database is empty")]
    EmptyDatabase,
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientMatches(usize),
    #[error("no consensus: {inliers} inliers out of {matches} matches")]
    NoConsensus { inliers: usize, matches: usize },
    #[error("scene has no descriptor field")]
    NoDescriptorField,
    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("reference id {0} is not in the database")]
    UnknownReference(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryObservation {
    pub keypoints: Vec<Keypoint>,
    /// One unit-norm descriptor per row.
    pub descriptors: DMatrix<f64>,
    pub intrinsics: CameraIntrinsics,
    pub thumbnail: Vec<f64>,
}

/// 16×16 mean-pooled grayscale descriptor.
pub fn thumbnail(img: &ColorMap) -> Vec<f64> {
    let gray = img.to_gray();
    let (w, h) = (img.width, img.height);
    let mut out = vec![0.0; THUMBNAIL_SIZE * THUMBNAIL_SIZE];
    for ty in 0..THUMBNAIL_SIZE {
        let (y0, y1) = (ty * h / THUMBNAIL_SIZE, ((ty + 1) * h / THUMBNAIL_SIZE).max(ty * h / THUMBNAIL_SIZE + 1));
        for tx in 0..THUMBNAIL_SIZE {
            let (x0, x1) = (tx * w / THUMBNAIL_SIZE, ((tx + 1) * w / THUMBNAIL_SIZE).max(tx * w / THUMBNAIL_SIZE + 1));
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    sum += gray.get(x, y);
                    cnt += 1;
                }
            }
            out[ty * THUMBNAIL_SIZE + tx] = if cnt > 0 { sum / cnt as f64 } else { 0.0 };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub id: usize,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub thumbnail: Vec<f64>,
}

/// Database ids ordered by thumbnail distance (ties by id), best first.
pub fn rank_references(query: &[f64], db: &[ReferenceFrame]) -> Result<Vec<usize>, LocalizeError> {
    if db.is_empty() {
        return Err(LocalizeError::EmptyDatabase);
    }
    let mut scored: Vec<(f64, usize)> = db
        .iter()
        .map(|r| {
            let d: f64 = r.thumbnail.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum();
            (d, r.id)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// Nearest database frame by thumbnail, or `pair` when one is supplied.
pub fn retrieve_reference(query: &[f64], db: &[ReferenceFrame], pair: Option<usize>) -> Result<usize, LocalizeError> {
    if db.is_empty() {
        return Err(LocalizeError::EmptyDatabase);
    }
    match pair {
        Some(id) if db.iter().any(|r| r.id == id) => Ok(id),
        Some(id) => Err(LocalizeError::UnknownReference(id)),
        None => Ok(rank_references(query, db)?[0]),
    }
}

/// Parses "query_name reference_id" lines; blank lines and `#` comments are
/// skipped.
pub fn parse_pairs(text: &str) -> Result<HashMap<String, usize>, String> {
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(q), Some(r)) = (it.next(), it.next()) else {
            return Err(format!("line {}: expected `query reference`", n + 1));
        };
        let r: usize = r
            .trim_start_matches(|c: char| !c.is_ascii_digit())
            .split('.')
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|_| format!("line {}: bad reference id `{r}`", n + 1))?;
        out.insert(q.to_string(), r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Primitive indices.
    pub ids: Vec<usize>,
    pub positions: Vec<Vector3<f64>>,
    /// One descriptor per row.
    pub descriptors: DMatrix<f64>,
}

/// Primitive indices (from `landmarks`) whose centers fall inside the
/// reference view with depth above the near plane.
pub fn frustum_filter(scene: &SceneModel, landmarks: &[usize], pose: &Pose, k: &CameraIntrinsics) -> Vec<usize> {
    landmarks
        .iter()
        .copied()
        .filter(|&i| {
            let Some(p) = scene.primitives().get(i) else { return false };
            matches!(project_point(&p.mu, pose, k), Ok((u, z)) if z > NEAR_PLANE && k.contains(&u))
        })
        .collect()
}

pub fn candidate_landmarks(
    scene: &SceneModel,
    landmarks: &[usize],
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<CandidateSet, LocalizeError> {
    let field = scene.descriptor_field.as_ref().ok_or(LocalizeError::NoDescriptorField)?;
    let ids = frustum_filter(scene, landmarks, pose, k);
    let positions: Vec<Vector3<f64>> = ids.iter().map(|&i| scene.primitives()[i].mu).collect();
    let descriptors = if positions.is_empty() {
        DMatrix::zeros(0, field.descriptor_dim())
    } else {
        field.batch_decode(&positions)
    };
    Ok(CandidateSet {
        ids,
        positions,
        descriptors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub matching: MatchConfig,
    pub ransac: RansacConfig,
    /// Number of retrieved reference frames whose frusta are pooled.
    pub top_k: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            matching: MatchConfig::default(),
            ransac: RansacConfig::default(),
            top_k: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalizeDiagnostics {
    pub reference_ids: Vec<usize>,
    pub keypoints: usize,
    pub candidates: usize,
    pub matches: usize,
    pub inliers: usize,
    pub inlier_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub estimate: PoseEstimate,
    pub matches: Vec<Match2D3D>,
    pub diagnostics: LocalizeDiagnostics,
}

/// Full pipeline for one query. On failure the diagnostics gathered so far are
/// returned with the error.
pub fn localize(
    query: &QueryObservation,
    scene: &SceneModel,
    landmarks: &[usize],
    db: &[ReferenceFrame],
    pair: Option<usize>,
    cfg: &LocalizeConfig,
) -> Result<Localization, (LocalizeError, LocalizeDiagnostics)> {
    let mut diag = LocalizeDiagnostics {
        keypoints: query.keypoints.len(),
        ..Default::default()
    };
    let fail = |e, d: &LocalizeDiagnostics| Err((e, d.clone()));
    let refs = match pair {
        Some(_) => match retrieve_reference(&query.thumbnail, db, pair) {
            Ok(id) => vec![id],
            Err(e) => return fail(e, &diag),
        },
        None => match rank_references(&query.thumbnail, db) {
            Ok(r) => r.into_iter().take(cfg.top_k.max(1)).collect(),
            Err(e) => return fail(e, &diag),
        },
    };
    diag.reference_ids = refs.clone();

    let mut pool: Vec<usize> = Vec::new();
    for id in &refs {
        let Some(r) = db.iter().find(|r| r.id == *id) else {
            return fail(LocalizeError::UnknownReference(*id), &diag);
        };
        pool.extend(frustum_filter(scene, landmarks, &r.pose, &r.intrinsics));
    }
    pool.sort_unstable();
    pool.dedup();
    // Already filtered; decode descriptors for the pooled set.
    let cands = match scene.descriptor_field.as_ref() {
        None => return fail(LocalizeError::NoDescriptorField, &diag),
        Some(field) => {
            let positions: Vec<Vector3<f64>> = pool.iter().map(|&i| scene.primitives()[i].mu).collect();
            let descriptors = if positions.is_empty() {
                DMatrix::zeros(0, field.descriptor_dim())
            } else {
                field.batch_decode(&positions)
            };
            CandidateSet {
                ids: pool,
                positions,
                descriptors,
            }
        }
    };
    diag.candidates = cands.ids.len();
    if query.keypoints.len() > 0 && query.descriptors.ncols() != cands.descriptors.ncols() {
        return fail(
            LocalizeError::DimensionMismatch {
                expected: cands.descriptors.ncols(),
                got: query.descriptors.ncols(),
            },
            &diag,
        );
    }

    let matches = match_descriptors(&query.descriptors, &cands.descriptors, &cfg.matching);
    diag.matches = matches.len();
    let pts: Vec<Vector3<f64>> = matches.iter().map(|m| cands.positions[m.landmark_index]).collect();
    let px: Vec<Vector2<f64>> = matches
        .iter()
        .map(|m| {
            let kp = &query.keypoints[m.keypoint_index];
            Vector2::new(kp.x, kp.y)
        })
        .collect();
    match solve_pnp_ransac(&pts, &px, &query.intrinsics, &cfg.ransac) {
        Ok(estimate) => {
            diag.inliers = estimate.inliers.len();
            diag.inlier_ratio = estimate.inliers.len() as f64 / matches.len().max(1) as f64;
            Ok(Localization {
                estimate,
                matches,
                diagnostics: diag,
            })
        }
        Err(e) => {
            if let LocalizeError::NoConsensus { inliers, .. } = e {
                diag.inliers = inliers;
                diag.inlier_ratio = inliers as f64 / matches.len().max(1) as f64;
            }
            fail(e, &diag)
        }
    }
}
