//! Robust pose estimation: P3P hypotheses validated by a fourth point,
//! inlier scoring, EPnP re-seeding and LM refinement.

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pnp::{epnp, mean_reprojection_error, p3p, refine_pose, CameraTransform};
use super::LocalizeError;
use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub confidence: f64,
    pub threshold_px: f64,
    pub min_inliers: usize,
    pub min_inlier_ratio: f64,
    pub refine_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            confidence: 0.999,
            threshold_px: 3.0,
            min_inliers: 6,
            min_inlier_ratio: 0.3,
            refine_iterations: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Indices into the correspondence list.
    pub inliers: Vec<usize>,
    pub mean_reprojection_error: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn inliers_of(
    tf: &CameraTransform,
    pts: &[Vector3<f64>],
    px: &[Vector2<f64>],
    k: &CameraIntrinsics,
    thr: f64,
) -> (Vec<usize>, f64) {
    let mut ids = Vec::new();
    let mut err = 0.0;
    for (i, (x, u)) in pts.iter().zip(px).enumerate() {
        let e = tf.reprojection_error(x, u, k);
        if e <= thr {
            ids.push(i);
            err += e;
        }
    }
    (ids, err)
}

fn subset<T: Copy>(v: &[T], ids: &[usize]) -> Vec<T> {
    ids.iter().map(|&i| v[i]).collect()
}

/// RANSAC over 2D–3D correspondences `(pts[i], px[i])`.
pub fn solve_pnp_ransac(
    pts: &[Vector3<f64>],
    px: &[Vector2<f64>],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PoseEstimate, LocalizeError> {
    let n = pts.len();
    if n < 4 || px.len() != n {
        return Err(LocalizeError::InsufficientMatches(n.min(px.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(CameraTransform, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed.min(cfg.max_iterations) {
        it += 1;
        let s = sample(&mut rng, n, 4).into_vec();
        let tri = [pts[s[0]], pts[s[1]], pts[s[2]]];
        let uv = [px[s[0]], px[s[1]], px[s[2]]];
        let Some(hyp) = p3p(&tri, &uv, k)
            .into_iter()
            .map(|tf| (tf.reprojection_error(&pts[s[3]], &px[s[3]], k), tf))
            .filter(|(e, _)| e.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, tf)| tf)
        else {
            continue;
        };
        let (ids, err) = inliers_of(&hyp, pts, px, k, cfg.threshold_px);
        let better = match &best {
            None => true,
            Some((_, c, e)) => ids.len() > *c || (ids.len() == *c && err < *e),
        };
        if better {
            best = Some((hyp, ids.len(), err));
            let w = ids.len() as f64 / n as f64;
            let fail = 1.0 - w.powi(4);
            if fail <= 0.0 {
                needed = it;
            } else if fail < 1.0 {
                let est = ((1.0 - cfg.confidence).ln() / fail.ln()).ceil();
                needed = if est.is_finite() { est.max(1.0) as usize } else { cfg.max_iterations };
            }
        }
    }
    let Some((mut tf, _, _)) = best else {
        return Err(LocalizeError::NoConsensus { inliers: 0, matches: n });
    };

    let (mut ids, _) = inliers_of(&tf, pts, px, k, cfg.threshold_px);
    // Try an all-inlier EPnP seed as well and keep whichever fits better.
    if ids.len() >= 6 {
        let (ip, iu) = (subset(pts, &ids), subset(px, &ids));
        if let Some(alt) = epnp(&ip, &iu, k) {
            if mean_reprojection_error(&alt, &ip, &iu, k) < mean_reprojection_error(&tf, &ip, &iu, k) {
                tf = alt;
            }
        }
    }
    let mut converged = false;
    for _ in 0..3 {
        if ids.len() < 3 {
            break;
        }
        let (ip, iu) = (subset(pts, &ids), subset(px, &ids));
        let (refined, rep) = refine_pose(&tf, &ip, &iu, k, cfg.refine_iterations);
        tf = refined;
        converged = rep.converged;
        let (next, _) = inliers_of(&tf, pts, px, k, cfg.threshold_px);
        if next == ids {
            break;
        }
        ids = next;
    }

    let count = ids.len();
    if count < cfg.min_inliers || (count as f64) < cfg.min_inlier_ratio * n as f64 {
        return Err(LocalizeError::NoConsensus { inliers: count, matches: n });
    }
    let err = mean_reprojection_error(&tf, &subset(pts, &ids), &subset(px, &ids), k);
    Ok(PoseEstimate {
        pose: tf.to_pose(),
        inliers: ids,
        mean_reprojection_error: err,
        converged,
        iterations: it,
    })
}
