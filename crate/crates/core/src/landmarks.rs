//! Saliency scoring of key primitives and greedy spatial-coverage landmark
//! selection with a shrinking exclusion radius.

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_point, sigmoid, unproject_pixel};
use crate::keyframe::KeyframeRecord;
use crate::render::render;
use crate::scene::{GaussianPrimitive, SceneModel};
use crate::spatial::PointGrid;

/// Denominator guard in the consistency term.
pub const CONSISTENCY_EPS: f64 = 1e-9;
/// The exclusion radius is never halved below this (meters).
pub const MIN_RADIUS: f64 = 1e-4;
const MIN_VIEW_DISTANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandmarkError {
    #[error("no observations")]
    NoObservations,
    #[error("camera {0} coincides with the primitive center")]
    DegenerateObservation(usize),
    #[error("no candidates to select from")]
    EmptyInput,
    #[error("invalid selection parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera_center: Vector3<f64>,
    /// Distance from the primitive center to the surface point this camera
    /// sees at the primitive's projection.
    pub surface_distance: f64,
}

/// Observations per primitive, indexed like the scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    pub per_primitive: Vec<Vec<Observation>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyRecord {
    pub primitive_index: usize,
    pub sig: f64,
    pub gen: f64,
    pub geo: f64,
    pub total: f64,
}

pub fn significance(prim: &GaussianPrimitive) -> f64 {
    sigmoid(prim.landmark_logit)
}

/// Largest angle between viewing directions; fails on a camera at the
/// center.
pub fn try_generalizability(mu: &Vector3<f64>, cameras: &[Vector3<f64>]) -> Result<f64, LandmarkError> {
    let mut dirs = Vec::with_capacity(cameras.len());
    for (i, o) in cameras.iter().enumerate() {
        let d = o - mu;
        let n = d.norm();
        if n < MIN_VIEW_DISTANCE {
            return Err(LandmarkError::DegenerateObservation(i));
        }
        dirs.push(d / n);
    }
    Ok(max_pair_angle(&dirs))
}

/// Largest angle between viewing directions; degenerate cameras are skipped.
pub fn generalizability(mu: &Vector3<f64>, cameras: &[Vector3<f64>]) -> f64 {
    let dirs: Vec<Vector3<f64>> = cameras
        .iter()
        .filter_map(|o| {
            let d = o - mu;
            let n = d.norm();
            if n < MIN_VIEW_DISTANCE {
                log::debug!("skipping camera coincident with primitive at {mu:?}");
                None
            } else {
                Some(d / n)
            }
        })
        .collect();
    max_pair_angle(&dirs)
}

fn max_pair_angle(dirs: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            best = best.max(dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0).acos());
        }
    }
    best
}

/// min(2, tr / mean) + min(2, tr / std) over the surface distances.
pub fn geometry_consistency(distances: &[f64], tr: f64) -> Result<f64, LandmarkError> {
    if distances.is_empty() {
        return Err(LandmarkError::NoObservations);
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok((tr / mean.max(CONSISTENCY_EPS)).min(2.0) + (tr / std.max(CONSISTENCY_EPS)).min(2.0))
}

pub fn saliency(
    index: usize,
    prim: &GaussianPrimitive,
    obs: &[Observation],
    tr: f64,
) -> Result<SaliencyRecord, LandmarkError> {
    let dists: Vec<f64> = obs.iter().map(|o| o.surface_distance).collect();
    let geo = geometry_consistency(&dists, tr)?;
    let cams: Vec<Vector3<f64>> = obs.iter().map(|o| o.camera_center).collect();
    let gen = generalizability(&prim.mu, &cams);
    let sig = significance(prim);
    Ok(SaliencyRecord {
        primitive_index: index,
        sig,
        gen,
        geo,
        total: 2.0 * sig + gen.min(2.0) + geo,
    })
}

/// Visibility proxy: a primitive observes keyframe `i` when its center
/// projects inside the image and the alpha-normalized rendered depth there
/// agrees with its own depth within `tolerance`.
pub fn build_observations(
    scene: &SceneModel,
    keyframes: &[KeyframeRecord],
    tolerance: f64,
    only_keys: bool,
) -> ObservationSet {
    let n = scene.len();
    let mut per_primitive = vec![Vec::new(); n];
    for kf in keyframes {
        let maps = render(scene, &kf.pose, &kf.intrinsics);
        let k = &kf.intrinsics;
        let center = kf.pose.center();
        let hits: Vec<(usize, Observation)> = scene
            .primitives()
            .par_iter()
            .enumerate()
            .filter(|(_, p)| !only_keys || p.is_key)
            .filter_map(|(i, p)| {
                let (u, z) = project_point(&p.mu, &kf.pose, k).ok()?;
                let (x, y) = (u.x.round(), u.y.round());
                if x < 0.0 || y < 0.0 || x >= k.width as f64 || y >= k.height as f64 {
                    return None;
                }
                let (xi, yi) = (x as usize, y as usize);
                let alpha = maps.alpha.get(xi, yi);
                if alpha <= 0.5 {
                    return None;
                }
                if (maps.depth.get(xi, yi) / alpha - z).abs() >= tolerance {
                    return None;
                }
                let d = kf
                    .depth
                    .bilinear_where(u.x, u.y, |v| v > 0.0 && v <= crate::keyframe::MAX_DEPTH)?;
                let surf = unproject_pixel(&Vector2::new(u.x, u.y), d, &kf.pose, k).ok()?;
                Some((
                    i,
                    Observation {
                        camera_center: center,
                        surface_distance: (p.mu - surf).norm(),
                    },
                ))
            })
            .collect();
        for (i, o) in hits {
            per_primitive[i].push(o);
        }
    }
    ObservationSet { per_primitive }
}

/// Saliency of every key primitive with at least one observation.
pub fn score_key_primitives(scene: &SceneModel, obs: &ObservationSet, tr: f64) -> Vec<SaliencyRecord> {
    scene
        .primitives()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_key)
        .filter_map(|(i, p)| saliency(i, p, obs.per_primitive.get(i)?, tr).ok())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Stable identifier (primitive index); also the saliency tie-break.
    pub index: usize,
    pub position: Vector3<f64>,
    pub saliency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Candidate identifiers in pick order.
    pub indices: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    /// Exclusion radius each landmark was accepted under (0 for forced picks).
    pub pick_radii: Vec<f64>,
    /// Exclusion radius in force when selection stopped; 0 when candidates
    /// closer than the radius floor had to be admitted to exhaust the set.
    pub final_radius: f64,
}

fn ranked(cands: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .saliency
            .total_cmp(&cands[a].saliency)
            .then(cands[a].index.cmp(&cands[b].index))
    });
    order
}

fn check_inputs(cands: &[Candidate], r0: f64, n: usize) -> Result<(), LandmarkError> {
    if cands.is_empty() {
        return Err(LandmarkError::EmptyInput);
    }
    if n == 0 || !(r0 > 0.0) {
        return Err(LandmarkError::InvalidParameters(format!("N = {n}, r0 = {r0}")));
    }
    Ok(())
}

/// Greedy saliency-ordered selection: repeatedly take the most salient
/// candidate farther than `r` from every selected one, halving `r` when none
/// qualifies, until `n` are chosen or the candidates run out.
pub fn select_landmarks(cands: &[Candidate], r0: f64, n: usize) -> Result<Selection, LandmarkError> {
    check_inputs(cands, r0, n)?;
    let order = ranked(cands);
    let target = n.min(cands.len());
    let mut grid = PointGrid::new(r0);
    let mut taken = vec![false; cands.len()];
    let mut picks: Vec<usize> = Vec::with_capacity(target);
    let mut radii: Vec<f64> = Vec::with_capacity(target);
    let mut r = r0;
    // Within one radius phase the admissible set only shrinks, so a single
    // ranked pass yields exactly the successive argmax picks.
    while picks.len() < target {
        let before = picks.len();
        for &c in &order {
            if picks.len() == target {
                break;
            }
            if taken[c] {
                continue;
            }
            let p = &cands[c].position;
            let mut blocked = false;
            grid.visit_within(p, r, |_, d2| blocked |= d2 <= r * r);
            if !blocked {
                taken[c] = true;
                picks.push(c);
                radii.push(r);
                grid.insert(*p);
            }
        }
        if picks.len() == target {
            break;
        }
        if picks.len() == before {
            if r <= MIN_RADIUS {
                // Only near-coincident candidates remain.
                for &c in &order {
                    if picks.len() == target {
                        break;
                    }
                    if !taken[c] {
                        taken[c] = true;
                        picks.push(c);
                        radii.push(0.0);
                    }
                }
                r = 0.0;
                break;
            }
            r = (r / 2.0).max(MIN_RADIUS);
        } else if r > MIN_RADIUS {
            r = (r / 2.0).max(MIN_RADIUS);
        }
    }
    Ok(finish(cands, picks, radii, r))
}

fn finish(cands: &[Candidate], picks: Vec<usize>, pick_radii: Vec<f64>, r: f64) -> Selection {
    Selection {
        indices: picks.iter().map(|&c| cands[c].index).collect(),
        positions: picks.iter().map(|&c| cands[c].position.into()).collect(),
        pick_radii,
        final_radius: r,
    }
}

/// Direct simulation of the greedy rule, O(N·|P|²); for verification.
pub fn select_landmarks_reference(cands: &[Candidate], r0: f64, n: usize) -> Result<Selection, LandmarkError> {
    check_inputs(cands, r0, n)?;
    let target = n.min(cands.len());
    let mut picks: Vec<usize> = Vec::new();
    let mut radii: Vec<f64> = Vec::new();
    let mut r = r0;
    while picks.len() < target {
        let mut best: Option<usize> = None;
        for c in 0..cands.len() {
            if picks.contains(&c) {
                continue;
            }
            let far = picks
                .iter()
                .all(|&s| (cands[s].position - cands[c].position).norm_squared() > r * r);
            if !far {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    cands[c].saliency > cands[b].saliency
                        || (cands[c].saliency == cands[b].saliency && cands[c].index < cands[b].index)
                }
            };
            if better {
                best = Some(c);
            }
        }
        match best {
            Some(b) => {
                picks.push(b);
                radii.push(r);
            }
            None if r <= MIN_RADIUS => {
                for c in ranked(cands) {
                    if picks.len() == target {
                        break;
                    }
                    if !picks.contains(&c) {
                        picks.push(c);
                        radii.push(0.0);
                    }
                }
                r = 0.0;
            }
            None => r = (r / 2.0).max(MIN_RADIUS),
        }
    }
    Ok(finish(cands, picks, radii, r))
}

/// Uniformly random subset of `n` candidates (ablation comparator).
pub fn select_uniform(cands: &[Candidate], n: usize, seed: u64) -> Result<Selection, LandmarkError> {
    if cands.is_empty() {
        return Err(LandmarkError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, cands.len(), n.min(cands.len())).into_vec();
    picks.sort_unstable();
    let radii = vec![0.0; picks.len()];
    Ok(finish(cands, picks, radii, 0.0))
}

/// Candidates from saliency records.
pub fn candidates(scene: &SceneModel, records: &[SaliencyRecord]) -> Vec<Candidate> {
    records
        .iter()
        .map(|r| Candidate {
            index: r.primitive_index,
            position: scene.primitives()[r.primitive_index].mu,
            saliency: r.total,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line() -> Vec<Candidate> {
        (0..6)
            .map(|i| Candidate {
                index: i,
                position: Vector3::new(i as f64, 0.0, 0.0),
                saliency: 8.0 - i as f64,
            })
            .collect()
    }

    #[test]
    fn significance_is_logistic() {
        let mut p = GaussianPrimitive::new(Vector3::zeros(), 0.01, 0.5, Vector3::zeros());
        p.landmark_logit = 0.0;
        assert_eq!(significance(&p), 0.5);
        p.landmark_logit = 800.0;
        assert_eq!(significance(&p), 1.0);
        for i in 0..100 {
            let l = -10.0 + 0.2 * i as f64;
            p.landmark_logit = l;
            assert!((significance(&p) - 1.0 / (1.0 + (-l).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn generalizability_examples() {
        let mu = Vector3::zeros();
        assert_eq!(generalizability(&mu, &[Vector3::x()]), 0.0);
        assert!((generalizability(&mu, &[Vector3::x(), -Vector3::x()]) - PI).abs() < 1e-12);
        let at = |deg: f64| Vector3::new(deg.to_radians().cos(), deg.to_radians().sin(), 0.0) * 2.0;
        let g = generalizability(&mu, &[at(0.0), at(40.0), at(90.0)]);
        assert!((g - PI / 2.0).abs() < 1e-12);
        assert_eq!(
            try_generalizability(&mu, &[Vector3::x(), Vector3::zeros()]),
            Err(LandmarkError::DegenerateObservation(1))
        );
        assert_eq!(generalizability(&mu, &[Vector3::x(), Vector3::zeros()]), 0.0);
    }

    #[test]
    fn consistency_examples() {
        let tr = 0.01;
        assert_eq!(geometry_consistency(&[0.0, 0.0], tr).unwrap(), 4.0);
        assert_eq!(geometry_consistency(&[tr, tr, tr], tr).unwrap(), 3.0);
        assert_eq!(geometry_consistency(&[4.0 * tr], tr).unwrap(), 2.25);
        assert_eq!(geometry_consistency(&[], tr), Err(LandmarkError::NoObservations));
    }

    #[test]
    fn saliency_examples() {
        let mut p = GaussianPrimitive::new(Vector3::zeros(), 0.01, 0.5, Vector3::zeros());
        p.landmark_logit = 1e3;
        let obs = [
            Observation {
                camera_center: Vector3::x(),
                surface_distance: 0.0,
            },
            Observation {
                camera_center: -Vector3::x(),
                surface_distance: 0.0,
            },
        ];
        assert_eq!(saliency(0, &p, &obs, 0.01).unwrap().total, 8.0);
        p.landmark_logit = 0.0;
        let one = [Observation {
            camera_center: Vector3::x(),
            surface_distance: 0.01,
        }];
        let r = saliency(0, &p, &one, 0.01).unwrap();
        assert!((r.total - 4.0).abs() < 1e-12);
        assert!((r.total - (2.0 * r.sig + r.gen.min(2.0) + r.geo)).abs() < 1e-9);
        assert_eq!(saliency(0, &p, &[], 0.01), Err(LandmarkError::NoObservations));
    }

    #[test]
    fn line_example() {
        let s = select_landmarks(&line(), 2.5, 3).unwrap();
        assert_eq!(s.indices, vec![0, 3, 5]);
        assert_eq!(s.final_radius, 1.25);
    }

    #[test]
    fn single_pick_and_exhaustion() {
        let c = line();
        assert_eq!(select_landmarks(&c, 2.5, 1).unwrap().indices, vec![0]);
        let mut all = select_landmarks(&c, 2.5, 100).unwrap().indices;
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(select_landmarks(&[], 1.0, 1), Err(LandmarkError::EmptyInput));
    }

    #[test]
    fn coincident_candidates_are_admitted_at_the_floor() {
        let c: Vec<Candidate> = (0..3)
            .map(|i| Candidate {
                index: i,
                position: Vector3::zeros(),
                saliency: 1.0,
            })
            .collect();
        let s = select_landmarks(&c, 1.0, 3).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2]);
        assert_eq!(s.final_radius, 0.0);
        assert_eq!(s, select_landmarks_reference(&c, 1.0, 3).unwrap());
    }
}
