//! Mutual-nearest-neighbour 2D–3D descriptor matching under cosine similarity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub min_cosine: f64,
    /// Best/second-best angular distance must fall below this ratio.
    pub ratio: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            min_cosine: 0.7,
            ratio: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match2D3D {
    pub keypoint_index: usize,
    /// Row in the candidate set.
    pub landmark_index: usize,
    pub cosine: f64,
}

#[derive(Clone, Copy)]
struct Best {
    idx: usize,
    cos: f64,
    second: f64,
}

fn ratio_ok(b: &Best, ratio: f64) -> bool {
    if b.second == f64::NEG_INFINITY {
        return true;
    }
    let t1 = b.cos.clamp(-1.0, 1.0).acos();
    let t2 = b.second.clamp(-1.0, 1.0).acos();
    t1 < ratio * t2
}

fn scan(values: impl Iterator<Item = f64>) -> Option<Best> {
    let mut best: Option<Best> = None;
    for (i, c) in values.enumerate() {
        match &mut best {
            None => {
                best = Some(Best {
                    idx: i,
                    cos: c,
                    second: f64::NEG_INFINITY,
                })
            }
            Some(b) => {
                if c > b.cos {
                    b.second = b.cos;
                    b.cos = c;
                    b.idx = i;
                } else if c > b.second {
                    b.second = c;
                }
            }
        }
    }
    best
}

/// Matches unit-norm query descriptors (rows of `query`) against unit-norm
/// candidate descriptors (rows of `cands`). A pair is kept when each side is
/// the other's best, the cosine clears the floor and both sides pass the
/// angular ratio test.
pub fn match_descriptors(query: &DMatrix<f64>, cands: &DMatrix<f64>, cfg: &MatchConfig) -> Vec<Match2D3D> {
    if query.nrows() == 0 || cands.nrows() == 0 || query.ncols() != cands.ncols() {
        return Vec::new();
    }
    let sim = query * cands.transpose();
    let rows: Vec<Option<Best>> = (0..sim.nrows()).map(|i| scan(sim.row(i).iter().copied())).collect();
    let cols: Vec<Option<Best>> = (0..sim.ncols()).map(|j| scan(sim.column(j).iter().copied())).collect();
    let mut out = Vec::new();
    for (i, rb) in rows.iter().enumerate() {
        let Some(rb) = rb else { continue };
        let Some(cb) = &cols[rb.idx] else { continue };
        if cb.idx != i || rb.cos < cfg.min_cosine {
            continue;
        }
        if ratio_ok(rb, cfg.ratio) && ratio_ok(cb, cfg.ratio) {
            out.push(Match2D3D {
                keypoint_index: i,
                landmark_index: rb.idx,
                cosine: rb.cos,
            });
        }
    }
    out
}
