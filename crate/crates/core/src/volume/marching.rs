use nalgebra::Vector3;
use rand::Rng;

use super::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle(pub [Vector3<f64>; 3]);

impl Triangle {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.0;
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Isosurface at level 0 of a sampled grid. Cubes with any unobserved
/// corner, or whose corners all sit at the truncation limit on one side of
/// a sign change, are skipped.
pub fn marching_cubes(
    dims: [usize; 3],
    truncation: f64,
    value: impl Fn(usize, usize, usize) -> Option<f64>,
    position: impl Fn(usize, usize, usize) -> Vector3<f64>,
) -> Vec<Triangle> {
    let mut out = Vec::new();
    let limit = truncation * 0.999;
    for z in 0..dims[2] - 1 {
        for y in 0..dims[1] - 1 {
            'cube: for x in 0..dims[0] - 1 {
                let mut vals = [0.0; 8];
                let mut pos = [Vector3::zeros(); 8];
                let mut index = 0usize;
                for (i, c) in CORNERS.iter().enumerate() {
                    let Some(v) = value(x + c[0], y + c[1], z + c[2]) else {
                        continue 'cube;
                    };
                    vals[i] = v;
                    pos[i] = position(x + c[0], y + c[1], z + c[2]);
                    if v < 0.0 {
                        index |= 1 << i;
                    }
                }
                let edges = EDGE_TABLE[index];
                if edges == 0 {
                    continue;
                }
                // A jump straight from +trunc to -trunc carries no surface
                // information (e.g. across an unobserved back face).
                if vals.iter().all(|v| v.abs() >= limit) {
                    continue;
                }
                let mut verts = [Vector3::zeros(); 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if edges & (1 << e) != 0 {
                        let (va, vb) = (vals[*a], vals[*b]);
                        let t = if (vb - va).abs() > 1e-15 { -va / (vb - va) } else { 0.5 };
                        verts[e] = pos[*a] + (pos[*b] - pos[*a]) * t.clamp(0.0, 1.0);
                    }
                }
                let tri = &TRIANGLE_TABLE[index];
                for k in (0..16).step_by(3) {
                    if tri[k] < 0 {
                        break;
                    }
                    let t = Triangle([
                        verts[tri[k] as usize],
                        verts[tri[k + 1] as usize],
                        verts[tri[k + 2] as usize],
                    ]);
                    if t.area() > 0.0 {
                        out.push(t);
                    }
                }
            }
        }
    }
    out
}

/// `n` points distributed uniformly over the surface, each with the index
/// of the triangle it was drawn from.
pub fn sample_triangles(tris: &[Triangle], n: usize, rng: &mut impl Rng) -> Vec<(Vector3<f64>, usize)> {
    if tris.is_empty() {
        return Vec::new();
    }
    let mut cdf = Vec::with_capacity(tris.len());
    let mut total = 0.0;
    for t in tris {
        total += t.area();
        cdf.push(total);
    }
    (0..n)
        .map(|_| {
            let r = rng.gen::<f64>() * total;
            let i = cdf.partition_point(|&c| c <= r).min(tris.len() - 1);
            let [a, b, c] = tris[i].0;
            let s = rng.gen::<f64>().sqrt();
            let t = rng.gen::<f64>();
            (a * (1.0 - s) + b * (s * (1.0 - t)) + c * (s * t), i)
        })
        .collect()
}
