//! Uniform hash grid over 3D points for radius and k-nearest queries.

use std::collections::HashMap;

use nalgebra::Vector3;

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct PointGrid {
    cell: f64,
    map: HashMap<Cell, Vec<usize>>,
    points: Vec<Vector3<f64>>,
}

impl PointGrid {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        Self {
            cell,
            map: HashMap::new(),
            points: Vec::new(),
        }
    }

    pub fn from_points(cell: f64, points: &[Vector3<f64>]) -> Self {
        let mut g = Self::new(cell);
        for p in points {
            g.insert(*p);
        }
        g
    }

    fn key(&self, p: &Vector3<f64>) -> Cell {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    /// Inserts `p` and returns its id (insertion order).
    pub fn insert(&mut self, p: Vector3<f64>) -> usize {
        let id = self.points.len();
        let k = self.key(&p);
        self.map.entry(k).or_default().push(id);
        self.points.push(p);
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> &Vector3<f64> {
        &self.points[id]
    }

    /// True if some stored point lies strictly closer than `r` to `p`.
    pub fn any_within(&self, p: &Vector3<f64>, r: f64) -> bool {
        let mut hit = false;
        self.visit_within(p, r, |_, d2| {
            hit |= d2 < r * r;
        });
        hit
    }

    /// Calls `f(id, squared distance)` for every point within `r` of `p`
    /// (and possibly some slightly farther).
    pub fn visit_within(&self, p: &Vector3<f64>, r: f64, mut f: impl FnMut(usize, f64)) {
        let reach = (r / self.cell).ceil() as i64;
        let (cx, cy, cz) = self.key(p);
        // Very large radii relative to the cell: scan everything.
        if reach > 64 {
            for (id, q) in self.points.iter().enumerate() {
                f(id, (q - p).norm_squared());
            }
            return;
        }
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if let Some(ids) = self.map.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &id in ids {
                            f(id, (self.points[id] - p).norm_squared());
                        }
                    }
                }
            }
        }
    }

    /// Distance from `points[i]` to its k-th nearest other point, for every
    /// stored point; `None` when fewer than k others exist.
    pub fn kth_neighbor_distances(&self, k: usize) -> Vec<Option<f64>> {
        (0..self.points.len()).map(|i| self.kth_neighbor_distance(i, k)).collect()
    }

    /// Distance from `points[i]` to its k-th nearest other point.
    pub fn kth_neighbor_distance(&self, i: usize, k: usize) -> Option<f64> {
        if self.points.len() <= k {
            return None;
        }
        let p = self.points[i];
        let mut r = self.cell;
        loop {
            let mut d: Vec<f64> = Vec::new();
            self.visit_within(&p, r, |id, d2| {
                if id != i && d2 <= r * r {
                    d.push(d2);
                }
            });
            if d.len() >= k {
                d.sort_by(f64::total_cmp);
                return Some(d[k - 1].sqrt());
            }
            r *= 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kth_neighbor_on_a_line() {
        let pts: Vec<_> = (0..6).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let g = PointGrid::from_points(0.05, &pts);
        let d = g.kth_neighbor_distances(3);
        assert!((d[0].unwrap() - 0.3).abs() < 1e-12);
        assert!((d[2].unwrap() - 0.2).abs() < 1e-12);
        assert!(g.any_within(&Vector3::new(0.14, 0.0, 0.0), 0.05));
        assert!(!g.any_within(&Vector3::new(0.15, 0.04, 0.0), 0.05));
        assert_eq!(PointGrid::from_points(1.0, &pts[..2]).kth_neighbor_distances(3), vec![None, None]);
    }
}
