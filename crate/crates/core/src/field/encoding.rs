use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::scene::SceneBounds;

// Spatial-hash multipliers, one large prime per axis.
const PRIMES: [u64; 3] = [73_856_093, 19_349_663, 83_492_791];

/// Layout of the multi-resolution hash grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    /// Cell size of the finest level, meters.
    pub finest_resolution: f64,
    /// Cell size of the coarsest level; defaults to max(extent / 8,
    /// 4 · finest).
    pub coarsest_resolution: Option<f64>,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features_per_level: 2,
            log2_table_size: 19,
            finest_resolution: 0.06,
            coarsest_resolution: None,
        }
    }
}

impl EncodingConfig {
    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }
}

/// One hashed corner contribution recorded by `encode_with_corners`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Corner {
    /// Flat index of the entry's first feature in `tables`.
    pub offset: usize,
    pub weight: f64,
}

/// Multi-resolution hashed feature grid with trilinear lookup per level.
#[derive(Debug, Clone, PartialEq)]
pub struct HashEncoding {
    bounds: SceneBounds,
    resolutions: Vec<f64>,
    table_size: usize,
    features: usize,
    /// `levels × table_size × features`, level-major.
    pub(crate) tables: Vec<f64>,
}

impl HashEncoding {
    pub fn new(config: &EncodingConfig, bounds: SceneBounds, rng: &mut impl Rng) -> Result<Self, FieldError> {
        if config.levels == 0 || config.features_per_level == 0 {
            return Err(FieldError::InvalidConfig("levels and features_per_level must be positive".into()));
        }
        if !(config.finest_resolution > 0.0) {
            return Err(FieldError::InvalidConfig("finest_resolution must be positive".into()));
        }
        if config.log2_table_size > 26 {
            return Err(FieldError::InvalidConfig("log2_table_size above 26".into()));
        }
        let extent = bounds.extent().max();
        let finest = config.finest_resolution;
        let coarsest = config
            .coarsest_resolution
            .unwrap_or_else(|| (extent / 8.0).max(4.0 * finest));
        if config.levels > 1 && coarsest <= finest {
            return Err(FieldError::InvalidConfig(format!(
                "coarsest resolution {coarsest} must exceed finest {finest}"
            )));
        }
        let resolutions = if config.levels == 1 {
            vec![finest]
        } else {
            let growth = (coarsest / finest).powf(1.0 / (config.levels - 1) as f64);
            (0..config.levels)
                .map(|l| {
                    if l == config.levels - 1 {
                        finest
                    } else {
                        coarsest / growth.powi(l as i32)
                    }
                })
                .collect()
        };
        let table_size = 1usize << config.log2_table_size;
        let n = config.levels * table_size * config.features_per_level;
        let tables = (0..n).map(|_| rng.gen_range(-1e-4..1e-4)).collect();
        Ok(Self {
            bounds,
            resolutions,
            table_size,
            features: config.features_per_level,
            tables,
        })
    }

    pub(crate) fn from_parts(
        bounds: SceneBounds,
        resolutions: Vec<f64>,
        table_size: usize,
        features: usize,
        tables: Vec<f64>,
    ) -> Result<Self, FieldError> {
        if tables.len() != resolutions.len() * table_size * features {
            return Err(FieldError::InvalidConfig("table length does not match layout".into()));
        }
        Ok(Self {
            bounds,
            resolutions,
            table_size,
            features,
            tables,
        })
    }

    pub fn bounds(&self) -> &SceneBounds {
        &self.bounds
    }

    /// Cell size per level, coarse to fine.
    pub fn resolutions(&self) -> &[f64] {
        &self.resolutions
    }

    pub fn table_size(&self) -> usize {
        self.table_size
    }

    pub fn features_per_level(&self) -> usize {
        self.features
    }

    pub fn levels(&self) -> usize {
        self.resolutions.len()
    }

    pub fn output_dim(&self) -> usize {
        self.levels() * self.features
    }

    pub fn tables(&self) -> &[f64] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [f64] {
        &mut self.tables
    }

    /// Hash slot of integer grid vertex `v` at `level`.
    pub fn slot(&self, v: [u64; 3]) -> usize {
        let h = v[0].wrapping_mul(PRIMES[0]) ^ v[1].wrapping_mul(PRIMES[1]) ^ v[2].wrapping_mul(PRIMES[2]);
        (h % self.table_size as u64) as usize
    }

    /// Table offset of the features stored for grid vertex `v` at `level`.
    pub fn entry_offset(&self, level: usize, v: [u64; 3]) -> usize {
        (level * self.table_size + self.slot(v)) * self.features
    }

    pub fn encode(&self, p: &Vector3<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(p, &mut out, None);
        out
    }

    /// Writes the concatenated level features for `p` into `out`; when
    /// `corners` is given it receives `levels × 8` corner records.
    pub(crate) fn encode_into(&self, p: &Vector3<f64>, out: &mut [f64], mut corners: Option<&mut [Corner]>) {
        let min = self.bounds.min();
        let max = self.bounds.max();
        let f = self.features;
        for (level, &res) in self.resolutions.iter().enumerate() {
            let mut base = [0u64; 3];
            let mut frac = [0.0; 3];
            for a in 0..3 {
                let g = (p[a].clamp(min[a], max[a]) - min[a]) / res;
                let fl = g.floor();
                base[a] = fl as u64;
                frac[a] = g - fl;
            }
            let slice = &mut out[level * f..(level + 1) * f];
            slice.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..8usize {
                let mut w = 1.0;
                let mut v = base;
                for a in 0..3 {
                    if (c >> a) & 1 == 1 {
                        w *= frac[a];
                        v[a] += 1;
                    } else {
                        w *= 1.0 - frac[a];
                    }
                }
                let off = self.entry_offset(level, v);
                if w != 0.0 {
                    for (o, t) in slice.iter_mut().zip(&self.tables[off..off + f]) {
                        *o += w * t;
                    }
                }
                if let Some(cs) = corners.as_deref_mut() {
                    cs[level * 8 + c] = Corner { offset: off, weight: w };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn enc() -> HashEncoding {
        let cfg = EncodingConfig {
            levels: 4,
            features_per_level: 2,
            log2_table_size: 12,
            finest_resolution: 0.1,
            coarsest_resolution: None,
        };
        let b = SceneBounds::new(Vector3::zeros(), Vector3::new(2.0, 1.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut e = HashEncoding::new(&cfg, b, &mut rng).unwrap();
        for v in e.tables_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        e
    }

    #[test]
    fn resolutions_strictly_decrease_to_finest() {
        let e = enc();
        let r = e.resolutions();
        assert_eq!(r.len(), 4);
        assert!(r.windows(2).all(|w| w[0] > w[1]));
        assert!((r[3] - 0.1).abs() < 1e-15);
        assert!((r[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn grid_vertex_lookup_is_exact() {
        let e = enc();
        for level in 0..e.levels() {
            let res = e.resolutions()[level];
            let v = [2u64, 1, 1];
            let p = Vector3::new(v[0] as f64 * res, v[1] as f64 * res, v[2] as f64 * res);
            let out = e.encode(&p);
            let off = e.entry_offset(level, v);
            for k in 0..2 {
                assert_eq!(out[level * 2 + k], e.tables()[off + k], "level {level}");
            }
        }
    }

    #[test]
    fn encoding_is_continuous_and_deterministic() {
        let e = enc();
        let p = Vector3::new(0.731, 0.377, 0.512);
        let a = e.encode(&p);
        assert_eq!(a, e.encode(&p));
        let finest = *e.resolutions().last().unwrap();
        for eps in [1e-3, 1e-5, 1e-7] {
            let b = e.encode(&(p + Vector3::new(eps, -eps, eps)));
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            // Entries are bounded by 1, so the slope is at most ~ levels·F·√3 / finest.
            let bound = 8.0 * 3f64.sqrt() * 3.0 * eps / finest;
            assert!(diff <= bound, "eps {eps}: {diff} > {bound}");
        }
    }

    #[test]
    fn points_outside_bounds_are_clamped() {
        let e = enc();
        let inside = e.encode(&Vector3::new(2.0, 1.0, 0.5));
        let outside = e.encode(&Vector3::new(5.0, 3.0, 0.5));
        assert_eq!(inside, outside);
    }

    #[test]
    fn rejects_inverted_resolution_range() {
        let cfg = EncodingConfig {
            coarsest_resolution: Some(0.05),
            ..EncodingConfig::default()
        };
        let b = SceneBounds::new(Vector3::zeros(), Vector3::repeat(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(HashEncoding::new(&cfg, b, &mut rng).is_err());
    }
}
