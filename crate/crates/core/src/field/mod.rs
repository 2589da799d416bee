//! Scene-specific 3D descriptor function: hash-grid encoding followed by an
//! MLP decoder with L2-normalized output, trained by cosine distillation.

mod decoder;
mod encoding;
mod train;

pub use decoder::{DescriptorDecoder, Linear};
pub use encoding::{EncodingConfig, HashEncoding};
pub use train::{distill, DistillConfig, FieldGradient, TrainingLog};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::SceneBounds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid field configuration: {0}")]
    InvalidConfig(String),
    #[error("no distillation samples")]
    EmptySamples,
    #[error("target dimension {got} does not match descriptor dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite distillation loss at step {0}")]
    NonFiniteLoss(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    pub hidden: usize,
    /// Number of linear layers in the decoder.
    pub layers: usize,
    pub descriptor_dim: usize,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            encoding: EncodingConfig::default(),
            hidden: 128,
            layers: 4,
            descriptor_dim: 256,
            seed: 0,
        }
    }
}

// Points per matrix batch during inference.
const DECODE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    pub encoding: HashEncoding,
    pub decoder: DescriptorDecoder,
}

impl DescriptorField {
    pub fn new(config: &FieldConfig, bounds: SceneBounds) -> Result<Self, FieldError> {
        if config.layers < 1 || config.hidden == 0 || config.descriptor_dim == 0 {
            return Err(FieldError::InvalidConfig("decoder needs ≥1 layer and positive widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoding = HashEncoding::new(&config.encoding, bounds, &mut rng)?;
        let mut dims = vec![encoding.output_dim()];
        dims.extend(std::iter::repeat(config.hidden).take(config.layers - 1));
        dims.push(config.descriptor_dim);
        let decoder = DescriptorDecoder::new(&dims, &mut rng);
        Ok(Self { encoding, decoder })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    /// Column-per-point encoding matrix.
    pub(crate) fn encode_batch(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        let d = self.encoding.output_dim();
        let mut x = DMatrix::zeros(d, points.len());
        for (j, p) in points.iter().enumerate() {
            self.encoding
                .encode_into(p, x.column_mut(j).as_mut_slice(), None);
        }
        x
    }

    fn decode_chunk(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        let mut y = self.decoder.forward(self.encode_batch(points));
        normalize_columns(&mut y);
        y
    }

    /// Unit-norm descriptor at `p`.
    pub fn decode(&self, p: &Vector3<f64>) -> DVector<f64> {
        self.decode_chunk(std::slice::from_ref(p)).column(0).into_owned()
    }

    /// Row `i` of the result is the descriptor of `points[i]`.
    pub fn batch_decode(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        let dim = self.descriptor_dim();
        let chunks: Vec<DMatrix<f64>> = points
            .par_chunks(DECODE_CHUNK)
            .map(|c| self.decode_chunk(c))
            .collect();
        let mut out = DMatrix::zeros(points.len(), dim);
        let mut row = 0;
        for c in chunks {
            for j in 0..c.ncols() {
                out.row_mut(row).tr_copy_from(&c.column(j));
                row += 1;
            }
        }
        out
    }
}

/// Normalizes each column; zero columns are left as zero.
pub(crate) fn normalize_columns(y: &mut DMatrix<f64>) {
    for mut col in y.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(super) fn small_field(seed: u64) -> DescriptorField {
        let cfg = FieldConfig {
            encoding: EncodingConfig {
                levels: 4,
                features_per_level: 2,
                log2_table_size: 10,
                finest_resolution: 0.06,
                coarsest_resolution: None,
            },
            hidden: 16,
            layers: 4,
            descriptor_dim: 8,
            seed,
        };
        let b = SceneBounds::new(Vector3::zeros(), Vector3::repeat(1.0));
        DescriptorField::new(&cfg, b).unwrap()
    }

    #[test]
    fn decode_is_unit_norm_and_deterministic() {
        let f = DescriptorField::new(
            &FieldConfig::default(),
            SceneBounds::new(Vector3::zeros(), Vector3::new(3.0, 2.5, 2.2)),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = Vector3::new(rng.gen_range(-0.5..3.5), rng.gen_range(0.0..2.5), rng.gen_range(0.0..2.2));
            let g = f.decode(&p);
            assert_eq!(g.len(), 256);
            assert!((g.norm() - 1.0).abs() < 1e-6);
            assert_eq!(g, f.decode(&p));
        }
    }

    #[test]
    fn zeroed_final_layer_yields_normalized_bias() {
        let mut f = small_field(1);
        let last = f.decoder.layers.last_mut().unwrap();
        last.w.fill(0.0);
        for (i, b) in last.b.iter_mut().enumerate() {
            *b = i as f64 - 2.5;
        }
        let expect = last.b.normalize();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            assert!((f.decode(&p) - &expect).amax() < 1e-12);
        }
    }

    #[test]
    fn batch_decode_matches_decode_and_permutes() {
        let f = small_field(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vector3<f64>> = (0..700).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let m = f.batch_decode(&pts);
        for (i, p) in pts.iter().enumerate() {
            let g = f.decode(p);
            assert!((m.row(i).transpose() - g).amax() < 1e-9);
        }
        let single = f.batch_decode(&pts[..1]);
        assert!((single.row(0).transpose() - f.decode(&pts[0])).amax() < 1e-9);
        let rev: Vec<_> = pts.iter().rev().copied().collect();
        let mr = f.batch_decode(&rev);
        for i in 0..pts.len() {
            assert!((mr.row(i) - m.row(pts.len() - 1 - i)).amax() < 1e-9);
        }
    }
}
