use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::Linear;
use super::encoding::Corner;
use super::{normalize_columns, DescriptorField, FieldError};
use crate::volume::SurfaceSamples;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS_MLP: f64 = 1e-8;
const EPS_TABLE: f64 = 1e-15;
// Samples used for the final cosine report.
const REPORT_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub steps: usize,
    pub lr: f64,
    /// Points per step; when the sample set is no larger, every step is
    /// full-batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-3,
            batch_size: 4096,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
    pub final_mean_cos: f64,
}

impl TrainingLog {
    /// Mean loss over consecutive non-overlapping windows.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks_exact(window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Dense gradient of the distillation loss, for verification.
#[derive(Debug, Clone)]
pub struct FieldGradient {
    pub tables: Vec<f64>,
    pub layers: Vec<Linear>,
}

/// Sparse accumulator over table entries touched in one step.
struct TableGrad {
    values: Vec<f64>,
    marked: Vec<bool>,
    touched: Vec<usize>,
    features: usize,
}

impl TableGrad {
    fn new(len: usize, features: usize) -> Self {
        Self {
            values: vec![0.0; len],
            marked: vec![false; len / features],
            touched: Vec::new(),
            features,
        }
    }

    fn add(&mut self, offset: usize, g: &[f64]) {
        let e = offset / self.features;
        if !self.marked[e] {
            self.marked[e] = true;
            self.touched.push(e);
        }
        for (k, v) in g.iter().enumerate() {
            self.values[offset + k] += v;
        }
    }

    fn clear(&mut self) {
        for &e in &self.touched {
            self.marked[e] = false;
            let o = e * self.features;
            self.values[o..o + self.features].iter_mut().for_each(|v| *v = 0.0);
        }
        self.touched.clear();
    }
}

/// `targets` holds one column per point. Returns the mean `1 − cos` loss.
fn loss_and_backward(
    field: &DescriptorField,
    points: &[Vector3<f64>],
    targets: &DMatrix<f64>,
    table_grad: &mut TableGrad,
) -> (f64, Vec<Linear>) {
    let enc = &field.encoding;
    let levels = enc.levels();
    let f = enc.features_per_level();
    let n = points.len();
    let mut x = DMatrix::zeros(enc.output_dim(), n);
    let mut corners = vec![Corner::default(); n * levels * 8];
    for (j, p) in points.iter().enumerate() {
        enc.encode_into(
            p,
            x.column_mut(j).as_mut_slice(),
            Some(&mut corners[j * levels * 8..(j + 1) * levels * 8]),
        );
    }
    let (y, cache) = field.decoder.forward_cached(x);
    let mut yhat = y.clone();
    normalize_columns(&mut yhat);
    let mut t = targets.clone();
    normalize_columns(&mut t);

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut d_out = DMatrix::zeros(y.nrows(), n);
    for j in 0..n {
        let norm = y.column(j).norm();
        let c = yhat.column(j).dot(&t.column(j));
        loss += 1.0 - c;
        if norm > 0.0 {
            let g = -(t.column(j) - yhat.column(j) * c) * (inv_n / norm);
            d_out.set_column(j, &g);
        }
    }
    let (layer_grads, dx) = field.decoder.backward(&cache, d_out);

    let mut buf = vec![0.0; f];
    for j in 0..n {
        let col = dx.column(j);
        for l in 0..levels {
            for c in &corners[(j * levels + l) * 8..(j * levels + l + 1) * 8] {
                if c.weight == 0.0 {
                    continue;
                }
                for k in 0..f {
                    buf[k] = c.weight * col[l * f + k];
                }
                table_grad.add(c.offset, &buf);
            }
        }
    }
    (loss * inv_n, layer_grads)
}

impl DescriptorField {
    /// Mean `1 − cos(decode(p_j), t_j)` with its gradient.
    pub fn loss_and_gradient(
        &self,
        points: &[Vector3<f64>],
        targets: &DMatrix<f64>,
    ) -> Result<(f64, FieldGradient), FieldError> {
        self.check_targets(points, targets)?;
        let mut tg = TableGrad::new(self.encoding.tables.len(), self.encoding.features_per_level());
        let (loss, layers) = loss_and_backward(self, points, targets, &mut tg);
        Ok((
            loss,
            FieldGradient {
                tables: tg.values,
                layers,
            },
        ))
    }

    fn check_targets(&self, points: &[Vector3<f64>], targets: &DMatrix<f64>) -> Result<(), FieldError> {
        if points.is_empty() {
            return Err(FieldError::EmptySamples);
        }
        if targets.nrows() != self.descriptor_dim() {
            return Err(FieldError::DimensionMismatch {
                expected: self.descriptor_dim(),
                got: targets.nrows(),
            });
        }
        if targets.ncols() != points.len() {
            return Err(FieldError::InvalidConfig("one target column per point required".into()));
        }
        Ok(())
    }

    /// Mean cosine between decoded descriptors and targets.
    pub fn mean_cosine(&self, points: &[Vector3<f64>], targets: &DMatrix<f64>) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let g = self.batch_decode(points);
        let mut sum = 0.0;
        for j in 0..points.len() {
            let t = targets.column(j);
            let tn = t.norm();
            if tn > 0.0 {
                sum += g.row(j).transpose().dot(&t) / tn;
            }
        }
        sum / points.len() as f64
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, i: usize, param: &mut f64, g: f64, lr_t: f64, eps: f64) {
        let m = &mut self.m[i];
        let v = &mut self.v[i];
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *param -= lr_t * *m / (v.sqrt() + eps);
    }
}

/// Fits the field to `samples` by minimizing the mean `1 − cos` loss with
/// Adam. Table moments are updated lazily, only for entries touched in a
/// step.
pub fn distill(
    field: &mut DescriptorField,
    samples: &SurfaceSamples,
    config: &DistillConfig,
) -> Result<TrainingLog, FieldError> {
    let n = samples.len();
    if n == 0 {
        return Err(FieldError::EmptySamples);
    }
    field.check_targets(&samples.points, &samples.features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let features = field.encoding.features_per_level();
    let mut tg = TableGrad::new(field.encoding.tables.len(), features);
    let mut table_adam = AdamState::zeros(field.encoding.tables.len());
    let mut mlp_adam: Vec<(AdamState, AdamState)> = field
        .decoder
        .layers
        .iter()
        .map(|l| (AdamState::zeros(l.w.len()), AdamState::zeros(l.b.len())))
        .collect();

    let full_batch = n <= config.batch_size;
    let (mut pts, mut tgt);
    if full_batch {
        pts = samples.points.clone();
        tgt = samples.features.clone();
    } else {
        pts = vec![Vector3::zeros(); config.batch_size];
        tgt = DMatrix::zeros(samples.features.nrows(), config.batch_size);
    }

    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        if !full_batch {
            for j in 0..config.batch_size {
                let i = rng.gen_range(0..n);
                pts[j] = samples.points[i];
                tgt.set_column(j, &samples.features.column(i));
            }
        }
        let (loss, grads) = loss_and_backward(field, &pts, &tgt, &mut tg);
        if !loss.is_finite() {
            return Err(FieldError::NonFiniteLoss(step));
        }
        losses.push(loss);

        let t = (step + 1) as i32;
        let lr_t = config.lr * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t));
        for (layer, (g, (am, ab))) in field
            .decoder
            .layers
            .iter_mut()
            .zip(grads.iter().zip(mlp_adam.iter_mut()))
        {
            for (i, (p, &gv)) in layer.w.iter_mut().zip(g.w.iter()).enumerate() {
                am.update(i, p, gv, lr_t, EPS_MLP);
            }
            for (i, (p, &gv)) in layer.b.iter_mut().zip(g.b.iter()).enumerate() {
                ab.update(i, p, gv, lr_t, EPS_MLP);
            }
        }
        let tables = &mut field.encoding.tables;
        for &e in &tg.touched {
            for k in e * features..(e + 1) * features {
                table_adam.update(k, &mut tables[k], tg.values[k], lr_t, EPS_TABLE);
            }
        }
        tg.clear();
        if step % 100 == 0 {
            log::debug!("distill step {step}: loss {loss:.5}");
        }
    }

    let stride = (n / REPORT_SAMPLES).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let rp: Vec<Vector3<f64>> = idx.iter().map(|&i| samples.points[i]).collect();
    let rt = samples.features.select_columns(&idx);
    let final_mean_cos = field.mean_cosine(&rp, &rt);
    Ok(TrainingLog {
        losses,
        final_mean_cos,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{EncodingConfig, FieldConfig};
    use super::*;
    use crate::scene::SceneBounds;

    fn field(levels: usize, log2: u32, dim: usize) -> DescriptorField {
        let cfg = FieldConfig {
            encoding: EncodingConfig {
                levels,
                features_per_level: 2,
                log2_table_size: log2,
                finest_resolution: 0.06,
                coarsest_resolution: None,
            },
            hidden: 32,
            layers: 4,
            descriptor_dim: dim,
            seed: 11,
        };
        DescriptorField::new(&cfg, SceneBounds::new(Vector3::zeros(), Vector3::repeat(1.0))).unwrap()
    }

    fn random_samples(n: usize, dim: usize, seed: u64) -> (Vec<Vector3<f64>>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let mut t = DMatrix::from_fn(dim, n, |_, _| rng.gen_range(-1.0..1.0));
        normalize_columns(&mut t);
        (pts, t)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-7)
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut f = field(4, 10, 8);
        // Make table entries large enough that the loss depends on them.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        f.encoding.tables_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let (pts, t) = random_samples(16, 8, 9);
        let (_, grad) = f.loss_and_gradient(&pts, &t).unwrap();
        let h = 1e-4;
        let mut errs = Vec::new();
        for li in 0..f.decoder.layers.len() {
            for _ in 0..25 {
                let n = f.decoder.layers[li].w.len();
                let k = rng.gen_range(0..n);
                let mut fp = f.clone();
                fp.decoder.layers[li].w[k] += h;
                let mut fm = f.clone();
                fm.decoder.layers[li].w[k] -= h;
                let lp = fp.loss_and_gradient(&pts, &t).unwrap().0;
                let lm = fm.loss_and_gradient(&pts, &t).unwrap().0;
                errs.push(rel_err((lp - lm) / (2.0 * h), grad.layers[li].w[k]));
            }
            let kb = rng.gen_range(0..f.decoder.layers[li].b.len());
            let mut fp = f.clone();
            fp.decoder.layers[li].b[kb] += h;
            let mut fm = f.clone();
            fm.decoder.layers[li].b[kb] -= h;
            let lp = fp.loss_and_gradient(&pts, &t).unwrap().0;
            let lm = fm.loss_and_gradient(&pts, &t).unwrap().0;
            errs.push(rel_err((lp - lm) / (2.0 * h), grad.layers[li].b[kb]));
        }
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn table_gradient_matches_finite_differences() {
        let mut f = field(3, 8, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        f.encoding.tables_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let (pts, t) = random_samples(6, 6, 4);
        let (_, grad) = f.loss_and_gradient(&pts, &t).unwrap();
        let touched: Vec<usize> = (0..grad.tables.len()).filter(|&i| grad.tables[i] != 0.0).collect();
        assert!(!touched.is_empty());
        let h = 1e-4;
        for &k in touched.iter().step_by((touched.len() / 20).max(1)) {
            let mut fp = f.clone();
            fp.encoding.tables_mut()[k] += h;
            let mut fm = f.clone();
            fm.encoding.tables_mut()[k] -= h;
            let lp = fp.loss_and_gradient(&pts, &t).unwrap().0;
            let lm = fm.loss_and_gradient(&pts, &t).unwrap().0;
            let e = rel_err((lp - lm) / (2.0 * h), grad.tables[k]);
            assert!(e < 1e-3, "entry {k}: rel err {e}");
        }
    }

    fn samples_from(points: Vec<Vector3<f64>>, features: DMatrix<f64>) -> SurfaceSamples {
        SurfaceSamples { points, features }
    }

    #[test]
    fn constant_target_is_fitted() {
        let mut f = field(4, 12, 8);
        let (pts, _) = random_samples(512, 8, 6);
        let mut t = DMatrix::zeros(8, 512);
        for mut c in t.column_iter_mut() {
            c[3] = 1.0;
        }
        let s = samples_from(pts, t);
        let cfg = DistillConfig {
            steps: 500,
            batch_size: 256,
            ..DistillConfig::default()
        };
        let log = distill(&mut f, &s, &cfg).unwrap();
        let tail = log.losses[log.losses.len() - 1];
        assert!(tail < 0.01, "final loss {tail}");
        assert!(log.final_mean_cos > 0.99);
    }

    #[test]
    fn zero_steps_leave_field_unchanged() {
        let mut f = field(3, 8, 4);
        let before = f.clone();
        let (pts, t) = random_samples(10, 4, 1);
        let log = distill(
            &mut f,
            &samples_from(pts, t),
            &DistillConfig {
                steps: 0,
                ..DistillConfig::default()
            },
        )
        .unwrap();
        assert!(log.losses.is_empty());
        assert_eq!(f, before);
    }

    #[test]
    fn empty_samples_are_rejected() {
        let mut f = field(3, 8, 4);
        let s = samples_from(Vec::new(), DMatrix::zeros(4, 0));
        assert_eq!(distill(&mut f, &s, &DistillConfig::default()), Err(FieldError::EmptySamples));
    }
}
