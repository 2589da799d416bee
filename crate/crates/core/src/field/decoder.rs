use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Dense affine layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.w * x;
        for mut col in y.column_iter_mut() {
            col += &self.b;
        }
        y
    }
}

/// MLP with ReLU between layers and a linear output (normalization is
/// applied by the caller).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorDecoder {
    pub layers: Vec<Linear>,
}

/// Pre-activation outputs of every layer, kept for the backward pass.
pub(crate) struct ForwardCache {
    pub input: DMatrix<f64>,
    pub pre: Vec<DMatrix<f64>>,
}

impl DescriptorDecoder {
    /// `dims = [input, hidden.., output]`; He-uniform initialization.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = (6.0 / d[0] as f64).sqrt();
                Linear {
                    w: DMatrix::from_fn(d[1], d[0], |_, _| rng.gen_range(-bound..bound)),
                    b: DVector::zeros(d[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Unnormalized output for a column-per-sample input.
    pub fn forward(&self, x: DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i + 1 < n {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h
    }

    pub(crate) fn forward_cached(&self, x: DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            h = z.clone();
            if i + 1 < n {
                h.apply(|v| *v = v.max(0.0));
            }
            pre.push(z);
        }
        (h, ForwardCache { input: x, pre })
    }

    /// Given dL/d(output), returns per-layer (dW, db) and dL/d(input).
    pub(crate) fn backward(&self, cache: &ForwardCache, d_out: DMatrix<f64>) -> (Vec<Linear>, DMatrix<f64>) {
        let n = self.layers.len();
        let mut grads: Vec<Option<Linear>> = vec![None; n];
        let mut delta = d_out;
        for i in (0..n).rev() {
            let a_prev = if i == 0 {
                cache.input.clone()
            } else {
                cache.pre[i - 1].map(|v| v.max(0.0))
            };
            let dw = &delta * a_prev.transpose();
            let db = delta.column_sum();
            let mut d_prev = self.layers[i].w.transpose() * &delta;
            if i > 0 {
                d_prev.zip_apply(&cache.pre[i - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            grads[i] = Some(Linear { w: dw, b: db });
            delta = d_prev;
        }
        (grads.into_iter().map(Option::unwrap).collect(), delta)
    }
}
