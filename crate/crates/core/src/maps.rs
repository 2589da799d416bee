//! Dense per-pixel maps.

use serde::{Deserialize, Serialize};

/// Single-channel `f64` image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "scalar map size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &ScalarMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear lookup at a sub-pixel location. Samples whose value fails
    /// `valid` are dropped and the remaining weights renormalized; `None`
    /// when no valid neighbour exists or `(x, y)` is outside the image.
    pub fn bilinear_where(&self, x: f64, y: f64, valid: impl Fn(f64) -> bool) -> Option<f64> {
        if !(x > -0.5 && y > -0.5 && x < self.width as f64 - 0.5 && y < self.height as f64 - 0.5) {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (dx, dy, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let xi = x0 as i64 + dx;
            let yi = y0 as i64 + dy;
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 || w <= 0.0 {
                continue;
            }
            let v = self.get(xi as usize, yi as usize);
            if valid(v) {
                acc += w * v;
                wsum += w;
            }
        }
        (wsum > 1e-12).then(|| acc / wsum)
    }
}

/// Three-channel `f64` image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ColorMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3, "color map size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn same_shape(&self, other: &ColorMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Rec. 601 luma.
    pub fn to_gray(&self) -> ScalarMap {
        let data = self
            .data
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect();
        ScalarMap::from_vec(self.width, self.height, data)
    }
}
