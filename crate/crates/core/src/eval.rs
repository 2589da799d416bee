//! Rendering quality (PSNR, SSIM) and localization accuracy reports.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::ColorMap;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall(usize, usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

fn check_shapes(a: &ColorMap, b: &ColorMap) -> Result<(), EvalError> {
    if !a.same_shape(b) {
        return Err(EvalError::ShapeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// PSNR in dB for images in [0, 1]; `+inf` when identical.
pub fn psnr(rendered: &ColorMap, reference: &ColorMap) -> Result<f64, EvalError> {
    check_shapes(rendered, reference)?;
    let n = rendered.data.len().max(1) as f64;
    let mse = rendered
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" Gaussian filter of a single-channel plane.
fn blur(src: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the RGB channels, 11×11 Gaussian window (σ = 1.5), data
/// range 1, evaluated where the window fits entirely inside the image.
pub fn ssim(rendered: &ColorMap, reference: &ColorMap) -> Result<f64, EvalError> {
    check_shapes(rendered, reference)?;
    let (w, h) = (rendered.width, rendered.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::TooSmall(w, h));
    }
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ch in 0..3 {
        let a: Vec<f64> = rendered.data.iter().skip(ch).step_by(3).copied().collect();
        let b: Vec<f64> = reference.data.iter().skip(ch).step_by(3).copied().collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let (ma, mb) = (blur(&a, w, h, &g), blur(&b, w, h, &g));
        let (saa, sbb, sab) = (blur(&aa, w, h, &g), blur(&bb, w, h, &g), blur(&ab, w, h, &g));
        let mut sum = 0.0;
        for i in 0..ma.len() {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cxy = sab[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += sum / ma.len() as f64;
    }
    Ok(total / 3.0)
}

pub fn psnr_ssim(rendered: &ColorMap, reference: &ColorMap) -> Result<(f64, f64), EvalError> {
    Ok((psnr(rendered, reference)?, ssim(rendered, reference)?))
}

/// One query's outcome; unlocalized frames carry no errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: String,
    pub localized: bool,
    pub dt_cm: Option<f64>,
    pub dr_deg: Option<f64>,
    pub matches: usize,
    pub inliers: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewQuality {
    pub frame: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameResult>,
    /// Over localized frames only; `None` when nothing localized.
    pub median_dt_cm: Option<f64>,
    pub median_dr_deg: Option<f64>,
    pub failure_rate: f64,
    pub views: Vec<ViewQuality>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_seconds_per_query: Option<f64>,
    pub model_bytes: Option<u64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    (n > 0).then(|| values.sum::<f64>() / n as f64)
}

impl EvalReport {
    pub fn new(frames: Vec<FrameResult>, views: Vec<ViewQuality>, model_bytes: Option<u64>) -> Self {
        let ok: Vec<&FrameResult> = frames.iter().filter(|f| f.localized).collect();
        let dt: Vec<f64> = ok.iter().filter_map(|f| f.dt_cm).collect();
        let dr: Vec<f64> = ok.iter().filter_map(|f| f.dr_deg).collect();
        let failure_rate = if frames.is_empty() {
            0.0
        } else {
            (frames.len() - ok.len()) as f64 / frames.len() as f64
        };
        Self {
            median_dt_cm: median(&dt),
            median_dr_deg: median(&dr),
            failure_rate,
            mean_psnr: mean(views.iter().map(|v| v.psnr.min(PSNR_CAP))),
            mean_ssim: mean(views.iter().map(|v| v.ssim)),
            mean_seconds_per_query: mean(frames.iter().map(|f| f.seconds)),
            frames,
            views,
            model_bytes,
        }
    }
}

pub fn write_frames_csv(path: &Path, frames: &[FrameResult]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for f in frames {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames_csv(path: &Path) -> Result<Vec<FrameResult>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
