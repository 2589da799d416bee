//! On-disk RGB-D dataset layout and its loader.
//!
//! ```text
//! <dir>/intrinsics.json          {"fx","fy","cx","cy","width","height"}
//! <dir>/poses.txt                index tx ty tz qw qx qy qz  (world-from-camera)
//! <dir>/color/%06d.png           8-bit RGB
//! <dir>/depth/%06d.raw           f32 LE, row-major, meters (0 = invalid)
//! <dir>/score/%06d.raw           f32 LE, row-major, [0, 1]
//! <dir>/feat/%06d.featraw        "FEAT", u32 H_f, W_f, D_f, f32 LE data
//! <dir>/queries/...              same intrinsics/poses/color, plus
//!                                keypoints/%06d.kpt
//! ```
//!
//! `.kpt`: "KPTS", u32 version, u32 count, u32 D, count × (f32 x, y, score),
//! then count × D f32 descriptors.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::binio::*;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::keyframe::{FeatureMap, KeyframeRecord};
use crate::localize::{thumbnail, Keypoint, QueryObservation};
use crate::maps::{ColorMap, ScalarMap};

const FEAT_MAGIC: &[u8; 4] = b"FEAT";
const KPTS_MAGIC: &[u8; 4] = b"KPTS";
const KPTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("dataset at {0} has no frames")]
    Empty(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn frame_name(i: usize) -> String {
    format!("{i:06}")
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<(), DatasetError> {
    let s = serde_json::to_string_pretty(k).expect("intrinsics serialize");
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, DatasetError> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    let k: CameraIntrinsics = serde_json::from_str(&s).map_err(|e| fmt_err(path, e.to_string()))?;
    k.validate().map_err(|e| fmt_err(path, e.to_string()))?;
    Ok(k)
}

pub fn write_poses(path: &Path, poses: &[(usize, Pose)]) -> Result<(), DatasetError> {
    let mut s = String::from("# index tx ty tz qw qx qy qz\n");
    for (i, p) in poses {
        let q = p.rotation.quaternion();
        let t = p.translation;
        s.push_str(&format!(
            "{i} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}\n",
            t.x, t.y, t.z, q.w, q.i, q.j, q.k
        ));
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_poses(path: &Path) -> Result<Vec<(usize, Pose)>, DatasetError> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in s.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 8 {
            return Err(fmt_err(path, format!("line {}: expected 8 fields", n + 1)));
        }
        let idx: usize = vals[0].parse().map_err(|_| fmt_err(path, format!("line {}: bad index", n + 1)))?;
        let mut f = [0.0f64; 7];
        for (o, v) in f.iter_mut().zip(&vals[1..]) {
            *o = v.parse().map_err(|_| fmt_err(path, format!("line {}: bad number", n + 1)))?;
        }
        let q = Quaternion::new(f[3], f[4], f[5], f[6]);
        if !(q.norm() > 1e-9) {
            return Err(fmt_err(path, format!("line {}: zero quaternion", n + 1)));
        }
        // Keep already-normalized values bit-exact.
        let rot = if (q.norm() - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        out.push((idx, Pose::new(rot, Vector3::new(f[0], f[1], f[2]))));
    }
    Ok(out)
}

pub fn write_color_png(path: &Path, img: &ColorMap) -> Result<(), DatasetError> {
    let buf: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::save_buffer(path, &buf, img.width as u32, img.height as u32, image::ColorType::Rgb8).map_err(|source| {
        DatasetError::Image {
            path: path.to_path_buf(),
            source,
        }
    })
}

pub fn read_color_png(path: &Path) -> Result<ColorMap, DatasetError> {
    let img = image::open(path)
        .map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(ColorMap::from_vec(w as usize, h as usize, data))
}

pub fn write_raw_map(path: &Path, m: &ScalarMap) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    put_f32_slice(&mut w, m.data.iter().map(|&v| v as f32)).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_raw_map(path: &Path, width: usize, height: usize) -> Result<ScalarMap, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != width * height * 4 {
        return Err(fmt_err(
            path,
            format!("expected {} bytes for {width}x{height}, found {}", width * height * 4, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(ScalarMap::from_vec(width, height, data))
}

pub fn write_feature_map(path: &Path, f: &FeatureMap) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let e = io_err(path);
    (|| -> io::Result<()> {
        w.write_all(FEAT_MAGIC)?;
        put_u32(&mut w, f.height as u32)?;
        put_u32(&mut w, f.width as u32)?;
        put_u32(&mut w, f.dim as u32)?;
        put_f32_slice(&mut w, f.data.iter().copied())?;
        w.flush()
    })()
    .map_err(e)
}

pub fn read_feature_map(path: &Path) -> Result<FeatureMap, DatasetError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let magic: [u8; 4] = get_array(&mut r).map_err(io_err(path))?;
    if &magic != FEAT_MAGIC {
        return Err(fmt_err(path, "bad FEAT magic"));
    }
    let h = get_u32(&mut r).map_err(io_err(path))? as usize;
    let w = get_u32(&mut r).map_err(io_err(path))? as usize;
    let d = get_u32(&mut r).map_err(io_err(path))? as usize;
    if w == 0 || h == 0 || d == 0 || w.saturating_mul(h).saturating_mul(d) > 1 << 30 {
        return Err(fmt_err(path, format!("implausible feature map {h}x{w}x{d}")));
    }
    let data = get_f32_vec(&mut r, w * h * d).map_err(io_err(path))?;
    Ok(FeatureMap {
        width: w,
        height: h,
        dim: d,
        data,
    })
}

pub fn write_keypoints(path: &Path, kps: &[Keypoint], desc: &DMatrix<f64>) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    (|| -> io::Result<()> {
        w.write_all(KPTS_MAGIC)?;
        put_u32(&mut w, KPTS_VERSION)?;
        put_u32(&mut w, kps.len() as u32)?;
        put_u32(&mut w, desc.ncols() as u32)?;
        put_f32_slice(&mut w, kps.iter().flat_map(|k| [k.x as f32, k.y as f32, k.score as f32]))?;
        put_f32_slice(&mut w, (0..desc.nrows()).flat_map(|i| desc.row(i).iter().map(|&v| v as f32).collect::<Vec<_>>()))?;
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn read_keypoints(path: &Path) -> Result<(Vec<Keypoint>, DMatrix<f64>), DatasetError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let magic: [u8; 4] = get_array(&mut r).map_err(io_err(path))?;
    if &magic != KPTS_MAGIC {
        return Err(fmt_err(path, "bad KPTS magic"));
    }
    let version = get_u32(&mut r).map_err(io_err(path))?;
    if version != KPTS_VERSION {
        return Err(fmt_err(path, format!("unsupported keypoint version {version}")));
    }
    let n = get_u32(&mut r).map_err(io_err(path))? as usize;
    let d = get_u32(&mut r).map_err(io_err(path))? as usize;
    if n.saturating_mul(d.max(3)) > 1 << 28 {
        return Err(fmt_err(path, "implausible keypoint count"));
    }
    let k = get_f32_vec(&mut r, n * 3).map_err(io_err(path))?;
    let dv = get_f32_vec(&mut r, n * d).map_err(io_err(path))?;
    let kps = k
        .chunks_exact(3)
        .map(|c| Keypoint {
            x: c[0] as f64,
            y: c[1] as f64,
            score: c[2] as f64,
        })
        .collect();
    Ok((kps, DMatrix::from_row_iterator(n, d, dv.into_iter().map(f64::from))))
}

/// Training keyframes of a dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<KeyframeRecord>,
    pub indices: Vec<usize>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let k = read_intrinsics(&root.join("intrinsics.json"))?;
        let poses = read_poses(&root.join("poses.txt"))?;
        if poses.is_empty() {
            return Err(DatasetError::Empty(root.to_path_buf()));
        }
        let mut frames = Vec::with_capacity(poses.len());
        let mut indices = Vec::with_capacity(poses.len());
        for (i, pose) in poses {
            let name = frame_name(i);
            let color = read_color_png(&root.join("color").join(format!("{name}.png")))?;
            if color.width != k.width || color.height != k.height {
                return Err(fmt_err(&root.join("color"), format!("frame {name} size mismatch")));
            }
            let depth = read_raw_map(&root.join("depth").join(format!("{name}.raw")), k.width, k.height)?;
            let score = read_raw_map(&root.join("score").join(format!("{name}.raw")), k.width, k.height)?;
            let feature_map = read_feature_map(&root.join("feat").join(format!("{name}.featraw")))?;
            let kf = KeyframeRecord {
                color,
                depth,
                pose,
                intrinsics: k,
                feature_map,
                score_map: score,
            };
            kf.validate().map_err(|e| fmt_err(root, format!("frame {name}: {e}")))?;
            frames.push(kf);
            indices.push(i);
        }
        Ok(Self {
            root: root.to_path_buf(),
            intrinsics: k,
            frames,
            indices,
        })
    }
}

/// One query image with its detections and (when known) ground-truth pose.
#[derive(Debug, Clone)]
pub struct QueryFrame {
    pub index: usize,
    pub name: String,
    pub color: ColorMap,
    pub ground_truth: Option<Pose>,
    pub observation: QueryObservation,
}

/// Loads `<dir>/queries`-style directories; poses.txt (ground truth) lists
/// the frames.
pub fn load_queries(dir: &Path) -> Result<Vec<QueryFrame>, DatasetError> {
    let k = read_intrinsics(&dir.join("intrinsics.json"))?;
    let poses = read_poses(&dir.join("poses.txt"))?;
    let mut out = Vec::with_capacity(poses.len());
    for (i, pose) in poses {
        let name = frame_name(i);
        let color = read_color_png(&dir.join("color").join(format!("{name}.png")))?;
        let (keypoints, descriptors) = read_keypoints(&dir.join("keypoints").join(format!("{name}.kpt")))?;
        out.push(QueryFrame {
            index: i,
            name: format!("{name}.png"),
            observation: QueryObservation {
                keypoints,
                descriptors,
                intrinsics: k,
                thumbnail: thumbnail(&color),
            },
            color,
            ground_truth: Some(pose),
        });
    }
    Ok(out)
}
