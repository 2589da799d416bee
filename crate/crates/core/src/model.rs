//! Binary model file: primitives, bounds and descriptor-field weights.
//!
//! Layout (little-endian): magic `SPLM`, u32 version, then tagged sections
//! `META`, `PRIM` and optionally `DFLD`, each as 4-byte tag + u64 payload
//! length + payload. All parameters are stored as f64 so a load reproduces
//! the saved model exactly. No per-primitive descriptors are stored: they are
//! decoded from the field on demand.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::binio::*;
use crate::field::{DescriptorDecoder, DescriptorField, HashEncoding, Linear};
use crate::scene::{sh_rest_count, GaussianPrimitive, SceneBounds, SceneModel};

const MAGIC: &[u8; 4] = b"SPLM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt model: section {section} at byte {offset}: {reason}")]
    CorruptModel {
        section: String,
        offset: usize,
        reason: String,
    },
}

/// Byte counts of a saved model, by section.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModelSize {
    pub total: usize,
    pub meta: usize,
    pub primitives: usize,
    pub field: usize,
}

fn record_len(sh_degree: u8) -> usize {
    17 + 3 * sh_rest_count(sh_degree)
}

fn f64s(buf: &mut Vec<u8>, vs: impl IntoIterator<Item = f64>) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn meta_payload(scene: &SceneModel) -> Vec<u8> {
    let mut b = Vec::new();
    let (lo, hi) = (scene.bounds.min(), scene.bounds.max());
    f64s(&mut b, lo.iter().chain(hi.iter()).copied());
    b.extend_from_slice(&(scene.sh_degree() as u32).to_le_bytes());
    b.extend_from_slice(&scene.config_hash.to_le_bytes());
    b
}

fn prim_payload(scene: &SceneModel) -> Vec<u8> {
    let n = scene.len();
    let mut b = Vec::with_capacity(8 + n * record_len(scene.sh_degree()) * 8);
    b.extend_from_slice(&(n as u64).to_le_bytes());
    for p in scene.primitives() {
        f64s(&mut b, p.mu.iter().copied());
        f64s(&mut b, p.q);
        f64s(&mut b, p.log_scale.iter().copied());
        f64s(&mut b, [p.opacity_logit]);
        f64s(&mut b, p.color.iter().copied());
        f64s(&mut b, p.sh_rest.iter().flatten().copied());
        f64s(&mut b, [p.landmark_logit, p.spawn_score, if p.is_key { 1.0 } else { 0.0 }]);
    }
    b
}

fn field_payload(f: &DescriptorField) -> Vec<u8> {
    let e = &f.encoding;
    let mut b = Vec::with_capacity(e.tables().len() * 8 + f.decoder.parameter_count() * 8 + 256);
    b.extend_from_slice(&(e.levels() as u32).to_le_bytes());
    b.extend_from_slice(&(e.features_per_level() as u32).to_le_bytes());
    b.extend_from_slice(&(e.table_size() as u64).to_le_bytes());
    let (lo, hi) = (e.bounds().min(), e.bounds().max());
    f64s(&mut b, lo.iter().chain(hi.iter()).copied());
    f64s(&mut b, e.resolutions().iter().copied());
    f64s(&mut b, e.tables().iter().copied());
    b.extend_from_slice(&(f.decoder.layers.len() as u32).to_le_bytes());
    for l in &f.decoder.layers {
        b.extend_from_slice(&(l.w.nrows() as u32).to_le_bytes());
        b.extend_from_slice(&(l.w.ncols() as u32).to_le_bytes());
        f64s(&mut b, l.w.iter().copied());
        f64s(&mut b, l.b.iter().copied());
    }
    b
}

fn put_section(w: &mut impl Write, tag: &[u8; 4], payload: &[u8]) -> io::Result<usize> {
    w.write_all(tag)?;
    put_u64(w, payload.len() as u64)?;
    w.write_all(payload)?;
    Ok(12 + payload.len())
}

pub fn write_model(scene: &SceneModel, w: &mut impl Write) -> Result<ModelSize, ModelError> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    let meta = put_section(w, b"META", &meta_payload(scene))?;
    let primitives = put_section(w, b"PRIM", &prim_payload(scene))?;
    let field = match &scene.descriptor_field {
        Some(f) => put_section(w, b"DFLD", &field_payload(f))?,
        None => 0,
    };
    Ok(ModelSize {
        total: 8 + meta + primitives + field,
        meta,
        primitives,
        field,
    })
}

pub fn save_model(scene: &SceneModel, path: &Path) -> Result<ModelSize, ModelError> {
    let mut buf = Vec::new();
    let size = write_model(scene, &mut buf)?;
    fs::write(path, &buf)?;
    Ok(size)
}

/// Cursor over a section payload that reports absolute file offsets.
struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> ModelError {
        ModelError::CorruptModel {
            section: self.section.into(),
            offset: self.base + self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.data.len() - self.pos < n {
            return Err(self.corrupt(format!("needs {n} more bytes, {} left", self.data.len() - self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.corrupt("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, ModelError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn finish(&self) -> Result<(), ModelError> {
        if self.pos != self.data.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

fn section<'a>(data: &'a [u8], pos: &mut usize, want: &'static str) -> Result<Option<Reader<'a>>, ModelError> {
    if *pos == data.len() {
        return Ok(None);
    }
    let corrupt = |offset: usize, reason: String| ModelError::CorruptModel {
        section: want.into(),
        offset,
        reason,
    };
    if data.len() - *pos < 12 {
        return Err(corrupt(*pos, "truncated section header".into()));
    }
    let tag = &data[*pos..*pos + 4];
    if tag != want.as_bytes() {
        return Err(corrupt(*pos, format!("expected tag {want}, found {:?}", String::from_utf8_lossy(tag))));
    }
    let len = u64::from_le_bytes(data[*pos + 4..*pos + 12].try_into().unwrap()) as usize;
    let start = *pos + 12;
    if data.len() - start < len {
        return Err(corrupt(
            start,
            format!("truncated: payload of {len} bytes, only {} present", data.len() - start),
        ));
    }
    *pos = start + len;
    Ok(Some(Reader {
        data: &data[start..start + len],
        pos: 0,
        base: start,
        section: want,
    }))
}

pub fn read_model(r: &mut impl Read) -> Result<SceneModel, ModelError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    parse_model(&data)
}

pub fn load_model(path: &Path) -> Result<SceneModel, ModelError> {
    parse_model(&fs::read(path)?)
}

fn parse_model(data: &[u8]) -> Result<SceneModel, ModelError> {
    let header = |reason: &str| ModelError::CorruptModel {
        section: "HEADER".into(),
        offset: 0,
        reason: reason.into(),
    };
    if data.len() < 8 {
        return Err(header("truncated header"));
    }
    if &data[..4] != MAGIC {
        return Err(header("bad magic"));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(header(&format!("unsupported version {version}")));
    }
    let mut pos = 8;

    let mut m = section(data, &mut pos, "META")?.ok_or_else(|| ModelError::CorruptModel {
        section: "META".into(),
        offset: pos,
        reason: "missing".into(),
    })?;
    let bounds = SceneBounds::new(m.vec3()?, m.vec3()?);
    let deg = m.u32()?;
    let config_hash = m.u64()?;
    m.finish()?;
    let mut scene = SceneModel::new(bounds, deg.min(255) as u8).map_err(|e| m.corrupt(e.to_string()))?;
    scene.config_hash = config_hash;

    let mut p = section(data, &mut pos, "PRIM")?.ok_or_else(|| ModelError::CorruptModel {
        section: "PRIM".into(),
        offset: pos,
        reason: "missing".into(),
    })?;
    let n = p.u64()? as usize;
    let rec = record_len(scene.sh_degree());
    if n.checked_mul(rec * 8) != Some(p.data.len() - 8) {
        return Err(p.corrupt(format!("{n} records of {rec} values do not fill {} bytes", p.data.len() - 8)));
    }
    let cnt = sh_rest_count(scene.sh_degree());
    let prims = scene.primitives_mut();
    prims.reserve(n);
    for _ in 0..n {
        let v = p.f64s(rec)?;
        let sh_rest = (0..cnt).map(|k| [v[14 + 3 * k], v[15 + 3 * k], v[16 + 3 * k]]).collect();
        let tail = 14 + 3 * cnt;
        prims.push(GaussianPrimitive {
            mu: Vector3::new(v[0], v[1], v[2]),
            q: [v[3], v[4], v[5], v[6]],
            log_scale: Vector3::new(v[7], v[8], v[9]),
            opacity_logit: v[10],
            color: Vector3::new(v[11], v[12], v[13]),
            sh_rest,
            landmark_logit: v[tail],
            spawn_score: v[tail + 1],
            is_key: v[tail + 2] != 0.0,
        });
    }
    p.finish()?;

    if let Some(mut f) = section(data, &mut pos, "DFLD")? {
        let levels = f.u32()? as usize;
        let features = f.u32()? as usize;
        let table = f.u64()? as usize;
        let fb = SceneBounds::new(f.vec3()?, f.vec3()?);
        let res = f.f64s(levels)?;
        let total = levels
            .checked_mul(table)
            .and_then(|v| v.checked_mul(features))
            .ok_or_else(|| f.corrupt("table size overflow"))?;
        let tables = f.f64s(total)?;
        let encoding =
            HashEncoding::from_parts(fb, res, table, features, tables).map_err(|e| f.corrupt(e.to_string()))?;
        let nl = f.u32()? as usize;
        let mut layers = Vec::with_capacity(nl);
        for _ in 0..nl {
            let rows = f.u32()? as usize;
            let cols = f.u32()? as usize;
            let w = f.f64s(rows.checked_mul(cols).ok_or_else(|| f.corrupt("layer size overflow"))?)?;
            let b = f.f64s(rows)?;
            layers.push(Linear {
                w: DMatrix::from_vec(rows, cols, w),
                b: DVector::from_vec(b),
            });
        }
        f.finish()?;
        for pair in layers.windows(2) {
            if pair[1].w.ncols() != pair[0].w.nrows() {
                return Err(f.corrupt("decoder layer shapes do not chain"));
            }
        }
        if layers.first().map(|l| l.w.ncols()) != Some(encoding.output_dim()) {
            return Err(f.corrupt("decoder input does not match encoding"));
        }
        scene.descriptor_field = Some(DescriptorField {
            encoding,
            decoder: DescriptorDecoder { layers },
        });
    }
    if pos != data.len() {
        return Err(ModelError::CorruptModel {
            section: "TRAILER".into(),
            offset: pos,
            reason: "unexpected bytes after last section".into(),
        });
    }
    Ok(scene)
}
