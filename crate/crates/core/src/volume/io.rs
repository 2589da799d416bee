//! `FVOL` persistence: magic, u32 dims, f32 origin and voxel size, u32
//! feature dim, f32 truncation, then f32 arrays (features, weights, tsdf,
//! tsdf weights) in x-fastest cell order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{FeatureVolume, VolumeError};
use crate::binio::*;

const MAGIC: &[u8; 4] = b"FVOL";

impl FeatureVolume {
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), VolumeError> {
        w.write_all(MAGIC)?;
        for d in self.dims {
            put_u32(w, d as u32)?;
        }
        for a in 0..3 {
            put_f32(w, self.origin[a] as f32)?;
        }
        put_f32(w, self.voxel_size as f32)?;
        put_u32(w, self.dim as u32)?;
        put_f32(w, self.truncation as f32)?;
        let n = self.cell_count();
        put_f32_slice(
            w,
            (0..n).flat_map(|i| {
                let (x, y, z) = self.unindex(i);
                self.raw_feature(x, y, z).iter().map(|&v| v as f32)
            }),
        )?;
        for arr in [&self.weights, &self.tsdf, &self.tsdf_weights] {
            put_f32_slice(w, arr.iter().map(|&v| v as f32))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, VolumeError> {
        let magic: [u8; 4] = get_array(r)?;
        if &magic != MAGIC {
            return Err(VolumeError::Corrupt("bad magic".into()));
        }
        let dims = [get_u32(r)? as usize, get_u32(r)? as usize, get_u32(r)? as usize];
        let origin = Vector3::new(get_f32(r)? as f64, get_f32(r)? as f64, get_f32(r)? as f64);
        let voxel = get_f32(r)? as f64;
        let dim = get_u32(r)? as usize;
        let trunc = get_f32(r)? as f64;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n
            .filter(|&n| n.checked_mul(dim).is_some_and(|t| t < (1 << 34)))
            .ok_or_else(|| VolumeError::Corrupt("implausible dimensions".into()))?;
        let mut v = FeatureVolume::new(origin, dims, voxel, dim, trunc)
            .map_err(|e| VolumeError::Corrupt(e.to_string()))?;
        let features = get_f32_vec(r, n * dim)?;
        v.weights = widen(get_f32_vec(r, n)?);
        v.tsdf = widen(get_f32_vec(r, n)?);
        v.tsdf_weights = widen(get_f32_vec(r, n)?);
        for i in 0..n {
            let f = &features[i * dim..(i + 1) * dim];
            if v.weights[i] > 0.0 || f.iter().any(|&x| x != 0.0) {
                let (x, y, z) = v.unindex(i);
                let vals: Vec<f64> = f.iter().map(|&x| x as f64).collect();
                let w = v.weights[i];
                v.set_cell(x, y, z, &vals, w);
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), VolumeError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VolumeError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn widen(v: Vec<f32>) -> Vec<f64> {
    v.into_iter().map(f64::from).collect()
}
