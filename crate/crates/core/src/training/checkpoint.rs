//! Binary checkpoints: magic, version, JSON header, then little-endian f64
//! tensors (radiance field, each proposal field, pose corrections).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::geom::{Aabb, Vec3, WaterPlane};
use crate::rendering::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"BATHYCKP";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    aabb_min: [f64; 3],
    aabb_max: [f64; 3],
    plane_normal: [f64; 3],
    plane_intercept: f64,
    n_air: f64,
    n_water: f64,
    n_cameras: usize,
    step: usize,
    tensor_lengths: Vec<usize>,
}

pub fn save_checkpoint(model: &Model, step: usize, path: &Path) -> Result<()> {
    let mut tensors: Vec<&[f64]> = vec![&model.field.params];
    tensors.extend(model.proposals.iter().map(|p| p.params.as_slice()));
    tensors.push(&model.poses.params);
    let header = Header {
        config: model.config.clone(),
        aabb_min: model.aabb.min.into(),
        aabb_max: model.aabb.max.into(),
        plane_normal: model.plane.normal.into(),
        plane_intercept: model.plane.intercept,
        n_air: model.plane.n_air,
        n_water: model.plane.n_water,
        n_cameras: model.poses.len(),
        step,
        tensor_lengths: tensors.iter().map(|t| t.len()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path).with_path(path)?);
    let mut write = |bytes: &[u8]| w.write_all(bytes).with_path(path);
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for t in tensors {
        for v in t {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().with_path(path)
}

/// Loads a checkpoint, returning the model and the step it was saved at.
pub fn load_checkpoint(path: &Path) -> Result<(Model, usize)> {
    let mut r = BufReader::new(File::open(path).with_path(path)?);
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(|_| bad("truncated header"))?;
    let len = u64::from_le_bytes(u64b) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let h: Header = serde_json::from_slice(&json).map_err(|e| bad(&e.to_string()))?;

    let aabb = Aabb::new(Vec3::from(h.aabb_min), Vec3::from(h.aabb_max));
    let mut plane = WaterPlane::new(Vec3::from(h.plane_normal), h.plane_intercept);
    plane.n_air = h.n_air;
    plane.n_water = h.n_water;
    let mut model = Model::new(h.config, aabb, plane, h.n_cameras, 0)?;

    let mut targets: Vec<&mut Vec<f64>> = vec![&mut model.field.params];
    targets.extend(model.proposals.iter_mut().map(|p| &mut p.params));
    targets.push(&mut model.poses.params);
    if targets.len() != h.tensor_lengths.len() {
        return Err(bad("tensor count does not match the model"));
    }
    for (t, &n) in targets.into_iter().zip(&h.tensor_lengths) {
        if t.len() != n {
            return Err(bad("tensor size does not match the model"));
        }
        for v in t.iter_mut() {
            r.read_exact(&mut u64b).map_err(|_| bad("truncated tensor data"))?;
            *v = f64::from_le_bytes(u64b);
        }
    }
    if r.read(&mut u64b).with_path(path)? != 0 {
        return Err(bad("trailing data"));
    }
    Ok((model, h.step))
}
