//! Refraction-corrected point-cloud export: per-ray depth backprojection
//! along the two-segment path, opacity gating and inverse normalization.

mod pfm;
mod ply;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pfm::{read_pfm, write_pfm};
pub use ply::{read_ply, read_ply_mesh, write_ply};

use crate::dataprep::{Dataset, MediumLabel};
use crate::error::{Error, Result};
use crate::geom::{kinked_position, Mat3, SimilarityTransform, Vec3};
use crate::rendering::{Model, RayWorkspace};
use crate::sampling::VirtualRaySpec;

pub const DEFAULT_OPACITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    Normalized,
    Chunk,
    Global,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Self::Normalized => "normalized",
            Self::Chunk => "chunk",
            Self::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Normalized, Self::Chunk, Self::Global].into_iter().find(|f| f.name() == s)
    }
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub colors: Vec<[u8; 3]>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(frame: Frame) -> Self {
        Self {
            positions: Vec::new(),
            colors: Vec::new(),
            frame,
        }
    }

    pub fn from_points(positions: Vec<Vec3>, frame: Frame) -> Self {
        let colors = vec![[255; 3]; positions.len()];
        Self {
            positions,
            colors,
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, p: Vec3, rgb: [f64; 3]) {
        self.positions.push(p);
        self.colors.push(rgb.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }

    /// Keeps the points for which `keep` is true.
    pub fn retain_indices(&self, keep: &[bool]) -> Self {
        let mut out = Self::new(self.frame);
        for (i, &k) in keep.iter().enumerate() {
            if k {
                out.positions.push(self.positions[i]);
                out.colors.push(self.colors[i]);
            }
        }
        out
    }
}

/// Places a depth along the virtual ray: past the interface along the
/// refracted direction when refraction is on, straight otherwise.
pub fn backproject(spec: &VirtualRaySpec, depth: f64, refraction_enabled: bool) -> Vec3 {
    if spec.refracts && refraction_enabled {
        kinked_position(&spec.ray, depth, spec.t_i, &spec.d_w)
    } else {
        spec.ray.at(depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExportOptions {
    pub opacity_threshold: f64,
    pub refraction: bool,
    /// Pixel step in both image directions.
    pub stride: u32,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            opacity_threshold: DEFAULT_OPACITY_THRESHOLD,
            refraction: true,
            stride: 1,
        }
    }
}

/// Depth estimate for one pixel ray.
#[derive(Debug, Clone, Copy)]
pub struct RayDepth {
    pub spec: VirtualRaySpec,
    pub depth: f64,
    pub accumulation: f64,
    pub rgb: [f64; 3],
}

/// Opacity gating and backprojection shared by the model and oracle paths.
pub fn collect_points(rays: impl IntoIterator<Item = RayDepth>, opts: &ExportOptions) -> Result<PointCloud> {
    let mut cloud = PointCloud::new(Frame::Normalized);
    for r in rays {
        if r.accumulation > opts.opacity_threshold {
            cloud.push(backproject(&r.spec, r.depth, opts.refraction), r.rgb);
        }
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(cloud)
}

/// Renders every non-IGNORE pixel (at the given stride) of every dataset view
/// and backprojects the expected depth of the opaque ones.
pub fn export_pointcloud(model: &Model, dataset: &Dataset, opts: &ExportOptions) -> Result<PointCloud> {
    let stride = opts.stride.max(1);
    let per_view: Vec<Vec<RayDepth>> = (0..dataset.len())
        .into_par_iter()
        .map_init(RayWorkspace::default, |ws, v| {
            let cam = &dataset.bundle.cameras[v];
            let mask = &dataset.masks[v];
            let mut out = Vec::new();
            for row in (0..cam.height).step_by(stride as usize) {
                for col in (0..cam.width).step_by(stride as usize) {
                    let label = mask.get(col, row);
                    if label == MediumLabel::Ignore {
                        continue;
                    }
                    let (o, spec) = model.render_pixel(cam, v, col, row, label, ws);
                    if let Some(spec) = spec {
                        out.push(RayDepth {
                            spec,
                            depth: o.depth,
                            accumulation: o.accumulation,
                            rgb: o.rgb,
                        });
                    }
                }
            }
            out
        })
        .collect();
    collect_points(per_view.into_iter().flatten(), opts)
}

/// `x_chunk = R_normᵀ(s_norm·x_norm + c)`, then `x_global = R_chunk(s_chunk·x_chunk) + t_chunk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Denormalization {
    pub r_norm: Mat3,
    pub s_norm: f64,
    pub c: Vec3,
    pub chunk: SimilarityTransform,
}

impl Denormalization {
    /// From the forward normalization `x_norm = s·R·x + t` and the chunk transform.
    pub fn new(norm: &SimilarityTransform, chunk: &SimilarityTransform) -> Self {
        Self {
            r_norm: norm.rotation,
            s_norm: 1.0 / norm.scale,
            c: -norm.translation / norm.scale,
            chunk: *chunk,
        }
    }

    pub fn to_chunk(&self, x: &Vec3) -> Vec3 {
        self.r_norm.transpose() * (x * self.s_norm + self.c)
    }

    pub fn to_global(&self, x: &Vec3) -> Vec3 {
        let xc = self.to_chunk(x);
        self.chunk.rotation * (xc * self.chunk.scale) + self.chunk.translation
    }
}

/// Maps a normalized or chunk cloud into `target` (chunk or global).
pub fn denormalize(cloud: &PointCloud, norm: &SimilarityTransform, chunk: &SimilarityTransform, target: Frame) -> Result<PointCloud> {
    let d = Denormalization::new(norm, chunk);
    let map: Box<dyn Fn(&Vec3) -> Vec3> = match (cloud.frame, target) {
        (a, b) if a == b => Box::new(|x| *x),
        (Frame::Normalized, Frame::Chunk) => Box::new(|x| d.to_chunk(x)),
        (Frame::Normalized, Frame::Global) => Box::new(|x| d.to_global(x)),
        (Frame::Chunk, Frame::Global) => Box::new(|x| d.chunk.apply(x)),
        (from, to) => {
            return Err(Error::FrameMismatch {
                cloud: from.to_string(),
                reference: to.to_string(),
            })
        }
    };
    Ok(PointCloud {
        positions: cloud.positions.iter().map(|p| map(p)).collect(),
        colors: cloud.colors.clone(),
        frame: target,
    })
}
