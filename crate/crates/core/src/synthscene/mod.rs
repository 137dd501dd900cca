//! Synthetic ground truth: ray-traced refracted images, medium masks,
//! markers, camera trajectories and the reference surface.

mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use scene::{analytic_apparent_depth, LandStrips, Material, SyntheticScene, TraceHit};

use crate::dataprep::{Camera, CameraInput, CameraInputFile, Image, MarkerFile, MediumLabel, MediumMask};
use crate::error::{Error, IoContext, Result};
use crate::geom::Vec3;

pub const SCENE_FILE: &str = "scene.json";
pub const CAMERAS_FILE: &str = "cameras.json";
pub const MARKERS_FILE: &str = "markers.json";

/// Point-of-interest ring plus a nadir grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trajectory {
    pub poi_count: usize,
    pub radius: f64,
    pub altitude: f64,
    /// Height of the look-at point.
    pub target_z: f64,
    pub nadir_count: usize,
    pub nadir_altitude: f64,
    /// Half-width of the nadir grid.
    pub nadir_spread: f64,
    pub hfov_deg: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            poi_count: 18,
            radius: 12.0,
            altitude: 8.0,
            target_z: 0.0,
            nadir_count: 6,
            nadir_altitude: 8.0,
            nadir_spread: 4.0,
            hfov_deg: 60.0,
        }
    }
}

impl Trajectory {
    /// Splits `cameras` into three quarters ring and one quarter nadir.
    pub fn with_cameras(cameras: usize) -> Self {
        let nadir = cameras / 4;
        Self {
            poi_count: cameras - nadir,
            nadir_count: nadir,
            ..Self::default()
        }
    }

    pub fn cameras(&self, resolution: u32) -> Vec<Camera> {
        let mut out = Vec::with_capacity(self.poi_count + self.nadir_count);
        let target = Vec3::new(0.0, 0.0, self.target_z);
        for k in 0..self.poi_count {
            let a = std::f64::consts::TAU * k as f64 / self.poi_count as f64;
            let eye = Vec3::new(self.radius * a.cos(), self.radius * a.sin(), self.altitude);
            out.push(
                Camera::with_fov(format!("poi_{k:03}"), resolution, resolution, self.hfov_deg).look_at(
                    eye,
                    target,
                    Vec3::z(),
                ),
            );
        }
        let cols = self.nadir_count.div_ceil(2).max(1);
        for k in 0..self.nadir_count {
            let (i, j) = (k % cols, k / cols);
            let x = if cols == 1 {
                0.0
            } else {
                -self.nadir_spread + 2.0 * self.nadir_spread * i as f64 / (cols - 1) as f64
            };
            let y = if self.nadir_count == 1 { 0.0 } else { [-0.75, 0.75][j.min(1)] * self.nadir_spread };
            let eye = Vec3::new(x, y, self.nadir_altitude);
            out.push(
                Camera::with_fov(format!("nadir_{k:03}"), resolution, resolution, self.hfov_deg).look_at(
                    eye,
                    eye - Vec3::z(),
                    Vec3::y(),
                ),
            );
        }
        out
    }
}

/// Rendered view with per-pixel truth from the center ray.
#[derive(Debug, Clone)]
pub struct SyntheticView {
    pub image: Image,
    pub mask: MediumMask,
    pub hits: Vec<TraceHit>,
}

/// Colour averages `supersample²` sub-rays; label and truth come from the
/// pixel-center ray.
pub fn render_view(scene: &SyntheticScene, camera: &Camera) -> SyntheticView {
    let (w, h) = (camera.width, camera.height);
    let ss = scene.supersample.max(1);
    let rows: Vec<Vec<([f64; 3], TraceHit)>> = (0..h)
        .into_par_iter()
        .map(|row| {
            (0..w)
                .map(|col| {
                    let center = scene.trace(&camera.pixel_ray(col, row));
                    let mut rgb = [0.0; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let u = col as f64 + (sx as f64 + 0.5) / ss as f64;
                            let v = row as f64 + (sy as f64 + 0.5) / ss as f64;
                            let hit = scene.trace(&camera.ray_at(u, v));
                            for c in 0..3 {
                                rgb[c] += hit.rgb[c];
                            }
                        }
                    }
                    let n = (ss * ss) as f64;
                    (rgb.map(|v| v / n), center)
                })
                .collect()
        })
        .collect();
    let mut image = Image::new(w, h);
    let mut mask = MediumMask::filled(w, h, MediumLabel::Ignore);
    let mut hits = Vec::with_capacity((w * h) as usize);
    for (row, r) in rows.into_iter().enumerate() {
        for (col, (rgb, hit)) in r.into_iter().enumerate() {
            image.set(col as u32, row as u32, rgb);
            mask.set(col as u32, row as u32, hit.label);
            hits.push(hit);
        }
    }
    SyntheticView { image, mask, hits }
}

/// Paths written by [`render_dataset`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub root: PathBuf,
    pub cameras: PathBuf,
    pub markers: PathBuf,
    pub images: PathBuf,
    pub masks: PathBuf,
    pub scene: PathBuf,
}

/// Writes images, masks, the camera file, markers and `scene.json`.
pub fn render_dataset(scene: &SyntheticScene, trajectory: &Trajectory, resolution: u32, out: &Path) -> Result<SynthOutput> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let images = out.join("images");
    let masks = out.join("masks");
    fs::create_dir_all(&images).with_path(&images)?;
    fs::create_dir_all(&masks).with_path(&masks)?;
    let cameras = trajectory.cameras(resolution);
    let mut inputs = Vec::with_capacity(cameras.len());
    for (k, cam) in cameras.iter().enumerate() {
        let view = render_view(scene, cam);
        let name = format!("{k:04}.png");
        view.image.write_png(&images.join(&name))?;
        view.mask.write_png(&masks.join(&name))?;
        inputs.push(CameraInput::from_camera(cam, name));
    }
    let cam_file = CameraInputFile {
        chunk: None,
        cameras: inputs,
    };
    let cameras_path = out.join(CAMERAS_FILE);
    fs::write(&cameras_path, serde_json::to_string_pretty(&cam_file)?).with_path(&cameras_path)?;
    let markers_path = out.join(MARKERS_FILE);
    let markers = MarkerFile {
        markers: scene.markers().iter().map(|m| [m.x, m.y, m.z]).collect(),
    };
    fs::write(&markers_path, serde_json::to_string_pretty(&markers)?).with_path(&markers_path)?;
    let scene_path = out.join(SCENE_FILE);
    fs::write(&scene_path, serde_json::to_string_pretty(scene)?).with_path(&scene_path)?;
    Ok(SynthOutput {
        root: out.to_path_buf(),
        cameras: cameras_path,
        markers: markers_path,
        images,
        masks,
        scene: scene_path,
    })
}

pub fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let text = fs::read_to_string(path).with_path(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}
