//! Dataset preparation: water-plane fit, scene normalization, scene box,
//! train/val split, medium masks and the on-disk manifest.

mod camera;
mod manifest;
mod mask;

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use camera::Camera;
pub use manifest::{
    prepare_dataset, read_manifest, write_manifest, CameraInput, CameraInputFile, Dataset, DatasetBundle,
    MarkerFile, PrepOptions, Split, TransformDto,
};
pub use mask::{MediumLabel, MediumMask, DEFAULT_MASK_THRESHOLD};

use crate::error::{Error, IoContext, Result};
use crate::geom::{fit_plane_lsq, rotation_plane_to_z, Aabb, SimilarityTransform, Vec3, WaterPlane};

/// Depression angle separating nadir from oblique views.
pub const NADIR_THRESHOLD_DEG: f64 = 70.0;

#[derive(Debug, Clone)]
pub struct Normalized {
    /// Input frame → normalized frame.
    pub norm: SimilarityTransform,
    pub cameras: Vec<Camera>,
    pub markers: Vec<Vec3>,
    pub plane: WaterPlane,
}

/// Rotates the marker plane to horizontal, centers the cameras and scales
/// everything into `[−1, 1]³`.
pub fn normalize_scene(cameras: &[Camera], markers: &[Vec3]) -> Result<Normalized> {
    if cameras.len() < 2 {
        return Err(Error::DegenerateGeometry("need at least two cameras".into()));
    }
    let mut plane = fit_plane_lsq(markers)?;
    let cam_centroid = cameras.iter().map(|c| c.center).sum::<Vec3>() / cameras.len() as f64;
    if plane.signed_distance(&cam_centroid) < 0.0 {
        plane.normal = -plane.normal;
        plane.intercept = -plane.intercept;
    }
    let rot = rotation_plane_to_z(&plane.normal);
    let centroid = rot * cam_centroid;
    let max_abs = cameras
        .iter()
        .map(|c| c.center)
        .chain(markers.iter().copied())
        .map(|p| (rot * p - centroid).amax())
        .fold(0.0, f64::max);
    if max_abs <= 0.0 {
        return Err(Error::DegenerateGeometry("all inputs coincide".into()));
    }
    let s = 1.0 / max_abs;
    let norm = SimilarityTransform::new(rot, -centroid * s, s);
    let cameras: Vec<Camera> = cameras.iter().map(|c| c.transformed(&norm)).collect();
    let markers: Vec<Vec3> = markers.iter().map(|m| norm.apply(m)).collect();
    let mut out_plane = WaterPlane::horizontal(s * (plane.intercept - centroid.z));
    out_plane.n_air = plane.n_air;
    out_plane.n_water = plane.n_water;
    Ok(Normalized {
        norm,
        cameras,
        markers,
        plane: out_plane,
    })
}

/// Box spanning the cameras' horizontal footprint and the vertical range of
/// cameras and markers, re-centered on the marker centroid.
pub fn derive_scene_box(cameras: &[Camera], markers: &[Vec3]) -> Aabb {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for c in cameras {
        lo = lo.inf(&c.center);
        hi = hi.sup(&c.center);
    }
    for m in markers {
        lo.z = lo.z.min(m.z);
        hi.z = hi.z.max(m.z);
    }
    let aabb = Aabb::new(lo, hi);
    let centroid = markers.iter().sum::<Vec3>() / markers.len() as f64;
    aabb.translated(&(centroid - aabb.center()))
}

fn train_count(n: usize, train_fraction: f64) -> usize {
    ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1)
}

/// Random train/val partition with `round(n · fraction)` training views.
pub fn split_dataset(n: usize, train_fraction: f64, seed: u64) -> Split {
    split_stratified(&vec![0; n], train_fraction, seed)
}

/// Splits while keeping each band's train share as close as possible to the
/// global fraction (largest-remainder allocation).
pub fn split_stratified(bands: &[usize], train_fraction: f64, seed: u64) -> Split {
    let n = bands.len();
    assert!(n >= 2, "split needs at least two views");
    assert!(train_fraction > 0.0 && train_fraction < 1.0);
    let total = train_count(n, train_fraction);
    let n_bands = bands.iter().max().map_or(0, |m| m + 1);
    let members: Vec<Vec<usize>> = (0..n_bands)
        .map(|b| (0..n).filter(|&i| bands[i] == b).collect())
        .collect();
    let quotas: Vec<f64> = members.iter().map(|m| m.len() as f64 * total as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_bands).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = total - alloc.iter().sum::<usize>();
    for &b in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if alloc[b] < members[b].len() {
            alloc[b] += 1;
            remaining -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(total);
    let mut val = Vec::with_capacity(n - total);
    for (b, m) in members.iter().enumerate() {
        let mut m = m.clone();
        m.shuffle(&mut rng);
        train.extend_from_slice(&m[..alloc[b]]);
        val.extend_from_slice(&m[alloc[b]..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Split { train, val }
}

/// Band index per camera: 0 = nadir, 1 = oblique.
pub fn elevation_bands(cameras: &[Camera]) -> Vec<usize> {
    cameras
        .iter()
        .map(|c| usize::from(c.depression_deg() < NADIR_THRESHOLD_DEG))
        .collect()
}

/// Linear RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f32; 3]>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, col: u32, row: u32) -> [f64; 3] {
        let p = self.data[(row * self.width + col) as usize];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    pub fn set(&mut self, col: u32, row: u32, rgb: [f64; 3]) {
        self.data[(row * self.width + col) as usize] = [rgb[0] as f32, rgb[1] as f32, rgb[2] as f32];
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).with_path(path)?.into_rgb8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img
                .pixels()
                .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
                .collect(),
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let img = RgbImage::from_fn(self.width, self.height, |c, r| {
            let p = self.data[(r * self.width + c) as usize];
            Rgb([q(p[0]), q(p[1]), q(p[2])])
        });
        img.save(path).with_path(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Mat3;
    use rand::Rng;

    fn nadir_cam(id: &str, x: f64, y: f64, z: f64) -> Camera {
        Camera::with_fov(id, 16, 16, 60.0).look_at(Vec3::new(x, y, z), Vec3::new(x, y, 0.0), Vec3::y())
    }

    fn square_markers(z: f64) -> Vec<Vec3> {
        vec![
            Vec3::new(-5.0, -5.0, z),
            Vec3::new(5.0, -5.0, z),
            Vec3::new(5.0, 5.0, z),
            Vec3::new(-5.0, 5.0, z),
        ]
    }

    #[test]
    fn four_camera_rig_normalizes_by_max_abs() {
        let cams = vec![
            nadir_cam("a", -4.0, -4.0, 10.0),
            nadir_cam("b", 4.0, -4.0, 20.0),
            nadir_cam("c", 4.0, 4.0, 10.0),
            nadir_cam("d", -4.0, 4.0, 20.0),
        ];
        let markers = square_markers(0.0);
        let n = normalize_scene(&cams, &markers).unwrap();
        // Centroid (0,0,15); max |coordinate| after centering = 15 (markers at z = −15).
        assert!((n.norm.scale - 1.0 / 15.0).abs() < 1e-12);
        assert!((n.norm.rotation - Mat3::identity()).abs().max() < 1e-12);
        for p in n.cameras.iter().map(|c| c.center).chain(n.markers.iter().copied()) {
            assert!(p.amax() <= 1.0 + 1e-12);
        }
        assert!((n.plane.intercept + 1.0).abs() < 1e-12);
        assert!((n.cameras[1].center - Vec3::new(4.0 / 15.0, -4.0 / 15.0, 5.0 / 15.0)).norm() < 1e-12);
    }

    #[test]
    fn already_normalized_scene_is_nearly_identity() {
        let cams = vec![nadir_cam("a", -1.0, 0.0, 0.5), nadir_cam("b", 1.0, 0.0, -0.5)];
        let markers = vec![
            Vec3::new(-1.0, -1.0, -0.8),
            Vec3::new(1.0, -1.0, -0.8),
            Vec3::new(0.0, 1.0, -0.8),
        ];
        let n = normalize_scene(&cams, &markers).unwrap();
        assert!((n.norm.rotation - Mat3::identity()).abs().max() < 1e-12);
        assert!((n.norm.scale - 1.0).abs() < 1e-12);
        assert!(n.norm.translation.norm() < 1e-12);
    }

    #[test]
    fn tilted_markers_become_horizontal() {
        let markers: Vec<Vec3> = [(-3.0, -2.0), (4.0, -1.0), (1.0, 5.0), (-2.0, 3.0), (0.0, 0.0)]
            .iter()
            .map(|&(x, y)| Vec3::new(x, y, 0.1 * x))
            .collect();
        let cams = vec![nadir_cam("a", 0.0, 0.0, 10.0), nadir_cam("b", 3.0, 1.0, 12.0)];
        let n = normalize_scene(&cams, &markers).unwrap();
        for m in &n.markers {
            assert!((m.z - n.plane.intercept).abs() < 1e-10);
        }
        let normal = n.norm.rotation * Vec3::new(-0.1, 0.0, 1.0).normalize();
        assert!((normal - Vec3::z()).norm() < 1e-10);
    }

    #[test]
    fn random_scenes_keep_cameras_above_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let tilt = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 1.0).normalize();
            let r = rotation_plane_to_z(&tilt).transpose();
            let off = Vec3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-5.0..5.0));
            let markers: Vec<Vec3> = (0..8)
                .map(|_| r * Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), 0.0) + off)
                .collect();
            let cams: Vec<Camera> = (0..5)
                .map(|i| {
                    let local = Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(3.0..15.0));
                    let eye = r * local + off;
                    Camera::with_fov(format!("{i}"), 8, 8, 60.0).look_at(eye, off, r * Vec3::y())
                })
                .collect();
            let n = normalize_scene(&cams, &markers).unwrap();
            assert!((n.norm.rotation * tilt - Vec3::z()).norm() < 1e-9);
            for c in &n.cameras {
                assert!(c.center.z > n.plane.intercept);
                assert!(c.center.amax() <= 1.0 + 1e-9);
            }
            let bx = derive_scene_box(&n.cameras, &n.markers);
            let centroid = n.markers.iter().sum::<Vec3>() / n.markers.len() as f64;
            assert!((bx.center() - centroid).norm() < 1e-9);
        }
    }

    #[test]
    fn collinear_markers_are_rejected() {
        let cams = vec![nadir_cam("a", 0.0, 0.0, 10.0), nadir_cam("b", 3.0, 1.0, 12.0)];
        let markers = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(normalize_scene(&cams, &markers), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn scene_box_arithmetic() {
        let cams = vec![
            nadir_cam("a", -1.0, -0.5, 0.4),
            nadir_cam("b", 1.0, 0.5, 0.6),
        ];
        let markers = vec![Vec3::new(0.0, -0.2, 0.0), Vec3::new(0.2, 0.0, 0.0), Vec3::new(0.1, 0.2, 0.0)];
        let b = derive_scene_box(&cams, &markers);
        assert!((b.extent() - Vec3::new(2.0, 1.0, 0.6)).norm() < 1e-12);
        assert!((b.center() - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn symmetric_rig_box_is_centered_and_contains_everything() {
        let cams: Vec<Camera> = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .iter()
            .map(|&(x, y)| nadir_cam("c", x, y, 0.8))
            .collect();
        let markers = square_markers(0.0).iter().map(|m| m * 0.1).collect::<Vec<_>>();
        let b = derive_scene_box(&cams, &markers);
        assert!(b.center().norm() < 1e-12);
        for c in &cams {
            assert!(c.center.x >= b.min.x && c.center.x <= b.max.x);
            assert!(c.center.y >= b.min.y && c.center.y <= b.max.y);
        }
        assert!(markers.iter().all(|m| b.contains(m, 0.0)));
    }

    #[test]
    fn offset_marker_cluster_sets_box_y() {
        let cams = vec![nadir_cam("a", -1.0, -1.0, 0.5), nadir_cam("b", 1.0, 1.0, 0.5)];
        let markers = vec![Vec3::new(0.0, 0.6, 0.0), Vec3::new(0.1, 0.7, 0.0), Vec3::new(-0.1, 0.8, 0.0)];
        let b = derive_scene_box(&cams, &markers);
        assert!((b.center().y - 0.7).abs() < 1e-12);
    }

    #[test]
    fn split_counts_and_partition() {
        let s = split_dataset(130, 0.9, 42);
        assert_eq!((s.train.len(), s.val.len()), (117, 13));
        let s = split_dataset(10, 0.9, 1);
        assert_eq!((s.train.len(), s.val.len()), (9, 1));
        assert_eq!(split_dataset(130, 0.9, 42), split_dataset(130, 0.9, 42));
        assert_ne!(split_dataset(130, 0.9, 42), split_dataset(130, 0.9, 43));
        let s = split_dataset(2, 0.99, 0);
        assert_eq!((s.train.len(), s.val.len()), (1, 1));
    }

    #[test]
    fn stratified_split_balances_bands() {
        // 100 oblique + 30 nadir views.
        let bands: Vec<usize> = (0..130).map(|i| usize::from(i >= 30)).collect();
        let s = split_stratified(&bands, 0.9, 7);
        assert_eq!(s.train.len(), 117);
        let nadir_val = s.val.iter().filter(|&&i| i < 30).count();
        assert_eq!(nadir_val, 3);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..130).collect::<Vec<_>>());
    }

    #[test]
    fn image_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(3, 2);
        img.set(1, 1, [1.0, 0.0, 128.0 / 255.0]);
        let p = dir.path().join("i.png");
        img.write_png(&p).unwrap();
        let back = Image::read_png(&p).unwrap();
        assert_eq!(back, img);
    }
}
