//! `manifest.json` plus the raw camera/marker input files consumed by `prep`.
//!
//! All transforms are stored as a row-major 3×3 rotation, a translation
//! 3-vector and a scalar scale.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::mask::{MediumLabel, MediumMask, DEFAULT_MASK_THRESHOLD};
use super::{derive_scene_box, elevation_bands, normalize_scene, split_stratified, Image};
use crate::error::{Error, IoContext, Result};
use crate::geom::{Aabb, Mat3, SimilarityTransform, Vec3, WaterPlane};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformDto {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl From<&SimilarityTransform> for TransformDto {
    fn from(t: &SimilarityTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: t.translation.into(),
            scale: t.scale,
        }
    }
}

impl From<&TransformDto> for SimilarityTransform {
    fn from(d: &TransformDto) -> Self {
        SimilarityTransform::new(
            Mat3::from_row_slice(&d.rotation),
            Vec3::from(d.translation),
            d.scale,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlaneDto {
    normal: [f64; 3],
    intercept: f64,
    n_air: f64,
    n_water: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoxDto {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraDto {
    id: String,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Camera-to-world rotation, row-major.
    rotation: [f64; 9],
    center: [f64; 3],
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestDto {
    version: u32,
    cameras: Vec<CameraDto>,
    markers: Vec<[f64; 3]>,
    water_plane: PlaneDto,
    scene_box: BoxDto,
    norm: TransformDto,
    chunk: TransformDto,
    split: Split,
    mask_threshold: f64,
}

/// Normalized dataset description. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub cameras: Vec<Camera>,
    pub images: Vec<String>,
    pub masks: Option<Vec<String>>,
    pub markers: Vec<Vec3>,
    pub water_plane: WaterPlane,
    pub scene_box: Aabb,
    /// Input (chunk-local) frame → normalized frame.
    pub norm: SimilarityTransform,
    /// Chunk-local frame → global frame.
    pub chunk: SimilarityTransform,
    pub split: Split,
    pub mask_threshold: f64,
}

fn rotation_rows(r: &Mat3) -> [f64; 9] {
    TransformDto::from(&SimilarityTransform::new(*r, Vec3::zeros(), 1.0)).rotation
}

pub fn write_manifest(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    let cameras = bundle
        .cameras
        .iter()
        .enumerate()
        .map(|(i, c)| CameraDto {
            id: c.id.clone(),
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: rotation_rows(&c.rotation),
            center: c.center.into(),
            image: bundle.images[i].clone(),
            mask: bundle.masks.as_ref().map(|m| m[i].clone()),
        })
        .collect();
    let dto = ManifestDto {
        version: MANIFEST_VERSION,
        cameras,
        markers: bundle.markers.iter().map(|&m| m.into()).collect(),
        water_plane: PlaneDto {
            normal: bundle.water_plane.normal.into(),
            intercept: bundle.water_plane.intercept,
            n_air: bundle.water_plane.n_air,
            n_water: bundle.water_plane.n_water,
        },
        scene_box: BoxDto {
            min: bundle.scene_box.min.into(),
            max: bundle.scene_box.max.into(),
        },
        norm: (&bundle.norm).into(),
        chunk: (&bundle.chunk).into(),
        split: bundle.split.clone(),
        mask_threshold: bundle.mask_threshold,
    };
    fs::create_dir_all(dir).with_path(dir)?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&dto)?).with_path(path)
}

/// Reads and validates a manifest, including image/mask pairing.
pub fn read_manifest(dir: &Path) -> Result<DatasetBundle> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).with_path(&path)?;
    let dto: ManifestDto = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if dto.version != MANIFEST_VERSION {
        return Err(Error::Schema(format!("unsupported manifest version {}", dto.version)));
    }
    let n = dto.cameras.len();
    let with_mask = dto.cameras.iter().filter(|c| c.mask.is_some()).count();
    if with_mask != 0 && with_mask != n {
        return Err(Error::MaskMismatch(format!("{} of {n} images have masks", with_mask)));
    }
    let mut cameras = Vec::with_capacity(n);
    for c in &dto.cameras {
        let cam = Camera {
            id: c.id.clone(),
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: Mat3::from_row_slice(&c.rotation),
            center: Vec3::from(c.center),
        };
        cam.validate().map_err(|e| Error::Schema(e.to_string()))?;
        cameras.push(cam);
    }
    let all: Vec<usize> = {
        let mut v: Vec<usize> = dto.split.train.iter().chain(&dto.split.val).copied().collect();
        v.sort_unstable();
        v
    };
    if all != (0..n).collect::<Vec<_>>() {
        return Err(Error::Schema("split is not a partition of the cameras".into()));
    }
    let bundle = DatasetBundle {
        cameras,
        images: dto.cameras.iter().map(|c| c.image.clone()).collect(),
        masks: (with_mask == n && n > 0).then(|| dto.cameras.iter().map(|c| c.mask.clone().unwrap()).collect()),
        markers: dto.markers.iter().map(|&m| Vec3::from(m)).collect(),
        water_plane: WaterPlane {
            normal: Vec3::from(dto.water_plane.normal),
            intercept: dto.water_plane.intercept,
            n_air: dto.water_plane.n_air,
            n_water: dto.water_plane.n_water,
        },
        scene_box: Aabb::new(Vec3::from(dto.scene_box.min), Vec3::from(dto.scene_box.max)),
        norm: (&dto.norm).into(),
        chunk: (&dto.chunk).into(),
        split: dto.split,
        mask_threshold: dto.mask_threshold,
    };
    if let Some(masks) = &bundle.masks {
        for (i, m) in masks.iter().enumerate() {
            check_mask_pair(&dir.join(&bundle.images[i]), &dir.join(m), &bundle.cameras[i])?;
        }
    }
    Ok(bundle)
}

fn check_mask_pair(image: &Path, mask: &Path, cam: &Camera) -> Result<()> {
    if !mask.is_file() {
        return Err(Error::MaskMismatch(format!("missing mask {}", mask.display())));
    }
    let md = image::image_dimensions(mask).with_path(mask)?;
    let expected = if image.is_file() {
        image::image_dimensions(image).with_path(image)?
    } else {
        (cam.width, cam.height)
    };
    if md != expected {
        return Err(Error::MaskMismatch(format!(
            "{} is {}×{}, image is {}×{}",
            mask.display(),
            md.0,
            md.1,
            expected.0,
            expected.1
        )));
    }
    Ok(())
}

/// One entry of the camera input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraInput {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world 4×4, row-major, OpenCV axes.
    pub pose: [[f64; 4]; 4],
    /// Image file name, relative to the image directory.
    pub image: String,
}

impl CameraInput {
    pub fn from_camera(c: &Camera, image: String) -> Self {
        Self {
            id: c.id.clone(),
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            pose: c.pose_matrix(),
            image,
        }
    }

    pub fn to_camera(&self) -> Camera {
        let mut cam = Camera {
            id: self.id.clone(),
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation: Mat3::identity(),
            center: Vec3::zeros(),
        };
        cam.set_pose_matrix(&self.pose);
        cam
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraInputFile {
    /// Chunk-local → global transform; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk: Option<TransformDto>,
    pub cameras: Vec<CameraInput>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkerFile {
    pub markers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct PrepOptions {
    pub cameras: PathBuf,
    pub markers: PathBuf,
    pub images: PathBuf,
    pub masks: Option<PathBuf>,
    pub out: PathBuf,
    pub train_fraction: f64,
    pub seed: u64,
    pub mask_threshold: f64,
}

impl PrepOptions {
    pub fn new(cameras: impl Into<PathBuf>, markers: impl Into<PathBuf>, images: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            cameras: cameras.into(),
            markers: markers.into(),
            images: images.into(),
            masks: None,
            out: out.into(),
            train_fraction: 0.9,
            seed: 42,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_path(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Builds a normalized dataset directory from raw cameras, markers, images and masks.
pub fn prepare_dataset(opts: &PrepOptions) -> Result<DatasetBundle> {
    let cam_file: CameraInputFile = read_json(&opts.cameras)?;
    let marker_file: MarkerFile = read_json(&opts.markers)?;
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(Error::InvalidArgument("train fraction must lie in (0, 1)".into()));
    }
    let cameras: Vec<Camera> = cam_file.cameras.iter().map(CameraInput::to_camera).collect();
    for c in &cameras {
        c.validate()?;
    }
    let markers: Vec<Vec3> = marker_file.markers.iter().map(|&m| Vec3::from(m)).collect();
    let normalized = normalize_scene(&cameras, &markers)?;
    let scene_box = derive_scene_box(&normalized.cameras, &normalized.markers);
    let split = split_stratified(&elevation_bands(&normalized.cameras), opts.train_fraction, opts.seed);

    let img_dir = opts.out.join("images");
    fs::create_dir_all(&img_dir).with_path(&img_dir)?;
    let mut images = Vec::with_capacity(cameras.len());
    let mut masks = opts.masks.as_ref().map(|_| Vec::with_capacity(cameras.len()));
    for (input, cam) in cam_file.cameras.iter().zip(&cameras) {
        let name = Path::new(&input.image)
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("bad image name {}", input.image)))?;
        let src = opts.images.join(&input.image);
        let (w, h) = image::image_dimensions(&src).with_path(&src)?;
        if (w, h) != (cam.width, cam.height) {
            return Err(Error::InvalidArgument(format!(
                "{} is {w}×{h} but camera {} expects {}×{}",
                src.display(),
                cam.id,
                cam.width,
                cam.height
            )));
        }
        let rel = Path::new("images").join(name);
        fs::copy(&src, opts.out.join(&rel)).with_path(&src)?;
        images.push(rel.to_string_lossy().into_owned());
        if let (Some(mask_dir), Some(masks)) = (&opts.masks, masks.as_mut()) {
            let src_mask = mask_dir.join(name);
            check_mask_pair(&src, &src_mask, cam)?;
            let out_dir = opts.out.join("masks");
            fs::create_dir_all(&out_dir).with_path(&out_dir)?;
            let rel = Path::new("masks").join(name);
            fs::copy(&src_mask, opts.out.join(&rel)).with_path(&src_mask)?;
            masks.push(rel.to_string_lossy().into_owned());
        }
    }
    let bundle = DatasetBundle {
        cameras: normalized.cameras,
        images,
        masks,
        markers: normalized.markers,
        water_plane: normalized.plane,
        scene_box,
        norm: normalized.norm,
        chunk: cam_file.chunk.as_ref().map(SimilarityTransform::from).unwrap_or_default(),
        split,
        mask_threshold: opts.mask_threshold,
    };
    write_manifest(&bundle, &opts.out)?;
    Ok(bundle)
}

/// A manifest together with its decoded images and masks.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub bundle: DatasetBundle,
    pub images: Vec<Image>,
    /// Per-image medium labels; all water when the dataset has no masks.
    pub masks: Vec<MediumMask>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let bundle = read_manifest(dir)?;
        let mut images = Vec::with_capacity(bundle.cameras.len());
        let mut masks = Vec::with_capacity(bundle.cameras.len());
        for (i, cam) in bundle.cameras.iter().enumerate() {
            let img = Image::read_png(&dir.join(&bundle.images[i]))?;
            if (img.width, img.height) != (cam.width, cam.height) {
                return Err(Error::Schema(format!("image {} does not match its camera", bundle.images[i])));
            }
            images.push(img);
            masks.push(match &bundle.masks {
                Some(m) => MediumMask::read_png(&dir.join(&m[i]), bundle.mask_threshold)?,
                None => MediumMask::filled(cam.width, cam.height, MediumLabel::Water),
            });
        }
        Ok(Self {
            root: dir.to_path_buf(),
            bundle,
            images,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.bundle.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundle.cameras.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bundle(rng: &mut ChaCha8Rng, n: usize, masks: bool) -> DatasetBundle {
        let cameras: Vec<Camera> = (0..n)
            .map(|i| {
                Camera::with_fov(format!("cam{i}"), 8, 6, rng.gen_range(30.0..90.0)).look_at(
                    Vec3::new(rng.gen(), rng.gen(), rng.gen_range(0.5..1.0)),
                    Vec3::new(rng.gen(), rng.gen(), -0.5),
                    Vec3::z(),
                )
            })
            .collect();
        let rot = crate::geom::so3_exp(&Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        DatasetBundle {
            images: (0..n).map(|i| format!("images/cam{i}.png")).collect(),
            masks: masks.then(|| (0..n).map(|i| format!("masks/cam{i}.png")).collect()),
            cameras,
            markers: (0..5).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect(),
            water_plane: WaterPlane::horizontal(rng.gen()),
            scene_box: Aabb::new(Vec3::new(-1.0, -2.0, -0.5), Vec3::new(1.0, 0.3, 0.9)),
            norm: SimilarityTransform::new(rot, Vec3::new(rng.gen(), rng.gen(), rng.gen()), rng.gen_range(0.01..1.0)),
            chunk: SimilarityTransform::new(rot.transpose(), Vec3::new(1e5, 2e6, 30.0), 1.7),
            split: super::super::split_dataset(n, 0.75, 3),
            mask_threshold: 0.5,
        }
    }

    fn write_images(dir: &Path, b: &DatasetBundle) {
        fs::create_dir_all(dir.join("images")).unwrap();
        fs::create_dir_all(dir.join("masks")).unwrap();
        for (i, c) in b.cameras.iter().enumerate() {
            Image::new(c.width, c.height).write_png(&dir.join(&b.images[i])).unwrap();
            if let Some(m) = &b.masks {
                MediumMask::filled(c.width, c.height, MediumLabel::Water)
                    .write_png(&dir.join(&m[i]))
                    .unwrap();
            }
        }
    }

    #[test]
    fn manifest_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for masks in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let b = random_bundle(&mut rng, 6, masks);
            write_images(dir.path(), &b);
            write_manifest(&b, dir.path()).unwrap();
            let back = read_manifest(dir.path()).unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn missing_water_plane_is_schema_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dir = tempfile::tempdir().unwrap();
        let b = random_bundle(&mut rng, 3, false);
        write_manifest(&b, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("water_plane");
        fs::write(&path, v.to_string()).unwrap();
        match read_manifest(dir.path()) {
            Err(Error::Schema(msg)) => assert!(msg.contains("water_plane")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_mask_resolution_is_mask_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dir = tempfile::tempdir().unwrap();
        let b = random_bundle(&mut rng, 3, true);
        write_images(dir.path(), &b);
        MediumMask::filled(4, 4, MediumLabel::Land)
            .write_png(&dir.path().join(&b.masks.as_ref().unwrap()[1]))
            .unwrap();
        write_manifest(&b, dir.path()).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::MaskMismatch(_))));
    }

    #[test]
    fn missing_mask_is_mask_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dir = tempfile::tempdir().unwrap();
        let b = random_bundle(&mut rng, 3, true);
        write_images(dir.path(), &b);
        fs::remove_file(dir.path().join(&b.masks.as_ref().unwrap()[2])).unwrap();
        write_manifest(&b, dir.path()).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::MaskMismatch(_))));
    }
}
