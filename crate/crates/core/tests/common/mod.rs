#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bathy_nerf::dataprep::{prepare_dataset, Dataset, PrepOptions};
use bathy_nerf::field::{DensityFieldConfig, FieldConfig, HashGridConfig};
use bathy_nerf::sampling::ProposalConfig;
use bathy_nerf::synthscene::{render_dataset, SyntheticScene, Trajectory};
use bathy_nerf::training::TrainConfig;

pub fn small_grid(levels: usize, max_resolution: usize) -> HashGridConfig {
    HashGridConfig {
        levels,
        base_resolution: 8,
        max_resolution,
        features_per_level: 2,
        table_size_log2: 12,
    }
}

/// A model small enough for sub-second test runs.
pub fn tiny_config(iterations: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        max_iterations: iterations,
        rays_per_batch: 64,
        ..TrainConfig::default()
    };
    cfg.model.field = FieldConfig {
        grid: small_grid(3, 32),
        density_hidden: 16,
        color_hidden: 16,
        ..FieldConfig::default()
    };
    cfg.model.proposal_fields = vec![DensityFieldConfig {
        grid: small_grid(2, 16),
        hidden: 8,
    }];
    cfg.model.sampling = ProposalConfig {
        proposal_samples: vec![16],
        nerf_samples: 8,
        warmup: 10,
        ..ProposalConfig::default()
    };
    cfg
}

pub const TINY_TOML: &str = r#"
max_iterations = 6
rays_per_batch = 64

[model.field]
density_hidden = 16
color_hidden = 16

[model.field.grid]
levels = 3
base_resolution = 8
max_resolution = 32
table_size_log2 = 12

[[model.proposal_fields]]
hidden = 8
[model.proposal_fields.grid]
levels = 2
base_resolution = 8
max_resolution = 16
table_size_log2 = 12

[model.sampling]
proposal_samples = [16]
nerf_samples = 8
warmup = 10
"#;

/// Synthesizes and prepares a small default-scene dataset under `root`.
/// Returns `(synth dir, dataset dir)`.
pub fn tiny_dataset(root: &Path, cameras: usize, res: u32) -> (PathBuf, PathBuf) {
    let synth = root.join("synth");
    let raw = render_dataset(&SyntheticScene::default(), &Trajectory::with_cameras(cameras), res, &synth).unwrap();
    let data = synth.join("data");
    let mut opts = PrepOptions::new(&raw.cameras, &raw.markers, &raw.images, &data);
    opts.masks = Some(raw.masks.clone());
    prepare_dataset(&opts).unwrap();
    (synth, data)
}

pub fn load(dir: &Path) -> Dataset {
    Dataset::load(dir).unwrap()
}

pub mod oracle {
    use bathy_nerf::dataprep::{Camera, MediumLabel};
    use bathy_nerf::export::{collect_points, ExportOptions, RayDepth};
    use bathy_nerf::geom::{Aabb, Ray, Vec3, WaterPlane};
    use bathy_nerf::sampling::build_virtual_ray;
    use bathy_nerf::synthscene::SyntheticScene;

    pub fn world_box() -> Aabb {
        Aabb::new(Vec3::repeat(-50.0), Vec3::repeat(50.0))
    }

    pub fn plane(scene: &SyntheticScene) -> WaterPlane {
        WaterPlane {
            n_water: scene.n_water,
            ..WaterPlane::horizontal(scene.water_plane_z())
        }
    }

    /// Feeds the true virtual-ray range of every pixel-center ray through the
    /// exporter. Returns `(exported, true hit)` pairs and the water count.
    pub fn true_depth_export(scene: &SyntheticScene, cameras: &[Camera], refraction: bool) -> (Vec<(Vec3, Vec3)>, usize) {
        let plane = plane(scene);
        let mut rays = Vec::new();
        let mut truth = Vec::new();
        let mut water = 0;
        for cam in cameras {
            for row in 0..cam.height {
                for col in 0..cam.width {
                    let ray = cam.pixel_ray(col, row);
                    let hit = scene.trace(&ray);
                    let Some(p) = hit.point else { continue };
                    if hit.label == MediumLabel::Ignore {
                        continue;
                    }
                    water += (hit.label == MediumLabel::Water) as usize;
                    let spec = build_virtual_ray(&ray, &plane, hit.label, &world_box(), true);
                    rays.push(RayDepth {
                        spec,
                        depth: hit.optical_depth,
                        accumulation: 1.0,
                        rgb: hit.rgb,
                    });
                    truth.push(p);
                }
            }
        }
        let opts = ExportOptions {
            refraction,
            ..ExportOptions::default()
        };
        let cloud = collect_points(rays, &opts).unwrap();
        (cloud.positions.into_iter().zip(truth).collect(), water)
    }

    /// Closest point between two lines.
    pub fn triangulate(a: &Ray, b: &Ray) -> Vec3 {
        let w = a.origin - b.origin;
        let (da, db) = (a.direction, b.direction);
        let (aa, ab, bb) = (da.dot(&da), da.dot(&db), db.dot(&db));
        let (d, e) = (da.dot(&w), db.dot(&w));
        let den = aa * bb - ab * ab;
        let s = (ab * e - bb * d) / den;
        let t = (aa * e - ab * d) / den;
        0.5 * (a.at(s) + b.at(t))
    }

    /// Apparent depths of seabed points seen by straight-ray triangulation
    /// from two nadir cameras `baseline` apart, pushed through the exporter
    /// with refraction off.
    pub fn apparent_depths(scene: &SyntheticScene, altitude: f64, baseline: f64, targets: &[Vec3]) -> Vec<f64> {
        let plane = plane(scene);
        let mut rays = Vec::new();
        for p in targets {
            let eyes = [
                p + Vec3::new(-baseline / 2.0, 0.0, altitude - p.z),
                p + Vec3::new(baseline / 2.0, 0.0, altitude - p.z),
            ];
            let straight: Vec<Ray> = eyes
                .iter()
                .map(|e| Ray::new(*e, scene.interface_point_towards(e, p) - e))
                .collect();
            let apparent = triangulate(&straight[0], &straight[1]);
            let range = (apparent - straight[0].origin).dot(&straight[0].direction);
            rays.push(RayDepth {
                spec: build_virtual_ray(&straight[0], &plane, MediumLabel::Water, &world_box(), true),
                depth: range,
                accumulation: 1.0,
                rgb: [0.0; 3],
            });
        }
        let opts = ExportOptions {
            refraction: false,
            ..ExportOptions::default()
        };
        let cloud = collect_points(rays, &opts).unwrap();
        cloud.positions.iter().map(|q| scene.water_plane_z() - q.z).collect()
    }
}
