//! Trains briefly and exports point clouds with and without refraction
//! correction, in the global frame.
//!
//! `cargo run --release --example export -- [iterations]`

use bathy_nerf::dataprep::{prepare_dataset, Dataset, PrepOptions};
use bathy_nerf::export::{denormalize, export_pointcloud, write_ply, ExportOptions, Frame};
use bathy_nerf::synthscene::{render_dataset, SyntheticScene, Trajectory};
use bathy_nerf::training::{fit, TrainConfig};

fn main() -> bathy_nerf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(400);
    let dir = std::env::temp_dir().join("bathy_export");
    let scene = SyntheticScene::default();
    let raw = render_dataset(&scene, &Trajectory::with_cameras(12), 48, &dir.join("raw"))?;
    let mut opts = PrepOptions::new(&raw.cameras, &raw.markers, &raw.images, dir.join("data"));
    opts.masks = Some(raw.masks.clone());
    prepare_dataset(&opts)?;
    let data = Dataset::load(&dir.join("data"))?;

    let cfg = TrainConfig {
        max_iterations: iterations,
        rays_per_batch: 512,
        ..TrainConfig::default()
    };
    let model = fit(&data, &cfg, None)?.model;
    for refraction in [true, false] {
        let opts = ExportOptions {
            refraction,
            ..ExportOptions::default()
        };
        let cloud = export_pointcloud(&model, &data, &opts)?;
        let cloud = denormalize(&cloud, &data.bundle.norm, &data.bundle.chunk, Frame::Global)?;
        let below: Vec<f64> = cloud.positions.iter().map(|p| p.z).filter(|&z| z < scene.water_plane_z()).collect();
        let mean_z = below.iter().sum::<f64>() / below.len().max(1) as f64;
        let path = dir.join(if refraction { "refraction_on.ply" } else { "refraction_off.ply" });
        write_ply(&cloud, &path, true)?;
        println!(
            "refraction {:<5} {:>6} points, {:>6} below the surface at mean z {mean_z:+.3} -> {}",
            refraction,
            cloud.len(),
            below.len(),
            path.display()
        );
    }
    Ok(())
}
