//! Trains briefly, then renders a held-out view's colour and expected depth.
//!
//! `cargo run --release --example render -- [iterations]`

use bathy_nerf::dataprep::{prepare_dataset, Dataset, PrepOptions};
use bathy_nerf::export::write_pfm;
use bathy_nerf::synthscene::{render_dataset, SyntheticScene, Trajectory};
use bathy_nerf::training::{fit, view_psnr, TrainConfig};

fn main() -> bathy_nerf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(400);
    let dir = std::env::temp_dir().join("bathy_render");
    let raw = render_dataset(&SyntheticScene::default(), &Trajectory::with_cameras(12), 48, &dir.join("raw"))?;
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
    let v = data.bundle.split.val.first().copied().unwrap_or(0);
    let cam = &data.bundle.cameras[v];
    let view = model.render_view(cam, v, Some(&data.masks[v]));
    view.rgb.write_png(&dir.join("rgb.png"))?;
    write_pfm(&dir.join("depth.pfm"), cam.width, cam.height, &view.depth)?;
    let mean_acc = view.accumulation.iter().map(|&a| a as f64).sum::<f64>() / view.accumulation.len() as f64;
    println!("view {} ({}): PSNR {:.2} dB, mean opacity {mean_acc:.3}", v, cam.id, view_psnr(&model, &data, v));
    println!("wrote {} and {}", dir.join("rgb.png").display(), dir.join("depth.pfm").display());
    Ok(())
}
