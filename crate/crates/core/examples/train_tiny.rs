//! Synthesizes the tiny scene, prepares it and trains a short run.
//!
//! `cargo run --release --example train_tiny -- [iterations] [rays]`

use std::time::Instant;

use bathy_nerf::dataprep::{prepare_dataset, Dataset, PrepOptions};
use bathy_nerf::synthscene::{render_dataset, SyntheticScene, Trajectory};
use bathy_nerf::training::{fit, view_psnr, TrainConfig};

fn main() -> bathy_nerf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let rays = args.next().and_then(|a| a.parse().ok()).unwrap_or(512);

    let dir = std::env::temp_dir().join("bathy_train_tiny");
    let raw = render_dataset(&SyntheticScene::default(), &Trajectory::with_cameras(12), 64, &dir.join("raw"))?;
    let mut opts = PrepOptions::new(&raw.cameras, &raw.markers, &raw.images, dir.join("data"));
    opts.masks = Some(raw.masks.clone());
    prepare_dataset(&opts)?;
    let data = Dataset::load(&dir.join("data"))?;

    let cfg = TrainConfig {
        max_iterations: iterations,
        rays_per_batch: rays,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = fit(&data, &cfg, Some(&dir.join("run")))?;
    let secs = start.elapsed().as_secs_f64();
    println!("{iterations} steps in {secs:.1} s ({:.1} ms/step)", 1e3 * secs / iterations.max(1) as f64);
    let first = out.metrics.first().map_or(0.0, |m| m.rgb);
    let last = out.metrics.last().map_or(0.0, |m| m.rgb);
    println!("L_rgb {first:.4} -> {last:.4}");
    for &v in data.bundle.split.train.iter().take(3) {
        println!("train view {v}: {:.2} dB", view_psnr(&out.model, &data, v));
    }
    Ok(())
}
