//! Trains the single-medium baseline and the two-media model with and
//! without refraction on one dataset, then compares their exported clouds.
//!
//! `cargo run --release --example ablate -- [iterations] [cameras] [resolution]`

use bathy_nerf::cli::ablate;
use bathy_nerf::dataprep::{prepare_dataset, Dataset, PrepOptions};
use bathy_nerf::eval::{report_csv, EvalOptions, Reference};
use bathy_nerf::export::DEFAULT_OPACITY_THRESHOLD;
use bathy_nerf::synthscene::{render_dataset, SyntheticScene, Trajectory};
use bathy_nerf::training::TrainConfig;

fn main() -> bathy_nerf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|a| a.parse().ok()).unwrap_or(1000);
    let cameras = args.next().and_then(|a| a.parse().ok()).unwrap_or(16);
    let res = args.next().and_then(|a| a.parse().ok()).unwrap_or(64);

    let dir = std::env::temp_dir().join("bathy_ablate");
    let scene = SyntheticScene::default();
    let raw = render_dataset(&scene, &Trajectory::with_cameras(cameras), res, &dir.join("raw"))?;
    let mut opts = PrepOptions::new(&raw.cameras, &raw.markers, &raw.images, dir.join("data"));
    opts.masks = Some(raw.masks.clone());
    prepare_dataset(&opts)?;
    let data = Dataset::load(&dir.join("data"))?;

    let cfg = TrainConfig {
        max_iterations: iterations,
        ..TrainConfig::default()
    };
    let evals = ablate(
        &data,
        &cfg,
        &Reference::analytic(scene),
        DEFAULT_OPACITY_THRESHOLD,
        &EvalOptions::default(),
        Some(&dir.join("runs")),
    )?;
    let rows: Vec<_> = evals.into_iter().map(|e| e.report).collect();
    print!("{}", report_csv(&rows));
    println!("runs and report in {}", dir.join("runs").display());
    Ok(())
}
