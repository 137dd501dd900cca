//! Renders the synthetic two-media scene with ground-truth masks.
//!
//! `cargo run --release --example synth -- [preset] [cameras] [resolution]`

use bathy_nerf::dataprep::MediumLabel;
use bathy_nerf::synthscene::{render_view, SyntheticScene, Trajectory};

fn main() -> bathy_nerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "default".into());
    let cameras = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let res = args.next().and_then(|a| a.parse().ok()).unwrap_or(96);
    let scene = SyntheticScene::preset(&preset)
        .ok_or_else(|| bathy_nerf::Error::InvalidArgument(format!("unknown preset '{preset}'")))?;

    let dir = std::env::temp_dir().join("bathy_synth");
    std::fs::create_dir_all(&dir).ok();
    for (i, cam) in Trajectory::with_cameras(cameras).cameras(res).iter().enumerate() {
        let view = render_view(&scene, cam);
        let count = |l: MediumLabel| view.mask.count(l);
        let n = (cam.width * cam.height) as f64;
        println!(
            "{:<6} water {:5.1}%  land {:5.1}%  ignore {:5.1}%",
            cam.id,
            100.0 * count(MediumLabel::Water) as f64 / n,
            100.0 * count(MediumLabel::Land) as f64 / n,
            100.0 * count(MediumLabel::Ignore) as f64 / n
        );
        if i == 0 {
            view.image.write_png(&dir.join("view0.png"))?;
            view.mask.write_png(&dir.join("mask0.png"))?;
        }
    }
    println!("first view written to {}", dir.display());
    Ok(())
}
