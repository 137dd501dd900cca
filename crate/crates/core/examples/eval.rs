//! Scores synthetic clouds against the analytic scene: a faithful one, one
//! pushed up by the refractive apparent-depth factor, and a sparse one.
//!
//! `cargo run --release --example eval`

use bathy_nerf::eval::{evaluate_cloud, report_csv, EvalOptions, Reference};
use bathy_nerf::export::{Frame, PointCloud};
use bathy_nerf::geom::{Vec3, N_WATER};
use bathy_nerf::synthscene::SyntheticScene;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> bathy_nerf::Result<()> {
    let scene = SyntheticScene::default();
    let z0 = scene.water_plane_z();
    let reference = Reference::analytic(scene);
    let (min, max) = reference.crop(0.8);
    let truth = reference.sample_points(0.05, min, max);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut noisy = |f: &dyn Fn(&Vec3) -> Vec3, keep: f64| {
        let mut pts = Vec::new();
        for p in &truth {
            if rng.gen_bool(keep) {
                pts.push(f(p) + Vec3::new(0.0, 0.0, rng.gen_range(-0.02..0.02)));
            }
        }
        PointCloud::from_points(pts, Frame::Global)
    };
    let faithful = noisy(&|p| *p, 1.0);
    // Seabed seen without refraction correction sits at depth / n.
    let apparent = noisy(&|p| if p.z < z0 { Vec3::new(p.x, p.y, z0 + (p.z - z0) / N_WATER) } else { *p }, 1.0);
    let sparse = noisy(&|p| *p, 0.3);

    let opts = EvalOptions::default();
    let mut rows = Vec::new();
    for (name, cloud) in [("faithful", &faithful), ("apparent-depth", &apparent), ("sparse", &sparse)] {
        rows.push(evaluate_cloud(name, cloud, &reference, &opts)?.report);
    }
    print!("{}", report_csv(&rows));
    Ok(())
}
