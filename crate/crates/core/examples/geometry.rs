//! Refraction at a flat water surface: Snell's law, the kinked virtual ray,
//! and the depth error of ignoring refraction.
//!
//! `cargo run --release --example geometry`

use bathy_nerf::dataprep::MediumLabel;
use bathy_nerf::export::backproject;
use bathy_nerf::geom::{angle_between, refract, Aabb, Ray, Vec3, WaterPlane, N_AIR, N_WATER};
use bathy_nerf::sampling::{build_virtual_ray, collide};
use bathy_nerf::synthscene::analytic_apparent_depth;

fn main() -> bathy_nerf::Result<()> {
    let plane = WaterPlane::horizontal(0.0);
    let aabb = Aabb::new(Vec3::new(-10.0, -10.0, -5.0), Vec3::new(10.0, 10.0, 5.0));
    let depth = 2.0;

    for deg in [0.0f64, 15.0, 30.0, 45.0] {
        let a = deg.to_radians();
        let d = Vec3::new(a.sin(), 0.0, -a.cos());
        let w = refract(&d, &plane.normal, N_AIR, N_WATER)?;
        let up = plane.normal;
        let residual = N_AIR * angle_between(&d, &-up).sin() - N_WATER * angle_between(&w, &-up).sin();

        // Aim at the seabed point reached by the refracted ray.
        let eye = Vec3::new(-4.0 * a.tan(), 0.0, 4.0);
        let ray = collide(&Ray::new(eye, d), &aabb, 0.0).expect("ray hits the box");
        let spec = build_virtual_ray(&ray, &plane, MediumLabel::Water, &aabb, true);
        let t_bed = spec.t_i + depth / -w.z;
        let truth = spec.position(t_bed);
        let with = backproject(&spec, t_bed, true);
        let without = backproject(&spec, t_bed, false);
        println!(
            "{deg:>4}°  θ_w {:6.2}°  Snell residual {residual:+.1e}  seabed z {:+.3}  kinked {:+.3}  straight {:+.3}",
            angle_between(&w, &-up).to_degrees(),
            truth.z,
            with.z,
            without.z
        );
    }
    println!(
        "apparent depth of {depth} m at nadir: {:.4} m",
        analytic_apparent_depth(depth, 0.0, N_WATER)
    );
    Ok(())
}
