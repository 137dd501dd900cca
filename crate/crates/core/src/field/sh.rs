//! Real spherical harmonics over the first four bands (16 coefficients) for
//! viewing directions.

use crate::geom::Vec3;

pub const SH_DIM: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_87;
const C2A: f64 = 1.092_548_430_592_079_2;
const C2B: f64 = 0.946_174_695_757_559_97;
const C2C: f64 = 0.315_391_565_252_519_99;
const C2D: f64 = 0.546_274_215_296_039_59;
const C3A: f64 = 0.590_043_589_926_643_52;
const C3B: f64 = 2.890_611_442_640_553_8;
const C3C: f64 = 0.457_045_799_464_465_72;
const C3D: f64 = 0.373_176_332_590_115_4;
const C3E: f64 = 1.445_305_721_320_276_9;

pub fn encode(d: &Vec3, out: &mut [f64]) {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[0] = C0;
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    out[4] = C2A * x * y;
    out[5] = -C2A * y * z;
    out[6] = C2B * zz - C2C;
    out[7] = -C2A * x * z;
    out[8] = C2D * (xx - yy);
    out[9] = C3A * y * (yy - 3.0 * xx);
    out[10] = C3B * x * y * z;
    out[11] = C3C * y * (1.0 - 5.0 * zz);
    out[12] = C3D * z * (5.0 * zz - 3.0);
    out[13] = C3C * x * (1.0 - 5.0 * zz);
    out[14] = C3E * z * (xx - yy);
    out[15] = C3A * x * (3.0 * yy - xx);
}

/// Pulls `grad_out` (one value per coefficient) back to the direction.
pub fn backward(d: &Vec3, g: &[f64]) -> Vec3 {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let mut r = Vec3::zeros();
    r.y += -C1 * g[1];
    r.z += C1 * g[2];
    r.x += -C1 * g[3];
    r += Vec3::new(y, x, 0.0) * (C2A * g[4]);
    r += Vec3::new(0.0, z, y) * (-C2A * g[5]);
    r.z += 2.0 * C2B * z * g[6];
    r += Vec3::new(z, 0.0, x) * (-C2A * g[7]);
    r += Vec3::new(2.0 * x, -2.0 * y, 0.0) * (C2D * g[8]);
    r += Vec3::new(-6.0 * x * y, 3.0 * yy - 3.0 * xx, 0.0) * (C3A * g[9]);
    r += Vec3::new(y * z, x * z, x * y) * (C3B * g[10]);
    r += Vec3::new(0.0, 1.0 - 5.0 * zz, -10.0 * y * z) * (C3C * g[11]);
    r.z += C3D * (15.0 * zz - 3.0) * g[12];
    r += Vec3::new(1.0 - 5.0 * zz, 0.0, -10.0 * x * z) * (C3C * g[13]);
    r += Vec3::new(2.0 * x * z, -2.0 * y * z, xx - yy) * (C3E * g[14]);
    r += Vec3::new(3.0 * yy - 3.0 * xx, 6.0 * x * y, 0.0) * (C3A * g[15]);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                .normalize();
            let g: Vec<f64> = (0..SH_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let an = backward(&d, &g);
            let h = 1e-6;
            for k in 0..3 {
                let (mut p, mut m) = (d, d);
                p[k] += h;
                m[k] -= h;
                let (mut a, mut b) = ([0.0; SH_DIM], [0.0; SH_DIM]);
                encode(&p, &mut a);
                encode(&m, &mut b);
                let fd: f64 = (0..SH_DIM).map(|i| (a[i] - b[i]) * g[i]).sum::<f64>() / (2.0 * h);
                assert!((fd - an[k]).abs() < 1e-7, "{fd} vs {}", an[k]);
            }
        }
    }

    #[test]
    fn orthonormal_on_the_sphere() {
        // Monte-Carlo check of <Y_i, Y_j> = δ_ij over the unit sphere.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mut gram = [[0.0; SH_DIM]; SH_DIM];
        let mut y = [0.0; SH_DIM];
        for _ in 0..n {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            encode(&Vec3::new(r * phi.cos(), r * phi.sin(), z), &mut y);
            for i in 0..SH_DIM {
                for j in 0..SH_DIM {
                    gram[i][j] += y[i] * y[j];
                }
            }
        }
        let area = 4.0 * std::f64::consts::PI;
        for i in 0..SH_DIM {
            for j in 0..SH_DIM {
                let v = gram[i][j] * area / n as f64;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 0.05, "({i},{j}) = {v}");
            }
        }
    }
}
