//! Learned per-camera pose corrections `(r, t)`.
//!
//! The corrected camera-to-world pose is `R' = R·exp(r)`, `c' = c + R·t`.

use crate::dataprep::Camera;
use crate::geom::{skew, so3_exp, so3_right_jacobian, Mat3, Ray, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct PoseCorrection {
    /// `[r_x, r_y, r_z, t_x, t_y, t_z]` per camera.
    pub params: Vec<f64>,
}

impl PoseCorrection {
    pub fn zeros(n_cameras: usize) -> Self {
        Self {
            params: vec![0.0; 6 * n_cameras],
        }
    }

    pub fn len(&self) -> usize {
        self.params.len() / 6
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn rotation(&self, cam: usize) -> Vec3 {
        Vec3::from_column_slice(&self.params[6 * cam..6 * cam + 3])
    }

    pub fn translation(&self, cam: usize) -> Vec3 {
        Vec3::from_column_slice(&self.params[6 * cam + 3..6 * cam + 6])
    }

    /// `(Σ‖r‖², Σ‖t‖²)`.
    pub fn squared_norms(&self) -> (f64, f64) {
        let mut r = 0.0;
        let mut t = 0.0;
        for c in self.params.chunks_exact(6) {
            r += c[..3].iter().map(|v| v * v).sum::<f64>();
            t += c[3..].iter().map(|v| v * v).sum::<f64>();
        }
        (r, t)
    }

    /// Adds the gradient of `λ_r Σ‖r‖² + λ_t Σ‖t‖²`.
    pub fn regularizer_grad(&self, lambda_rot: f64, lambda_trans: f64, grads: &mut [f64]) {
        for (c, g) in self.params.chunks_exact(6).zip(grads.chunks_exact_mut(6)) {
            for k in 0..3 {
                g[k] += 2.0 * lambda_rot * c[k];
                g[k + 3] += 2.0 * lambda_trans * c[k + 3];
            }
        }
    }

    /// Corrected world ray through continuous pixel `(u, v)`.
    pub fn ray(&self, camera: &Camera, cam: usize, u: f64, v: f64) -> PosedRay {
        let r = self.rotation(cam);
        let t = self.translation(cam);
        let exp_r = so3_exp(&r);
        let local = camera.local_direction(u, v);
        let d = camera.rotation * (exp_r * local);
        let o = camera.center + camera.rotation * t;
        PosedRay {
            ray: Ray {
                origin: o,
                direction: d,
                t_near: 0.0,
                t_far: f64::INFINITY,
            },
            cam,
            r,
            exp_r,
            base_rotation: camera.rotation,
            local,
        }
    }
}

/// A corrected ray with what is needed to pull gradients back to `(r, t)`.
#[derive(Debug, Clone, Copy)]
pub struct PosedRay {
    pub ray: Ray,
    pub cam: usize,
    r: Vec3,
    exp_r: Mat3,
    base_rotation: Mat3,
    local: Vec3,
}

impl PosedRay {
    /// Accumulates `∂L/∂(r, t)` from `∂L/∂origin` and `∂L/∂direction`.
    pub fn backward(&self, d_origin: &Vec3, d_dir: &Vec3, grads: &mut [f64]) {
        let g = &mut grads[6 * self.cam..6 * self.cam + 6];
        let dt = self.base_rotation.transpose() * d_origin;
        // d(exp(r)v)/dr = −exp(r)[v]× J_r(r)
        let u = self.exp_r.transpose() * (self.base_rotation.transpose() * d_dir);
        let dr = so3_right_jacobian(&self.r).transpose() * (skew(&self.local) * u);
        for k in 0..3 {
            g[k] += dr[k];
            g[k + 3] += dt[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_correction_is_identity() {
        let cam = Camera::with_fov("c", 32, 32, 60.0).look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::z());
        let p = PoseCorrection::zeros(1);
        let a = p.ray(&cam, 0, 10.5, 7.5).ray;
        let b = cam.ray_at(10.5, 7.5);
        assert!((a.origin - b.origin).norm() < 1e-15);
        assert!((a.direction - b.direction).norm() < 1e-15);
    }

    #[test]
    fn backward_matches_fd() {
        let cam = Camera::with_fov("c", 32, 32, 60.0).look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::z());
        let mut p = PoseCorrection::zeros(2);
        p.params[6..].copy_from_slice(&[0.05, -0.1, 0.2, 0.3, -0.2, 0.1]);
        let go = Vec3::new(0.3, -0.7, 0.2);
        let gd = Vec3::new(-0.4, 0.1, 0.9);
        let loss = |p: &PoseCorrection| {
            let r = p.ray(&cam, 1, 5.0, 20.0).ray;
            go.dot(&r.origin) + gd.dot(&r.direction)
        };
        let mut grads = vec![0.0; 12];
        p.ray(&cam, 1, 5.0, 20.0).backward(&go, &gd, &mut grads);
        assert!(grads[..6].iter().all(|&g| g == 0.0));
        for k in 6..12 {
            let h = 1e-6;
            let mut a = p.clone();
            a.params[k] += h;
            let mut b = p.clone();
            b.params[k] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - grads[k]).abs() < 1e-8, "{k}: {fd} vs {}", grads[k]);
        }
    }

    #[test]
    fn regularizer() {
        let mut p = PoseCorrection::zeros(1);
        p.params[0] = 0.1;
        let (r, t) = p.squared_norms();
        assert!((0.001 * r + 0.01 * t - 1e-5).abs() < 1e-18);
        let mut g = vec![0.0; 6];
        p.regularizer_grad(0.001, 0.01, &mut g);
        assert!((g[0] - 2e-4).abs() < 1e-18);
    }
}
