//! Pinhole cameras in the OpenCV convention (x right, y down, z forward).

use crate::error::{Error, Result};
use crate::geom::{Mat3, Ray, SimilarityTransform, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation.
    pub rotation: Mat3,
    /// Camera center in world coordinates.
    pub center: Vec3,
}

impl Camera {
    /// Camera with a symmetric principal point and a given horizontal field of view.
    pub fn with_fov(id: impl Into<String>, width: u32, height: u32, hfov_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self {
            id: id.into(),
            width,
            height,
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            rotation: Mat3::identity(),
            center: Vec3::zeros(),
        }
    }

    /// Places the camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(mut self, eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // Looking along `up`: any perpendicular works.
            x = z.cross(&Vec3::y());
        }
        let x = x.normalize();
        let y = z.cross(&x);
        self.rotation = Mat3::from_columns(&[x, y, z]);
        self.center = eye;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("camera {}: {m}", self.id)));
        if self.width == 0 || self.height == 0 {
            return bad("empty image size");
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return bad("principal point outside the image");
        }
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Mat3::identity()).abs().max() > 1e-6 || self.rotation.determinant() < 0.0 {
            return bad("pose rotation is not orthonormal");
        }
        Ok(())
    }

    /// Unit direction in camera coordinates through continuous pixel position `(u, v)`.
    #[inline]
    pub fn local_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }

    /// World ray through the center of pixel `(col, row)`.
    pub fn pixel_ray(&self, col: u32, row: u32) -> Ray {
        self.ray_at(col as f64 + 0.5, row as f64 + 0.5)
    }

    pub fn ray_at(&self, u: f64, v: f64) -> Ray {
        Ray::new(self.center, self.rotation * self.local_direction(u, v))
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Maps the camera through a similarity; intrinsics are unchanged.
    pub fn transformed(&self, t: &SimilarityTransform) -> Self {
        Self {
            rotation: t.rotation * self.rotation,
            center: t.apply(&self.center),
            ..self.clone()
        }
    }

    /// Elevation of the optical axis below the horizon in degrees (90 = nadir),
    /// for a frame whose +z points up.
    pub fn depression_deg(&self) -> f64 {
        (-self.forward().z).clamp(-1.0, 1.0).asin().to_degrees()
    }

    /// 4×4 camera-to-world matrix, row-major.
    pub fn pose_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let c = &self.center;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], c.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], c.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], c.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn set_pose_matrix(&mut self, m: &[[f64; 4]; 4]) {
        self.rotation = Mat3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        self.center = Vec3::new(m[0][3], m[1][3], m[2][3]);
    }
}
