//! Double-precision geometric primitives for two-media ray geometry.
//!
//! Everything here is pure and reentrant. Directions are unit vectors; the
//! water interface is a plane `{x : normal·x = intercept}` whose normal points
//! up (towards the cameras) after scene normalization.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const N_AIR: f64 = 1.0;
pub const N_WATER: f64 = 1.333;

/// Parametric ray `origin + t·direction` restricted to `[t_near, t_far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
            t_near: 0.0,
            t_far: f64::INFINITY,
        }
    }

    pub fn with_bounds(mut self, t_near: f64, t_far: f64) -> Self {
        self.t_near = t_near;
        self.t_far = t_far;
        self
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Planar air/water interface together with the refractive indices of the
/// two media.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaterPlane {
    pub normal: Vec3,
    pub intercept: f64,
    pub n_air: f64,
    pub n_water: f64,
}

impl WaterPlane {
    pub fn new(normal: Vec3, intercept: f64) -> Self {
        Self {
            normal,
            intercept,
            n_air: N_AIR,
            n_water: N_WATER,
        }
    }

    pub fn horizontal(z: f64) -> Self {
        Self::new(Vec3::z(), z)
    }

    /// Signed height of `x` above the plane along its normal.
    #[inline]
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        self.normal.dot(x) - self.intercept
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.iter().zip(max.iter()).all(|(a, b)| a <= b));
        Self { min, max }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3, eps: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - eps && p[i] <= self.max[i] + eps)
    }

    pub fn inflated(&self, eps: f64) -> Self {
        let e = Vec3::repeat(eps);
        Self::new(self.min - e, self.max + e)
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self::new(self.min + offset, self.max + offset)
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }
}

/// `x ↦ rotation·(scale·x) + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3, scale: f64) -> Self {
        Self {
            rotation,
            translation,
            scale,
        }
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * (x * self.scale) + self.translation
    }

    /// Rotates (and does not scale) a direction.
    #[inline]
    pub fn apply_direction(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        Self {
            rotation: rt,
            translation: -(rt * self.translation) * inv_s,
            scale: inv_s,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * (other.translation * self.scale) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Mat3::identity()).abs().max() < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
            && self.scale > 0.0
    }
}

pub fn apply_similarity(t: &SimilarityTransform, x: &Vec3) -> Vec3 {
    t.apply(x)
}

pub fn invert_similarity(t: &SimilarityTransform) -> SimilarityTransform {
    t.inverse()
}

/// Snell refraction of unit direction `d` through a surface with unit
/// `normal`, going from index `n1` into index `n2`.
///
/// The normal is flipped internally so that it opposes the incident ray.
pub fn refract(d: &Vec3, normal: &Vec3, n1: f64, n2: f64) -> Result<Vec3> {
    let (n, cos_i) = facing_normal(d, normal);
    let eta = n1 / n2;
    let k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if k < 0.0 {
        return Err(Error::TotalInternalReflection);
    }
    Ok(d * eta + n * (eta * cos_i - k.sqrt()))
}

/// Jacobian `∂refract/∂d` at `d` (treating `d` as a free 3-vector in the
/// closed-form expression).
pub fn refract_jacobian(d: &Vec3, normal: &Vec3, n1: f64, n2: f64) -> Result<Mat3> {
    let (n, cos_i) = facing_normal(d, normal);
    let eta = n1 / n2;
    let k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if k <= 0.0 {
        return Err(Error::TotalInternalReflection);
    }
    let coef = eta * eta * cos_i / k.sqrt() - eta;
    Ok(Mat3::identity() * eta + n * n.transpose() * coef)
}

#[inline]
fn facing_normal(d: &Vec3, normal: &Vec3) -> (Vec3, f64) {
    let cos_i = -normal.dot(d);
    if cos_i < 0.0 {
        (-normal, -cos_i)
    } else {
        (*normal, cos_i)
    }
}

/// Ray parameter of the plane crossing, if it lies within the ray bounds.
pub fn intersect_ray_plane(ray: &Ray, plane: &WaterPlane) -> Option<f64> {
    let denom = plane.normal.dot(&ray.direction);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (plane.intercept - plane.normal.dot(&ray.origin)) / denom;
    (t >= ray.t_near && t <= ray.t_far).then_some(t)
}

/// Slab test. The interval is clipped to the ray bounds.
pub fn intersect_ray_aabb(ray: &Ray, aabb: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = ray.t_near;
    let mut t1 = ray.t_far;
    for i in 0..3 {
        let o = ray.origin[i];
        let d = ray.direction[i];
        if d.abs() < 1e-300 {
            if o < aabb.min[i] || o > aabb.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut ta = (aabb.min[i] - o) * inv;
        let mut tb = (aabb.max[i] - o) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Position at virtual-ray parameter `t` on the two-segment path: straight
/// before the interface at `t_i`, along `d_water` after it.
#[inline]
pub fn kinked_position(ray: &Ray, t: f64, t_i: f64, d_water: &Vec3) -> Vec3 {
    if t <= t_i {
        ray.at(t)
    } else {
        ray.at(t_i) + d_water * (t - t_i)
    }
}

/// Total-least-squares plane through `points`.
///
/// The normal is the eigenvector of the smallest eigenvalue of the centered
/// covariance, oriented so that its z component is non-negative.
pub fn fit_plane_lsq(points: &[Vec3]) -> Result<WaterPlane> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let q = p - centroid;
        cov += q * q.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if (l1 - l0).abs() <= 1e-12 * l2.max(1.0) {
        return Err(Error::DegenerateGeometry(
            "marker points are collinear".into(),
        ));
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if normal.z < 0.0 {
        normal = -normal;
    }
    Ok(WaterPlane::new(normal, normal.dot(&centroid)))
}

/// Minimal-angle proper rotation taking `normal` onto `+z`.
pub fn rotation_plane_to_z(normal: &Vec3) -> Mat3 {
    let n = normal.normalize();
    let z = Vec3::z();
    let axis = n.cross(&z);
    let s = axis.norm();
    let c = n.dot(&z);
    if s < 1e-12 {
        return if c > 0.0 {
            Mat3::identity()
        } else {
            Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))
        };
    }
    let k = skew(&(axis / s));
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential of an axis-angle vector.
pub fn so3_exp(r: &Vec3) -> Mat3 {
    let theta2 = r.norm_squared();
    let k = skew(r);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Right Jacobian of SO(3): `exp(r + δ) ≈ exp(r)·exp(J_r(r)·δ)`.
pub fn so3_right_jacobian(r: &Vec3) -> Mat3 {
    let theta2 = r.norm_squared();
    let k = skew(r);
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() - k * a + k * k * b
}

/// Angle between two vectors in radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
