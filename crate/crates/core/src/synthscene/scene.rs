//! Analytic two-media scene: a water plane at `z = 0` over a height-field
//! seabed with optional land strips and a submerged box.

use serde::{Deserialize, Serialize};

use crate::dataprep::MediumLabel;
use crate::geom::{refract, Aabb, Ray, Vec3, N_AIR, N_WATER};

const MARCH_STEP: f64 = 0.02;
const BISECT_ITERS: usize = 60;

/// Land rising out of the water along the east and west edges. The inland
/// coordinate `u` is zero on the shoreline `|x| = shoreline + a·sin(2πy/P)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandStrips {
    pub shoreline: f64,
    pub wobble_amplitude: f64,
    pub wobble_period: f64,
    /// Horizontal distance over which the land rises to `height`.
    pub ramp: f64,
    pub height: f64,
    /// Horizontal width of the submerged bank between shore and floor.
    pub bank_width: f64,
}

impl Default for LandStrips {
    fn default() -> Self {
        Self {
            shoreline: 6.5,
            wobble_amplitude: 0.4,
            wobble_period: 7.0,
            ramp: 3.5,
            height: 1.0,
            bank_width: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScene {
    /// The scene spans `[−half_extent, half_extent]²` horizontally.
    pub half_extent: f64,
    pub n_water: f64,
    /// Floor depth below the water plane at the origin.
    pub water_depth: f64,
    /// Floor gradient `(∂z/∂x, ∂z/∂y)`.
    pub floor_slope: [f64; 2],
    pub land: Option<LandStrips>,
    /// Submerged box as `[min, max]`.
    pub obstacle: Option<[[f64; 3]; 2]>,
    pub checker_period: f64,
    /// Colour attenuation per unit of water path.
    pub attenuation: f64,
    /// Sub-rays per pixel side.
    pub supersample: u32,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            half_extent: 10.0,
            n_water: N_WATER,
            water_depth: 2.0,
            floor_slope: [0.0, 0.0],
            land: Some(LandStrips::default()),
            obstacle: Some([[-2.5, -1.0, -2.0], [1.5, 3.0, -1.0]]),
            checker_period: 0.5,
            attenuation: 0.1,
            supersample: 2,
        }
    }
}

/// Surface material of a hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Material {
    Land,
    Seabed,
    Obstacle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceHit {
    pub label: MediumLabel,
    pub rgb: [f64; 3],
    /// Surface point, when something was hit.
    pub point: Option<Vec3>,
    /// Air-segment length to the water surface for water hits.
    pub t_interface: Option<f64>,
    /// Length of the refracted segment (0 on land).
    pub water_path: f64,
    /// Depth along the virtual ray: air length plus water length.
    pub optical_depth: f64,
    pub material: Option<Material>,
}

impl TraceHit {
    fn miss() -> Self {
        Self {
            label: MediumLabel::Ignore,
            rgb: [0.0; 3],
            point: None,
            t_interface: None,
            water_path: 0.0,
            optical_depth: 0.0,
            material: None,
        }
    }
}

impl SyntheticScene {
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "flat" => Some(Self {
                land: None,
                obstacle: None,
                ..Self::default()
            }),
            "inclined" => Some(Self {
                floor_slope: [0.0, 0.05],
                obstacle: None,
                ..Self::default()
            }),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 3] = ["default", "flat", "inclined"];

    pub fn water_plane_z(&self) -> f64 {
        0.0
    }

    fn floor(&self, x: f64, y: f64) -> f64 {
        -self.water_depth + self.floor_slope[0] * x + self.floor_slope[1] * y
    }

    /// Signed inland distance; positive on land.
    pub fn inland(&self, x: f64, y: f64) -> Option<f64> {
        let l = self.land?;
        let wobble = |phase: f64| l.wobble_amplitude * (std::f64::consts::TAU * y / l.wobble_period + phase).sin();
        let east = x - (l.shoreline + wobble(0.0));
        let west = -x - (l.shoreline + wobble(1.3));
        Some(east.max(west))
    }

    fn terrain(&self, x: f64, y: f64) -> f64 {
        let floor = self.floor(x, y);
        match (self.land, self.inland(x, y)) {
            (Some(l), Some(u)) if u >= 0.0 => l.height * (u / l.ramp).min(1.0),
            (Some(l), Some(u)) => floor.max(self.water_depth * u / l.bank_width),
            _ => floor,
        }
    }

    pub fn obstacle_box(&self) -> Option<Aabb> {
        self.obstacle.map(|[a, b]| Aabb::new(Vec3::from(a), Vec3::from(b)))
    }

    fn in_footprint(b: &Aabb, x: f64, y: f64) -> bool {
        x >= b.min.x && x <= b.max.x && y >= b.min.y && y <= b.max.y
    }

    /// Surface height `z = b(x, y)` including the obstacle top.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let t = self.terrain(x, y);
        match self.obstacle_box() {
            Some(b) if Self::in_footprint(&b, x, y) => t.max(b.max.z),
            _ => t,
        }
    }

    pub fn in_extent(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.half_extent && y.abs() <= self.half_extent
    }

    fn max_height(&self) -> f64 {
        self.land.map_or(0.0, |l| l.height.max(0.0))
    }

    fn min_height(&self) -> f64 {
        let e = self.half_extent;
        -self.water_depth - (self.floor_slope[0].abs() + self.floor_slope[1].abs()) * e
    }

    /// Signed distance to the surface, positive above it. Planar pieces of
    /// the terrain are exact; the box is handled as a solid.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let h = 1e-5;
        let t = self.terrain(p.x, p.y);
        let gx = (self.terrain(p.x + h, p.y) - self.terrain(p.x - h, p.y)) / (2.0 * h);
        let gy = (self.terrain(p.x, p.y + h) - self.terrain(p.x, p.y - h)) / (2.0 * h);
        let terrain_d = (p.z - t) / (1.0 + gx * gx + gy * gy).sqrt();
        match self.obstacle_box() {
            Some(b) => terrain_d.min(box_sdf(&b, p)),
            None => terrain_d,
        }
    }

    fn material(&self, p: &Vec3) -> Material {
        if let Some(b) = self.obstacle_box() {
            if b.contains(p, 1e-6) && p.z > self.terrain(p.x, p.y) + 1e-6 {
                return Material::Obstacle;
            }
        }
        if p.z >= 0.0 {
            Material::Land
        } else {
            Material::Seabed
        }
    }

    fn normal(&self, p: &Vec3, material: Material) -> Vec3 {
        if material == Material::Obstacle {
            let b = self.obstacle_box().unwrap();
            let faces = [
                (p.x - b.min.x, -Vec3::x()),
                (b.max.x - p.x, Vec3::x()),
                (p.y - b.min.y, -Vec3::y()),
                (b.max.y - p.y, Vec3::y()),
                (b.max.z - p.z, Vec3::z()),
            ];
            return faces.iter().min_by(|a, b| a.0.abs().total_cmp(&b.0.abs())).unwrap().1;
        }
        let h = 1e-4;
        let gx = (self.terrain(p.x + h, p.y) - self.terrain(p.x - h, p.y)) / (2.0 * h);
        let gy = (self.terrain(p.x, p.y + h) - self.terrain(p.x, p.y - h)) / (2.0 * h);
        Vec3::new(-gx, -gy, 1.0).normalize()
    }

    /// Lambertian checkerboard colour at a surface point.
    pub fn shade(&self, p: &Vec3) -> [f64; 3] {
        let material = self.material(p);
        let k = self.checker_period;
        let parity = ((p.x / k).floor() + (p.y / k).floor() + (p.z / k).floor()).rem_euclid(2.0) as usize;
        let albedo = match material {
            Material::Land => [[0.30, 0.50, 0.22], [0.72, 0.68, 0.42]][parity],
            Material::Seabed => [[0.86, 0.78, 0.56], [0.30, 0.26, 0.20]][parity],
            Material::Obstacle => [[0.85, 0.30, 0.20], [0.20, 0.25, 0.65]][parity],
        };
        let light = Vec3::new(0.3, 0.2, 1.0).normalize();
        let lambert = 0.55 + 0.45 * self.normal(p, material).dot(&light).max(0.0);
        albedo.map(|a| a * lambert)
    }

    /// First crossing of `f` from positive to non-positive on `[t0, t1]`.
    fn march(t0: f64, t1: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
        if t1 < t0 {
            return None;
        }
        let mut a = t0;
        if f(a) <= 0.0 {
            return Some(a);
        }
        loop {
            let b = (a + MARCH_STEP).min(t1);
            if f(b) <= 0.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..BISECT_ITERS {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(hi);
            }
            if b >= t1 {
                return None;
            }
            a = b;
        }
    }

    /// Traces one ray from above the water.
    pub fn trace(&self, ray: &Ray) -> TraceHit {
        let o = ray.origin;
        let d = ray.direction;
        if d.z >= 0.0 || o.z <= 0.0 {
            return TraceHit::miss();
        }
        let t_water = -o.z / d.z;
        let top = self.max_height();
        let t_start = ((o.z - top) / -d.z).max(0.0);
        let land_gap = |t: f64| {
            let p = o + d * t;
            let h = self.height(p.x, p.y);
            if h > 0.0 {
                p.z - h
            } else {
                p.z.max(f64::MIN_POSITIVE)
            }
        };
        if self.land.is_some() {
            if let Some(t) = Self::march(t_start, t_water, land_gap) {
                let p = o + d * t;
                if !self.in_extent(p.x, p.y) {
                    return TraceHit::miss();
                }
                return TraceHit {
                    label: MediumLabel::Land,
                    rgb: self.shade(&p),
                    point: Some(p),
                    t_interface: None,
                    water_path: 0.0,
                    optical_depth: t,
                    material: Some(self.material(&p)),
                };
            }
        }
        let p_i = o + d * t_water;
        let normal = Vec3::z();
        let Ok(d_w) = refract(&d, &normal, N_AIR, self.n_water) else {
            return TraceHit::miss();
        };
        let max_tau = (self.min_height() - 1.0) / d_w.z;
        let gap = |tau: f64| {
            let p = p_i + d_w * tau;
            p.z - self.height(p.x, p.y)
        };
        let Some(tau) = Self::march(0.0, max_tau, gap) else {
            return TraceHit::miss();
        };
        let p = p_i + d_w * tau;
        if !self.in_extent(p.x, p.y) {
            return TraceHit::miss();
        }
        let c = self.shade(&p);
        let att = (-self.attenuation * tau).exp();
        TraceHit {
            label: MediumLabel::Water,
            rgb: c.map(|v| v * att),
            point: Some(p),
            t_interface: Some(t_water),
            water_path: tau,
            optical_depth: t_water + tau,
            material: Some(self.material(&p)),
        }
    }

    /// Point on the water plane where the refracted path from `eye` (above
    /// water) to `target` (below water) crosses it.
    pub fn interface_point_towards(&self, eye: &Vec3, target: &Vec3) -> Vec3 {
        let horiz = Vec3::new(target.x - eye.x, target.y - eye.y, 0.0);
        let total = horiz.norm();
        if total < 1e-15 {
            return Vec3::new(eye.x, eye.y, 0.0);
        }
        let dir = horiz / total;
        let (h_air, h_water) = (eye.z, -target.z);
        // Snell residual along the horizontal offset r of the crossing point.
        let residual = |r: f64| {
            let s1 = r / (r * r + h_air * h_air).sqrt();
            let s2 = (total - r) / ((total - r).powi(2) + h_water * h_water).sqrt();
            N_AIR * s1 - self.n_water * s2
        };
        let (mut lo, mut hi) = (0.0, total);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = 0.5 * (lo + hi);
        Vec3::new(eye.x + dir.x * r, eye.y + dir.y * r, 0.0)
    }

    /// Grid samples of the surface at spacing `gsd` over the extent.
    pub fn sample_reference_points(&self, gsd: f64) -> Vec<Vec3> {
        let e = self.half_extent;
        self.sample_reference_points_in(gsd, [-e, -e], [e, e])
    }

    pub fn sample_reference_points_in(&self, gsd: f64, min: [f64; 2], max: [f64; 2]) -> Vec<Vec3> {
        assert!(gsd > 0.0);
        let n = |a: f64, b: f64| ((b - a) / gsd + 1e-9).floor() as usize + 1;
        let (nx, ny) = (n(min[0], max[0]), n(min[1], max[1]));
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = min[0] + i as f64 * gsd;
                let y = min[1] + j as f64 * gsd;
                out.push(Vec3::new(x, y, self.height(x, y)));
            }
        }
        out
    }

    /// Shoreline or water-level control points on `z = 0`.
    pub fn markers(&self) -> Vec<Vec3> {
        let e = self.half_extent;
        match self.land {
            Some(l) => {
                let mut out = Vec::new();
                let n = 19;
                for k in 0..n {
                    let y = -0.9 * e + 1.8 * e * k as f64 / (n - 1) as f64;
                    for (sign, phase) in [(1.0, 0.0), (-1.0, 1.3)] {
                        let w = l.wobble_amplitude * (std::f64::consts::TAU * y / l.wobble_period + phase).sin();
                        out.push(Vec3::new(sign * (l.shoreline + w), y, 0.0));
                    }
                }
                out
            }
            None => {
                let mut out = Vec::new();
                for j in 0..4 {
                    for i in 0..4 {
                        let f = |k: usize| -0.8 * e + 1.6 * e * k as f64 / 3.0;
                        out.push(Vec3::new(f(i), f(j), 0.0));
                    }
                }
                out
            }
        }
    }
}

fn box_sdf(b: &Aabb, p: &Vec3) -> f64 {
    let c = b.center();
    let h = b.extent() * 0.5;
    let q = (p - c).abs() - h;
    let outside = q.sup(&Vec3::zeros()).norm();
    let inside = q.max().min(0.0);
    outside + inside
}

/// Depth of a point at true depth `h` as seen by straight-ray triangulation
/// from incidence angle `theta1`: `h·tanθ2 / tanθ1`, tending to `h / n` at
/// normal incidence.
pub fn analytic_apparent_depth(h: f64, theta1: f64, n_water: f64) -> f64 {
    let s2 = N_AIR * theta1.sin() / n_water;
    if theta1.abs() < 1e-8 {
        return h * N_AIR / n_water;
    }
    let theta2 = s2.asin();
    h * theta2.tan() / theta1.tan()
}
