//! Triangle-mesh reference surfaces with grid-accelerated closest-point queries.

use std::collections::HashMap;

use crate::geom::Vec3;

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    cell: f64,
    grid: HashMap<[i64; 3], Vec<usize>>,
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        let mean_edge = if faces.is_empty() {
            1.0
        } else {
            faces
                .iter()
                .map(|f| (vertices[f[0]] - vertices[f[1]]).norm() + (vertices[f[1]] - vertices[f[2]]).norm())
                .sum::<f64>()
                / (2 * faces.len()) as f64
        };
        let cell = (2.0 * mean_edge).max(1e-9);
        let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (k, f) in faces.iter().enumerate() {
            let mut lo = vertices[f[0]];
            let mut hi = lo;
            for &i in &f[1..] {
                lo = lo.inf(&vertices[i]);
                hi = hi.sup(&vertices[i]);
            }
            let a = Self::key(&lo, cell);
            let b = Self::key(&hi, cell);
            for z in a[2]..=b[2] {
                for y in a[1]..=b[1] {
                    for x in a[0]..=b[0] {
                        grid.entry([x, y, z]).or_default().push(k);
                    }
                }
            }
        }
        Self {
            vertices,
            faces,
            cell,
            grid,
        }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    fn face_normal(&self, k: usize) -> Vec3 {
        let [a, b, c] = self.faces[k].map(|i| self.vertices[i]);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Closest face and point, or `None` for an empty mesh.
    pub fn closest(&self, p: &Vec3) -> Option<(usize, Vec3)> {
        if self.faces.is_empty() {
            return None;
        }
        let k0 = Self::key(p, self.cell);
        let mut best: Option<(f64, usize, Vec3)> = None;
        let (lo, hi) = self.grid.keys().fold(([i64::MAX; 3], [i64::MIN; 3]), |(lo, hi), k| {
            ([lo[0].min(k[0]), lo[1].min(k[1]), lo[2].min(k[2])], [hi[0].max(k[0]), hi[1].max(k[1]), hi[2].max(k[2])])
        });
        let max_ring = (0..3).map(|i| (k0[i] - lo[i]).abs().max((hi[i] - k0[i]).abs())).max().unwrap();
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let Some(list) = self.grid.get(&[k0[0] + dx, k0[1] + dy, k0[2] + dz]) else {
                            continue;
                        };
                        for &f in list {
                            let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
                            let q = closest_point_on_triangle(p, &a, &b, &c);
                            let d = (q - p).norm_squared();
                            if best.is_none_or(|(bd, bf, _)| d < bd || (d == bd && f < bf)) {
                                best = Some((d, f, q));
                            }
                        }
                    }
                }
            }
            if let Some((d, _, _)) = best {
                if d.sqrt() <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best.map(|(_, f, q)| (f, q))
    }

    /// Distance to the mesh, signed by the closest face's normal.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match self.closest(p) {
            Some((f, q)) => {
                let d = (p - q).norm();
                if (p - q).dot(&self.face_normal(f)) < 0.0 {
                    -d
                } else {
                    d
                }
            }
            None => f64::NAN,
        }
    }

    /// Area-proportional stratified samples with roughly `gsd` spacing.
    pub fn sample_surface(&self, gsd: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i]);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            let n = (area / (gsd * gsd)).round().max(1.0) as usize;
            // R2 low-discrepancy sequence folded into the triangle.
            let (g1, g2) = (0.754_877_666_246_692_7, 0.569_840_290_998_053_3);
            for i in 0..n {
                let mut u = (0.5 + g1 * i as f64).fract();
                let mut v = (0.5 + g2 * i as f64).fract();
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                out.push(a + (b - a) * u + (c - a) * v);
            }
        }
        out
    }

    /// Two triangles per grid cell of a height field sampled on `[min, max]²`.
    pub fn from_height_field(f: impl Fn(f64, f64) -> f64, min: [f64; 2], max: [f64; 2], n: usize) -> Self {
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                let x = min[0] + (max[0] - min[0]) * i as f64 / n as f64;
                let y = min[1] + (max[1] - min[1]) * j as f64 / n as f64;
                vertices.push(Vec3::new(x, y, f(x, y)));
            }
        }
        let mut faces = Vec::with_capacity(2 * n * n);
        let id = |i: usize, j: usize| j * (n + 1) + i;
        for j in 0..n {
            for i in 0..n {
                faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(vertices, faces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closest_point_matches_dense_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rv = |rng: &mut ChaCha8Rng| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        for _ in 0..100 {
            let (a, b, c, p) = (rv(&mut rng), rv(&mut rng), rv(&mut rng), rv(&mut rng) * 2.0);
            let q = closest_point_on_triangle(&p, &a, &b, &c);
            let n = 300;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let x = a + (b - a) * (i as f64 / n as f64) + (c - a) * (j as f64 / n as f64);
                    best = best.min((x - p).norm());
                }
            }
            assert!((q - p).norm() <= best + 1e-12);
            assert!((q - p).norm() > best - 2e-2);
        }
    }

    #[test]
    fn plane_mesh_signed_distance() {
        let mesh = TriMesh::from_height_field(|_, _| -2.0, [-5.0, -5.0], [5.0, 5.0], 10);
        assert!((mesh.signed_distance(&Vec3::new(0.3, 0.2, -1.5)) - 0.5).abs() < 1e-12);
        assert!((mesh.signed_distance(&Vec3::new(-4.1, 3.3, -2.25)) + 0.25).abs() < 1e-12);
        assert!((mesh.signed_distance(&Vec3::new(0.0, 0.0, 30.0)) - 32.0).abs() < 1e-12);
        let s = mesh.sample_surface(0.5);
        assert!((s.len() as f64 - 400.0).abs() < 1.0);
        assert!(s.iter().all(|p| p.z == -2.0 && p.x.abs() <= 5.0));
    }
}
