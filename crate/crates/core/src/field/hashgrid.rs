//! Multiresolution hash-grid encoding with trilinear interpolation.
//!
//! Level `l` uses a virtual grid of resolution `floor(base · b^l)` over the
//! unit cube. Coarse levels whose vertex count fits in the table are indexed
//! densely; finer levels go through the XOR-of-primes spatial hash.

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub max_resolution: usize,
    pub features_per_level: usize,
    pub table_size_log2: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            base_resolution: 16,
            max_resolution: 256,
            features_per_level: 2,
            table_size_log2: 15,
        }
    }
}

impl HashGridConfig {
    /// Hash-grid size used by the original full-scale configuration.
    pub fn full_scale() -> Self {
        Self {
            levels: 16,
            base_resolution: 16,
            max_resolution: 2048,
            features_per_level: 2,
            table_size_log2: 19,
        }
    }

    /// Per-level growth factor `b`.
    pub fn growth_factor(&self) -> f64 {
        if self.levels <= 1 {
            return 1.0;
        }
        (((self.max_resolution as f64).ln() - (self.base_resolution as f64).ln())
            / (self.levels as f64 - 1.0))
            .exp()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.levels == 0 {
            return Err("hash grid needs at least one level".into());
        }
        if self.max_resolution < self.base_resolution || self.base_resolution == 0 {
            return Err("hash grid max_resolution must be >= base_resolution > 0".into());
        }
        if self.features_per_level == 0 || self.table_size_log2 == 0 || self.table_size_log2 > 26
        {
            return Err("invalid hash table shape".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HashGrid {
    cfg: HashGridConfig,
    resolutions: Vec<u32>,
    dense: Vec<bool>,
    table_size: usize,
}

/// Per-query record needed by the backward pass.
#[derive(Debug, Clone, Default)]
pub struct HashCache {
    /// Parameter index of feature 0 for each (level, corner).
    index: Vec<usize>,
    weight: Vec<f64>,
    frac: Vec<[f64; 3]>,
    /// Axes whose input was clamped to the unit cube carry no gradient.
    clamped: [bool; 3],
}

impl HashGrid {
    pub fn new(cfg: HashGridConfig) -> Self {
        let b = cfg.growth_factor();
        let table_size = 1usize << cfg.table_size_log2;
        let resolutions: Vec<u32> = (0..cfg.levels)
            .map(|l| ((cfg.base_resolution as f64) * b.powi(l as i32) + 1e-9).floor() as u32)
            .collect();
        let dense = resolutions
            .iter()
            .map(|&n| (n as usize + 1).pow(3) <= table_size)
            .collect();
        Self {
            cfg,
            resolutions,
            dense,
            table_size,
        }
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.cfg
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn num_params(&self) -> usize {
        self.cfg.levels * self.table_size * self.cfg.features_per_level
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.levels * self.cfg.features_per_level
    }

    /// Table slot of grid vertex `v` on `level`.
    pub fn slot(&self, level: usize, v: [u32; 3]) -> usize {
        let n = self.resolutions[level] + 1;
        let local = if self.dense[level] {
            (v[0] + n * (v[1] + n * v[2])) as usize
        } else {
            let h = v[0].wrapping_mul(PRIMES[0])
                ^ v[1].wrapping_mul(PRIMES[1])
                ^ v[2].wrapping_mul(PRIMES[2]);
            h as usize & (self.table_size - 1)
        };
        (level * self.table_size + local) * self.cfg.features_per_level
    }

    /// Encodes a point given in unit-cube coordinates (clamped to `[0,1]³`).
    pub fn encode(&self, params: &[f64], unit: &Vec3, out: &mut [f64], cache: &mut HashCache) {
        let f = self.cfg.features_per_level;
        let levels = self.cfg.levels;
        cache.index.clear();
        cache.weight.clear();
        cache.frac.clear();
        let mut u = [0.0; 3];
        for k in 0..3 {
            let c = unit[k].clamp(0.0, 1.0);
            cache.clamped[k] = c != unit[k];
            u[k] = c;
        }
        out[..levels * f].fill(0.0);
        for level in 0..levels {
            let res = self.resolutions[level];
            let mut base = [0u32; 3];
            let mut frac = [0.0; 3];
            for k in 0..3 {
                let p = u[k] * res as f64;
                let i = (p.floor() as u32).min(res - 1);
                base[k] = i;
                frac[k] = p - i as f64;
            }
            cache.frac.push(frac);
            let o = &mut out[level * f..(level + 1) * f];
            for corner in 0..8u32 {
                let mut w = 1.0;
                let mut v = base;
                for k in 0..3 {
                    if corner >> k & 1 == 1 {
                        v[k] += 1;
                        w *= frac[k];
                    } else {
                        w *= 1.0 - frac[k];
                    }
                }
                let idx = self.slot(level, v);
                for j in 0..f {
                    o[j] += w * params[idx + j];
                }
                cache.index.push(idx);
                cache.weight.push(w);
            }
        }
    }

    /// Accumulates table gradients; optionally returns `∂L/∂unit`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &HashCache,
        grad_out: &[f64],
        grads: &mut [f64],
        grad_unit: Option<&mut Vec3>,
    ) {
        let f = self.cfg.features_per_level;
        for level in 0..self.cfg.levels {
            let g = &grad_out[level * f..(level + 1) * f];
            for c in 0..8 {
                let idx = cache.index[level * 8 + c];
                let w = cache.weight[level * 8 + c];
                for j in 0..f {
                    grads[idx + j] += w * g[j];
                }
            }
        }
        let Some(gu) = grad_unit else { return };
        let mut acc = Vec3::zeros();
        for level in 0..self.cfg.levels {
            let g = &grad_out[level * f..(level + 1) * f];
            let frac = cache.frac[level];
            let res = self.resolutions[level] as f64;
            for c in 0..8u32 {
                let idx = cache.index[level * 8 + c as usize];
                let dot: f64 = (0..f).map(|j| params[idx + j] * g[j]).sum();
                if dot == 0.0 {
                    continue;
                }
                for k in 0..3 {
                    // ∂w/∂frac_k: sign from the corner bit, times the other two factors.
                    let mut dw = if c >> k & 1 == 1 { 1.0 } else { -1.0 };
                    for m in 0..3 {
                        if m != k {
                            dw *= if c >> m & 1 == 1 { frac[m] } else { 1.0 - frac[m] };
                        }
                    }
                    acc[k] += dw * dot * res;
                }
            }
        }
        for k in 0..3 {
            if cache.clamped[k] {
                acc[k] = 0.0;
            }
        }
        *gu += acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_and_params(seed: u64) -> (HashGrid, Vec<f64>) {
        let grid = HashGrid::new(HashGridConfig {
            levels: 4,
            base_resolution: 4,
            max_resolution: 32,
            features_per_level: 2,
            table_size_log2: 10,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..grid.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (grid, params)
    }

    #[test]
    fn resolutions_grow_geometrically() {
        let g = HashGrid::new(HashGridConfig::full_scale());
        assert_eq!(g.resolutions()[0], 16);
        assert_eq!(*g.resolutions().last().unwrap(), 2048);
        let b = HashGridConfig::full_scale().growth_factor();
        assert!((b - (128f64.ln() / 15.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn vertex_query_returns_stored_feature() {
        let (grid, params) = grid_and_params(1);
        let mut out = vec![0.0; grid.output_dim()];
        let mut cache = HashCache::default();
        // (0.25, 0.5, 0.75) is a vertex on every level since all resolutions are multiples of 4.
        let u = Vec3::new(0.25, 0.5, 0.75);
        grid.encode(&params, &u, &mut out, &mut cache);
        for (level, &res) in grid.resolutions().iter().enumerate() {
            let v = [
                (0.25 * res as f64) as u32,
                (0.5 * res as f64) as u32,
                (0.75 * res as f64) as u32,
            ];
            let idx = grid.slot(level, v);
            assert!((out[level * 2] - params[idx]).abs() < 1e-12);
            assert!((out[level * 2 + 1] - params[idx + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_center_is_mean_of_corners() {
        let (grid, params) = grid_and_params(2);
        let mut out = vec![0.0; grid.output_dim()];
        let mut cache = HashCache::default();
        let res = grid.resolutions()[0] as f64;
        let u = Vec3::new(1.5 / res, 2.5 / res, 0.5 / res);
        grid.encode(&params, &u, &mut out, &mut cache);
        let mut mean = [0.0; 2];
        for c in 0..8u32 {
            let v = [1 + (c & 1), 2 + (c >> 1 & 1), c >> 2 & 1];
            let idx = grid.slot(0, v);
            mean[0] += params[idx] / 8.0;
            mean[1] += params[idx + 1] / 8.0;
        }
        assert!((out[0] - mean[0]).abs() < 1e-12);
        assert!((out[1] - mean[1]).abs() < 1e-12);
    }

    #[test]
    fn perturbing_a_corner_is_linear_in_its_weight() {
        let (grid, mut params) = grid_and_params(3);
        let mut out0 = vec![0.0; grid.output_dim()];
        let mut out1 = vec![0.0; grid.output_dim()];
        let mut cache = HashCache::default();
        let res = grid.resolutions()[0] as f64;
        let (fx, fy, fz) = (0.2, 0.7, 0.4);
        let u = Vec3::new((1.0 + fx) / res, (1.0 + fy) / res, (1.0 + fz) / res);
        grid.encode(&params, &u, &mut out0, &mut cache);
        let idx = grid.slot(0, [2, 1, 2]); // corner bits (1,0,1)
        let delta = 0.37;
        params[idx] += delta;
        grid.encode(&params, &u, &mut out1, &mut cache);
        let weight = fx * (1.0 - fy) * fz;
        assert!((out1[0] - out0[0] - delta * weight).abs() < 1e-12);
    }

    #[test]
    fn unit_gradient_matches_finite_differences() {
        let (grid, params) = grid_and_params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cache = HashCache::default();
        let dim = grid.output_dim();
        let mut out = vec![0.0; dim];
        for _ in 0..20 {
            let u = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            grid.encode(&params, &u, &mut out, &mut cache);
            let mut gu = Vec3::zeros();
            let mut sink = vec![0.0; params.len()];
            grid.backward(&params, &cache, &g, &mut sink, Some(&mut gu));
            let h = 1e-7;
            for k in 0..3 {
                let mut up = u;
                let mut um = u;
                up[k] += h;
                um[k] -= h;
                let mut c = HashCache::default();
                let mut op = vec![0.0; dim];
                let mut om = vec![0.0; dim];
                grid.encode(&params, &up, &mut op, &mut c);
                grid.encode(&params, &um, &mut om, &mut c);
                let fd: f64 = (0..dim).map(|j| (op[j] - om[j]) * g[j]).sum::<f64>() / (2.0 * h);
                assert!(
                    (fd - gu[k]).abs() <= 1e-4 * (1.0 + fd.abs()),
                    "axis {k}: fd {fd} analytic {}",
                    gu[k]
                );
            }
        }
    }

    #[test]
    fn encoding_is_lipschitz() {
        let (grid, params) = grid_and_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut c = HashCache::default();
        let dim = grid.output_dim();
        let (mut a, mut b) = (vec![0.0; dim], vec![0.0; dim]);
        // bound: max table magnitude (1) × max resolution × sqrt(3) per level
        let lip = 32.0 * 3f64.sqrt() * (dim as f64).sqrt() * 2.0;
        for _ in 0..500 {
            let u = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let dir = Vec3::new(rng.gen(), rng.gen(), rng.gen()).normalize();
            let eps = 1e-5;
            grid.encode(&params, &u, &mut a, &mut c);
            grid.encode(&params, &(u + dir * eps), &mut b, &mut c);
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(diff <= lip * eps);
        }
    }
}
