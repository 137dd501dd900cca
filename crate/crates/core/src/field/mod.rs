//! Hash-grid radiance field with a shared density head and a medium-aware
//! color head, plus the density-only fields used by the proposal sampler.
//!
//! Parameters live in one flat `Vec<f64>` per field; gradients are written to
//! caller-owned buffers of the same length so that parallel workers can keep
//! private accumulators.

pub mod hashgrid;
pub mod mlp;
pub mod sh;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, Vec3};
pub use hashgrid::{HashCache, HashGrid, HashGridConfig};
pub use mlp::Mlp;

pub const GEO_FEAT_DIM: usize = 15;
const HASH_INIT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub density_hidden: usize,
    pub color_hidden: usize,
    pub color_layers: usize,
    pub appearance_dim: usize,
    pub num_images: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            density_hidden: 32,
            color_hidden: 32,
            color_layers: 2,
            appearance_dim: 0,
            num_images: 0,
        }
    }
}

impl FieldConfig {
    pub fn full_scale() -> Self {
        Self {
            grid: HashGridConfig::full_scale(),
            density_hidden: 64,
            color_hidden: 64,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityFieldConfig {
    pub grid: HashGridConfig,
    pub hidden: usize,
}

impl Default for DensityFieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig {
                levels: 4,
                base_resolution: 16,
                max_resolution: 64,
                features_per_level: 2,
                table_size_log2: 15,
            },
            hidden: 16,
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn to_unit(aabb: &Aabb, x: &Vec3) -> Vec3 {
    (x - aabb.min).component_div(&aabb.extent())
}

/// Scratch buffers reused across backward calls.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    mlp: Vec<f64>,
    enc_grad: Vec<f64>,
    in_grad: Vec<f64>,
}

/// Forward record of one radiance-field query.
#[derive(Debug, Default, Clone)]
pub struct FieldCache {
    hash: HashCache,
    density_acts: Vec<f64>,
    color_acts: Vec<f64>,
    density_out: usize,
    color_out: usize,
    raw_sigma: f64,
    rgb: [f64; 3],
    dir: Vec3,
    image: Option<usize>,
}

/// Forward record of one proposal-field query.
#[derive(Debug, Default, Clone)]
pub struct DensityCache {
    hash: HashCache,
    acts: Vec<f64>,
    out: usize,
    raw: f64,
}

#[derive(Debug, Clone)]
pub struct RadianceField {
    cfg: FieldConfig,
    aabb: Aabb,
    grid: HashGrid,
    density: Mlp,
    color: Mlp,
    pub params: Vec<f64>,
}

impl RadianceField {
    pub fn new(cfg: FieldConfig, aabb: Aabb, seed: u64) -> Self {
        let grid = HashGrid::new(cfg.grid);
        let density = Mlp::new(vec![grid.output_dim(), cfg.density_hidden, 1 + GEO_FEAT_DIM]);
        let color_in = GEO_FEAT_DIM + sh::SH_DIM + 1 + cfg.appearance_dim;
        let mut dims = vec![color_in];
        dims.extend(std::iter::repeat(cfg.color_hidden).take(cfg.color_layers));
        dims.push(3);
        let color = Mlp::new(dims);
        let mut field = Self {
            cfg,
            aabb,
            grid,
            density,
            color,
            params: Vec::new(),
        };
        field.params = vec![0.0; field.num_params()];
        field.init(seed);
        field
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn num_params(&self) -> usize {
        self.grid.num_params()
            + self.density.num_params()
            + self.color.num_params()
            + self.cfg.appearance_dim * self.cfg.num_images
    }

    /// Named parameter groups in storage order.
    pub fn groups(&self) -> Vec<(&'static str, Range<usize>)> {
        let a = self.grid.num_params();
        let b = a + self.density.num_params();
        let c = b + self.color.num_params();
        let d = c + self.cfg.appearance_dim * self.cfg.num_images;
        vec![
            ("hash_grid", 0..a),
            ("density_mlp", a..b),
            ("color_mlp", b..c),
            ("appearance", c..d),
        ]
    }

    fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.groups();
        for p in &mut self.params[g[0].1.clone()] {
            *p = rng.gen_range(-HASH_INIT..HASH_INIT);
        }
        self.density.init(&mut self.params[g[1].1.clone()], &mut rng);
        self.color.init(&mut self.params[g[2].1.clone()], &mut rng);
        for p in &mut self.params[g[3].1.clone()] {
            *p = rng.gen_range(-HASH_INIT..HASH_INIT);
        }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let g = self.groups();
        (
            &self.params[g[0].1.clone()],
            &self.params[g[1].1.clone()],
            &self.params[g[2].1.clone()],
            &self.params[g[3].1.clone()],
        )
    }

    fn density_pass(&self, x: &Vec3, cache: &mut FieldCache) {
        let (hash, dens, _, _) = self.split();
        let enc_dim = self.grid.output_dim();
        cache.density_acts.resize(self.density.activation_len(), 0.0);
        let unit = to_unit(&self.aabb, x);
        self.grid
            .encode(hash, &unit, &mut cache.density_acts[..enc_dim], &mut cache.hash);
        cache.density_out = self.density.forward(dens, &mut cache.density_acts);
        cache.raw_sigma = cache.density_acts[cache.density_out];
    }

    /// Density and geometry feature at `x`.
    pub fn density_forward(&self, x: &Vec3) -> (f64, Vec<f64>) {
        let mut cache = FieldCache::default();
        self.density_pass(x, &mut cache);
        let o = cache.density_out;
        (
            softplus(cache.raw_sigma),
            cache.density_acts[o + 1..o + 1 + GEO_FEAT_DIM].to_vec(),
        )
    }

    /// Color from a geometry feature, viewing direction and medium flag.
    pub fn color_forward(&self, h: &[f64], d: &Vec3, m: f64, image: Option<usize>) -> [f64; 3] {
        let mut cache = FieldCache::default();
        self.color_pass(h, d, m, image, &mut cache);
        cache.rgb
    }

    fn color_pass(&self, h: &[f64], d: &Vec3, m: f64, image: Option<usize>, cache: &mut FieldCache) {
        let (_, _, col, app) = self.split();
        cache.color_acts.resize(self.color.activation_len(), 0.0);
        let acts = &mut cache.color_acts;
        acts[..GEO_FEAT_DIM].copy_from_slice(h);
        sh::encode(d, &mut acts[GEO_FEAT_DIM..GEO_FEAT_DIM + sh::SH_DIM]);
        let mut k = GEO_FEAT_DIM + sh::SH_DIM;
        acts[k] = m;
        k += 1;
        let adim = self.cfg.appearance_dim;
        if adim > 0 {
            match image.filter(|&i| i < self.cfg.num_images) {
                Some(i) => acts[k..k + adim].copy_from_slice(&app[i * adim..(i + 1) * adim]),
                None => {
                    // Unseen views use the mean embedding.
                    acts[k..k + adim].fill(0.0);
                    let n = self.cfg.num_images.max(1) as f64;
                    for i in 0..self.cfg.num_images {
                        for j in 0..adim {
                            acts[k + j] += app[i * adim + j] / n;
                        }
                    }
                }
            }
        }
        cache.color_out = self.color.forward(col, acts);
        let o = cache.color_out;
        for c in 0..3 {
            cache.rgb[c] = sigmoid(acts[o + c]);
        }
        cache.dir = *d;
        cache.image = image;
    }

    /// Full query; the cache allows a later [`RadianceField::backward`].
    pub fn query(
        &self,
        x: &Vec3,
        d: &Vec3,
        m: f64,
        image: Option<usize>,
        cache: &mut FieldCache,
    ) -> (f64, [f64; 3]) {
        self.density_pass(x, cache);
        let o = cache.density_out;
        let h: [f64; GEO_FEAT_DIM] = cache.density_acts[o + 1..o + 1 + GEO_FEAT_DIM]
            .try_into()
            .unwrap();
        self.color_pass(&h, d, m, image, cache);
        (softplus(cache.raw_sigma), cache.rgb)
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂σ` and `∂L/∂rgb`.
    /// Returns `(∂L/∂x, ∂L/∂d)`; they are only computed when `want_inputs`.
    pub fn backward(
        &self,
        cache: &FieldCache,
        d_sigma: f64,
        d_rgb: [f64; 3],
        grads: &mut [f64],
        ws: &mut Workspace,
        want_inputs: bool,
    ) -> (Vec3, Vec3) {
        let g = self.groups();
        let (hash_p, dens_p, col_p, _) = self.split();
        let (g_hash, rest) = grads.split_at_mut(g[1].1.start);
        let (g_dens, rest) = rest.split_at_mut(g[2].1.start - g[1].1.start);
        let (g_col, g_app) = rest.split_at_mut(g[3].1.start - g[2].1.start);

        let mut grad_d = Vec3::zeros();
        // Color head.
        let mut d_logits = [0.0; 3];
        for c in 0..3 {
            let s = cache.rgb[c];
            d_logits[c] = d_rgb[c] * s * (1.0 - s);
        }
        let color_in = self.color.input_dim();
        ws.in_grad.resize(color_in, 0.0);
        let has_color = d_logits.iter().any(|&v| v != 0.0);
        if has_color {
            self.color.backward(
                col_p,
                &cache.color_acts,
                &d_logits,
                g_col,
                &mut ws.mlp,
                Some(&mut ws.in_grad),
            );
            if want_inputs {
                grad_d = sh::backward(
                    &cache.dir,
                    &ws.in_grad[GEO_FEAT_DIM..GEO_FEAT_DIM + sh::SH_DIM],
                );
            }
            let adim = self.cfg.appearance_dim;
            if adim > 0 {
                let k = GEO_FEAT_DIM + sh::SH_DIM + 1;
                match cache.image.filter(|&i| i < self.cfg.num_images) {
                    Some(i) => {
                        for j in 0..adim {
                            g_app[i * adim + j] += ws.in_grad[k + j];
                        }
                    }
                    None => {
                        let n = self.cfg.num_images.max(1) as f64;
                        for i in 0..self.cfg.num_images {
                            for j in 0..adim {
                                g_app[i * adim + j] += ws.in_grad[k + j] / n;
                            }
                        }
                    }
                }
            }
        } else {
            ws.in_grad.fill(0.0);
        }

        // Density head: output 0 is raw σ, outputs 1.. are h.
        let mut d_out = [0.0; 1 + GEO_FEAT_DIM];
        d_out[0] = d_sigma * sigmoid(cache.raw_sigma);
        d_out[1..].copy_from_slice(&ws.in_grad[..GEO_FEAT_DIM]);
        let mut grad_x = Vec3::zeros();
        if d_out.iter().all(|&v| v == 0.0) {
            return (grad_x, grad_d);
        }
        let enc_dim = self.grid.output_dim();
        ws.enc_grad.resize(enc_dim, 0.0);
        self.density.backward(
            dens_p,
            &cache.density_acts,
            &d_out,
            g_dens,
            &mut ws.mlp,
            Some(&mut ws.enc_grad),
        );
        let mut gu = Vec3::zeros();
        self.grid.backward(
            hash_p,
            &cache.hash,
            &ws.enc_grad,
            g_hash,
            want_inputs.then_some(&mut gu),
        );
        if want_inputs {
            grad_x = gu.component_div(&self.aabb.extent());
        }
        (grad_x, grad_d)
    }
}

/// Small density-only field used by the proposal sampler.
#[derive(Debug, Clone)]
pub struct DensityField {
    cfg: DensityFieldConfig,
    aabb: Aabb,
    grid: HashGrid,
    mlp: Mlp,
    pub params: Vec<f64>,
}

impl DensityField {
    pub fn new(cfg: DensityFieldConfig, aabb: Aabb, seed: u64) -> Self {
        let grid = HashGrid::new(cfg.grid);
        let mlp = Mlp::new(vec![grid.output_dim(), cfg.hidden, 1]);
        let n = grid.num_params() + mlp.num_params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; n];
        let split = grid.num_params();
        for p in &mut params[..split] {
            *p = rng.gen_range(-HASH_INIT..HASH_INIT);
        }
        mlp.init(&mut params[split..], &mut rng);
        Self {
            cfg,
            aabb,
            grid,
            mlp,
            params,
        }
    }

    pub fn config(&self) -> &DensityFieldConfig {
        &self.cfg
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn groups(&self) -> Vec<(&'static str, Range<usize>)> {
        let a = self.grid.num_params();
        vec![("hash_grid", 0..a), ("mlp", a..self.params.len())]
    }

    pub fn query(&self, x: &Vec3, cache: &mut DensityCache) -> f64 {
        let enc_dim = self.grid.output_dim();
        let split = self.grid.num_params();
        cache.acts.resize(self.mlp.activation_len(), 0.0);
        let unit = to_unit(&self.aabb, x);
        self.grid.encode(
            &self.params[..split],
            &unit,
            &mut cache.acts[..enc_dim],
            &mut cache.hash,
        );
        cache.out = self.mlp.forward(&self.params[split..], &mut cache.acts);
        cache.raw = cache.acts[cache.out];
        softplus(cache.raw)
    }

    pub fn density(&self, x: &Vec3) -> f64 {
        self.query(x, &mut DensityCache::default())
    }

    pub fn backward(&self, cache: &DensityCache, d_sigma: f64, grads: &mut [f64], ws: &mut Workspace) {
        if d_sigma == 0.0 {
            return;
        }
        let split = self.grid.num_params();
        let (g_hash, g_mlp) = grads.split_at_mut(split);
        ws.enc_grad.resize(self.grid.output_dim(), 0.0);
        self.mlp.backward(
            &self.params[split..],
            &cache.acts,
            &[d_sigma * sigmoid(cache.raw)],
            g_mlp,
            &mut ws.mlp,
            Some(&mut ws.enc_grad),
        );
        self.grid
            .backward(&self.params[..split], &cache.hash, &ws.enc_grad, g_hash, None);
    }
}
