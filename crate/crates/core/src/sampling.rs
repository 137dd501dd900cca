//! Virtual-ray construction and proposal-guided sampling.
//!
//! A refracting ray is parameterized by a single straight "virtual" parameter
//! `t` covering the air segment and the refracted water segment back to back.
//! Samplers only see `t`; positions are mapped onto the kinked path on demand.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::MediumLabel;
use crate::geom::{intersect_ray_aabb, intersect_ray_plane, kinked_position, refract, Aabb, Ray, Vec3, WaterPlane};

pub const DEFAULT_NEAR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualRaySpec {
    pub ray: Ray,
    pub refracts: bool,
    pub t_i: f64,
    pub p_i: Vec3,
    pub d_w: Vec3,
    pub t_far_virtual: f64,
}

impl VirtualRaySpec {
    /// A plain single-medium ray.
    pub fn straight(ray: Ray) -> Self {
        Self {
            ray,
            refracts: false,
            t_i: f64::INFINITY,
            p_i: Vec3::repeat(f64::NAN),
            d_w: ray.direction,
            t_far_virtual: ray.t_far,
        }
    }

    pub fn t_near(&self) -> f64 {
        self.ray.t_near
    }

    pub fn t_far(&self) -> f64 {
        self.t_far_virtual
    }

    #[inline]
    pub fn in_water(&self, t: f64) -> bool {
        self.refracts && t > self.t_i
    }

    #[inline]
    pub fn position(&self, t: f64) -> Vec3 {
        if self.refracts {
            kinked_position(&self.ray, t, self.t_i, &self.d_w)
        } else {
            self.ray.at(t)
        }
    }

    #[inline]
    pub fn direction(&self, t: f64) -> Vec3 {
        if self.in_water(t) {
            self.d_w
        } else {
            self.ray.direction
        }
    }
}

/// Clips a ray to the scene box, starting no earlier than `near`.
pub fn collide(ray: &Ray, aabb: &Aabb, near: f64) -> Option<Ray> {
    let r = ray.with_bounds(near, f64::INFINITY);
    let (t0, t1) = intersect_ray_aabb(&r, aabb)?;
    (t1 > t0).then(|| ray.with_bounds(t0, t1))
}

/// Decides whether the ray bends at the interface and builds its virtual
/// parameterization. With `refraction_enabled = false` water rays keep their
/// air direction but are still flagged as refracting.
pub fn build_virtual_ray(
    ray: &Ray,
    plane: &WaterPlane,
    label: MediumLabel,
    aabb: &Aabb,
    refraction_enabled: bool,
) -> VirtualRaySpec {
    if label != MediumLabel::Water {
        return VirtualRaySpec::straight(*ray);
    }
    let t_i = match intersect_ray_plane(ray, plane) {
        Some(t) if t > ray.t_near && t < ray.t_far => t,
        _ => return VirtualRaySpec::straight(*ray),
    };
    let p_i = ray.at(t_i);
    let d_w = if refraction_enabled {
        match refract(&ray.direction, &plane.normal, plane.n_air, plane.n_water) {
            Ok(d) => d,
            Err(_) => return VirtualRaySpec::straight(*ray),
        }
    } else {
        ray.direction
    };
    let water = Ray {
        origin: p_i,
        direction: d_w,
        t_near: 0.0,
        t_far: f64::INFINITY,
    };
    let exit = intersect_ray_aabb(&water, aabb).map_or(0.0, |(_, t1)| t1);
    if exit <= 0.0 {
        return VirtualRaySpec::straight(*ray);
    }
    VirtualRaySpec {
        ray: *ray,
        refracts: true,
        t_i,
        p_i,
        d_w,
        t_far_virtual: t_i + exit,
    }
}

/// Evaluates `density` at the kinked positions of `ts`.
pub fn kinked_density(ts: &[f64], spec: &VirtualRaySpec, mut density: impl FnMut(&Vec3) -> f64) -> Vec<f64> {
    ts.iter().map(|&t| density(&spec.position(t))).collect()
}

/// `n + 1` bin edges over `[t0, t1]`. With an RNG, interior edges are
/// jittered between neighbouring bin centers.
pub fn uniform_edges<R: Rng>(t0: f64, t1: f64, n: usize, rng: Option<&mut R>) -> Vec<f64> {
    let step = (t1 - t0) / n as f64;
    let mut edges: Vec<f64> = (0..=n).map(|i| t0 + step * i as f64).collect();
    if let Some(rng) = rng {
        for e in edges.iter_mut().take(n).skip(1) {
            *e += step * (rng.gen::<f64>() - 0.5);
        }
    }
    edges
}

/// `n` stratified samples over `[t0, t1]`: stratum midpoints, or a uniform
/// draw within each stratum when an RNG is given.
pub fn sample_uniform<R: Rng>(t0: f64, t1: f64, n: usize, rng: Option<&mut R>) -> Vec<f64> {
    let step = (t1 - t0) / n as f64;
    match rng {
        Some(rng) => (0..n).map(|i| t0 + step * (i as f64 + rng.gen::<f64>())).collect(),
        None => (0..n).map(|i| t0 + step * (i as f64 + 0.5)).collect(),
    }
}

/// Inverse-transform sampling of the piecewise-constant density given by
/// `weights` over `edges`. Quantiles are `(i + 0.5)/n`, or `(i + U)/n` with an
/// RNG. All-zero weights fall back to a uniform density.
pub fn sample_pdf<R: Rng>(edges: &[f64], weights: &[f64], n: usize, rng: Option<&mut R>) -> Vec<f64> {
    assert_eq!(edges.len(), weights.len() + 1);
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let m = weights.len();
    let mut cdf = Vec::with_capacity(m + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += if total > 0.0 { w.max(0.0) / total } else { 1.0 / m as f64 };
        cdf.push(acc);
    }
    cdf[m] = 1.0;
    let quantiles: Vec<f64> = match rng {
        Some(rng) => (0..n).map(|i| (i as f64 + rng.gen::<f64>()) / n as f64).collect(),
        None => (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect(),
    };
    let mut out = Vec::with_capacity(n);
    let mut bin = 0;
    for u in quantiles {
        while bin + 1 < m && cdf[bin + 1] <= u {
            bin += 1;
        }
        // Skip zero-mass bins so the sample lands inside a supported bin.
        while bin + 1 < m && cdf[bin + 1] - cdf[bin] <= 0.0 {
            bin += 1;
        }
        let mass = cdf[bin + 1] - cdf[bin];
        let frac = if mass > 0.0 { ((u - cdf[bin]) / mass).clamp(0.0, 1.0) } else { 0.5 };
        out.push(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
    }
    out
}

/// Volume-rendering weights `w_i = T_i (1 − exp(−σ_i Δ_i))`.
pub fn weights_from_density(sigma: &[f64], edges: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let mut log_t = 0.0f64;
    for (i, s) in sigma.iter().enumerate() {
        let tau = s * (edges[i + 1] - edges[i]);
        out.push((-log_t).exp() * -(-tau).exp_m1());
        log_t += tau;
    }
}

pub fn midpoints(edges: &[f64]) -> Vec<f64> {
    edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    /// Samples per proposal iteration.
    pub proposal_samples: Vec<usize>,
    pub nerf_samples: usize,
    pub warmup: usize,
    pub update_every: usize,
    pub anneal_max_iters: usize,
    /// Uniform probability mass mixed into each resampling histogram.
    pub histogram_padding: f64,
    pub near: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            proposal_samples: vec![64, 32],
            nerf_samples: 32,
            warmup: 5000,
            update_every: 5,
            anneal_max_iters: 1000,
            histogram_padding: 0.05,
            near: DEFAULT_NEAR,
        }
    }
}

impl ProposalConfig {
    pub fn full_scale() -> Self {
        Self {
            proposal_samples: vec![256, 96],
            nerf_samples: 48,
            ..Self::default()
        }
    }

    /// Exponent applied to proposal weights before resampling; rises from 0
    /// to 1 over `anneal_max_iters` steps.
    pub fn anneal(&self, step: usize) -> f64 {
        if self.anneal_max_iters == 0 {
            return 1.0;
        }
        let x = (step as f64 / self.anneal_max_iters as f64).clamp(0.0, 1.0);
        let b = 10.0;
        b * x / ((b - 1.0) * x + 1.0)
    }

    /// Steps between proposal updates at `step`: ramps from 1 to
    /// `update_every` over the warmup.
    pub fn update_interval(&self, step: usize) -> usize {
        if self.warmup == 0 {
            return self.update_every.max(1);
        }
        let f = (step as f64 / self.warmup as f64).min(1.0) * self.update_every as f64;
        (f as usize).clamp(1, self.update_every.max(1))
    }
}

/// Histogram of one proposal iteration, kept for the interlevel loss.
#[derive(Debug, Clone, Default)]
pub struct LevelRecord {
    pub edges: Vec<f64>,
    pub sigma: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Runs the proposal cascade on `spec` and returns the final bin edges.
///
/// `density(level, positions, out)` writes the proposal density of `level`
/// at each kinked position.
pub fn hierarchical_sample<R: Rng>(
    spec: &VirtualRaySpec,
    cfg: &ProposalConfig,
    anneal: f64,
    mut rng: Option<&mut R>,
    density: &mut impl FnMut(usize, &[Vec3], &mut Vec<f64>),
    levels: &mut Vec<LevelRecord>,
) -> Vec<f64> {
    let (t0, t1) = (spec.t_near(), spec.t_far());
    levels.resize_with(cfg.proposal_samples.len(), LevelRecord::default);
    let mut edges = uniform_edges(t0, t1, cfg.proposal_samples[0], rng.as_deref_mut());
    let mut positions = Vec::new();
    let mut hist = Vec::new();
    for (level, record) in levels.iter_mut().enumerate() {
        positions.clear();
        positions.extend(midpoints(&edges).iter().map(|&t| spec.position(t)));
        density(level, &positions, &mut record.sigma);
        weights_from_density(&record.sigma, &edges, &mut record.weights);
        record.edges.clone_from(&edges);

        let n_next = cfg
            .proposal_samples
            .get(level + 1)
            .copied()
            .unwrap_or(cfg.nerf_samples);
        hist.clear();
        hist.extend(record.weights.iter().map(|w| if anneal == 0.0 { 1.0 } else { w.max(0.0).powf(anneal) }));
        // Uniform-in-t padding keeps every part of the ray reachable.
        let pad = cfg.histogram_padding * hist.iter().sum::<f64>().max(1e-5);
        for (h, w) in hist.iter_mut().zip(edges.windows(2)) {
            *h += pad * (w[1] - w[0]) / (t1 - t0);
        }
        edges = resample_edges(&edges, &hist, n_next, t0, t1, rng.as_deref_mut());
    }
    edges
}

/// Draws `n + 1` edges from the histogram and pins the outer ones to the ray bounds.
fn resample_edges<R: Rng>(edges: &[f64], hist: &[f64], n: usize, t0: f64, t1: f64, rng: Option<&mut R>) -> Vec<f64> {
    let mut out = sample_pdf(edges, hist, n + 1, rng);
    out[0] = t0;
    out[n] = t1;
    for i in 1..=n {
        if out[i] < out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    enforce_strict(&mut out);
    out
}

/// Nudges coincident edges apart so every interval has positive width.
fn enforce_strict(edges: &mut [f64]) {
    let n = edges.len();
    let span = edges[n - 1] - edges[0];
    let min_gap = span * 1e-9;
    for i in 1..n {
        if edges[i] - edges[i - 1] < min_gap {
            edges[i] = edges[i - 1] + min_gap;
        }
    }
    let overflow = edges[n - 1] - (edges[0] + span);
    if overflow > 0.0 {
        // Walk back from the end to restore the far bound.
        edges[n - 1] -= overflow;
        for i in (1..n - 1).rev() {
            if edges[i] > edges[i + 1] - min_gap {
                edges[i] = edges[i + 1] - min_gap;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    fn unit_box() -> Aabb {
        Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0))
    }

    fn nadir_ray() -> Ray {
        Ray::new(Vec3::new(0.0, 0.0, 1.0), -Vec3::z()).with_bounds(0.0, 2.0)
    }

    fn diag_ray() -> Ray {
        let d = Vec3::new(1.0, 0.0, -1.0).normalize();
        let r = Ray::new(Vec3::new(-0.5, 0.0, 0.5), d);
        collide(&r, &unit_box(), 0.0).unwrap()
    }

    #[test]
    fn land_pixel_is_straight() {
        let s = build_virtual_ray(&nadir_ray(), &WaterPlane::horizontal(0.0), MediumLabel::Land, &unit_box(), true);
        assert!(!s.refracts);
        assert_eq!(s.t_far_virtual, 2.0);
        let s = build_virtual_ray(&nadir_ray(), &WaterPlane::horizontal(0.0), MediumLabel::Ignore, &unit_box(), true);
        assert!(!s.refracts);
    }

    #[test]
    fn nadir_water_ray() {
        let s = build_virtual_ray(&nadir_ray(), &WaterPlane::horizontal(0.0), MediumLabel::Water, &unit_box(), true);
        assert!(s.refracts);
        assert!((s.t_i - 1.0).abs() < 1e-15);
        assert!((s.d_w - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!((s.t_far_virtual - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ablation_keeps_air_direction() {
        let r = diag_ray();
        let s = build_virtual_ray(&r, &WaterPlane::horizontal(0.0), MediumLabel::Water, &unit_box(), false);
        assert!(s.refracts);
        assert_eq!(s.d_w, r.direction);
        assert!((s.t_far_virtual - r.t_far).abs() < 1e-12);
        let on = build_virtual_ray(&r, &WaterPlane::horizontal(0.0), MediumLabel::Water, &unit_box(), true);
        // The refracted path is steeper and reaches the box floor sooner.
        assert!(on.t_far_virtual < s.t_far_virtual);
        assert!(on.t_i < on.t_far_virtual && on.t_near() < on.t_i);
    }

    #[test]
    fn miss_of_plane_is_straight() {
        let r = Ray::new(Vec3::new(0.0, 0.0, 0.5), Vec3::x()).with_bounds(0.0, 0.5);
        let s = build_virtual_ray(&r, &WaterPlane::horizontal(0.0), MediumLabel::Water, &unit_box(), true);
        assert!(!s.refracts);
    }

    #[test]
    fn kinked_density_cases() {
        let plane = WaterPlane::horizontal(0.0);
        let r = diag_ray();
        let straight = VirtualRaySpec::straight(r);
        let ts = sample_uniform::<NoRng>(r.t_near, r.t_far, 50, None);
        let f = |x: &Vec3| (x.x * 3.0).sin() + x.z * x.z;
        let a = kinked_density(&ts, &straight, f);
        let b: Vec<f64> = ts.iter().map(|&t| f(&r.at(t))).collect();
        assert_eq!(a, b);

        let spec = build_virtual_ray(&r, &plane, MediumLabel::Water, &unit_box(), true);
        let c = kinked_density(&ts, &spec, |_| 3.5);
        assert!(c.iter().all(|&v| v == 3.5));

        // Gaussian bump at p_I + 0.5·d_w: the peak is found at t_I + 0.5.
        let target = spec.p_i + spec.d_w * 0.5;
        let bump = |x: &Vec3| (-(x - target).norm_squared() / (2.0 * 0.01f64.powi(2))).exp();
        let ts: Vec<f64> = (0..20001).map(|i| spec.t_near() + (spec.t_far() - spec.t_near()) * i as f64 / 20000.0).collect();
        let vals = kinked_density(&ts, &spec, bump);
        let (imax, _) = vals.iter().enumerate().fold((0, -1.0), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
        assert!((ts[imax] - (spec.t_i + 0.5)).abs() < 2e-4);
        let straight_hit = r.at(spec.t_i + 0.5);
        assert!(bump(&straight_hit) < 1e-6);
    }

    #[test]
    fn uniform_midpoints() {
        let s = sample_uniform::<NoRng>(0.0, 1.0, 4, None);
        assert_eq!(s, vec![0.125, 0.375, 0.625, 0.875]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let j = sample_uniform(0.0, 1.0, 4, Some(&mut rng));
        for (i, v) in j.iter().enumerate() {
            assert!(*v >= i as f64 / 4.0 && *v < (i + 1) as f64 / 4.0);
        }
        let e = uniform_edges(0.0, 1.0, 8, Some(&mut rng));
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert_eq!((e[0], e[8]), (0.0, 1.0));
    }

    #[test]
    fn pdf_sampling_cases() {
        let eq = sample_pdf::<NoRng>(&[0.0, 0.25, 0.5, 0.75, 1.0], &[1.0; 4], 4, None);
        for (a, b) in eq.iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((a - b).abs() < 1e-15);
        }
        let edges: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mut w = vec![0.0; 10];
        w[4] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_pdf(&edges, &w, 64, Some(&mut rng));
        assert!(s.iter().all(|&t| (0.4..=0.5).contains(&t)));
        let s = sample_pdf::<NoRng>(&[0.0, 0.5, 1.0], &[1.0, 3.0], 4, None);
        let expect = [0.25, 0.5 + 1.0 / 12.0, 0.75, 0.75 + 1.0 / 6.0];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let z = sample_pdf::<NoRng>(&[0.0, 0.5, 1.0], &[0.0, 0.0], 4, None);
        assert_eq!(z, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(s.windows(2).all(|w| w[1] >= w[0]));
    }

    fn run_hier(spec: &VirtualRaySpec, density: impl Fn(&Vec3) -> f64, seed: Option<u64>) -> (Vec<f64>, Vec<LevelRecord>) {
        let cfg = ProposalConfig::default();
        let mut levels = Vec::new();
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let mut f = |_: usize, xs: &[Vec3], out: &mut Vec<f64>| {
            out.clear();
            out.extend(xs.iter().map(&density));
        };
        let e = hierarchical_sample(spec, &cfg, 1.0, rng.as_mut(), &mut f, &mut levels);
        (e, levels)
    }

    #[test]
    fn empty_scene_gives_near_uniform_samples() {
        let spec = build_virtual_ray(&diag_ray(), &WaterPlane::horizontal(0.0), MediumLabel::Water, &unit_box(), true);
        let (e, _) = run_hier(&spec, |_| 1e-6, None);
        let n = e.len() - 1;
        let span = spec.t_far() - spec.t_near();
        for w in e.windows(2) {
            let width = w[1] - w[0];
            assert!(width > 0.2 * span / n as f64 && width < 2.0 * span / n as f64);
        }
    }

    #[test]
    fn opaque_slab_in_water_attracts_final_samples() {
        let plane = WaterPlane::horizontal(0.0);
        let spec = build_virtual_ray(&diag_ray(), &plane, MediumLabel::Water, &unit_box(), true);
        // Slab −0.6 < z < −0.4 under water.
        let slab = |x: &Vec3| if x.z < -0.4 && x.z > -0.6 { 400.0 } else { 0.0 };
        let (e, levels) = run_hier(&spec, slab, Some(4));
        let dz = spec.d_w.z;
        let (ta, tb) = (spec.t_i + (-0.4) / dz, spec.t_i + (-0.6) / dz);
        let mids = midpoints(&e);
        let inside = mids.iter().filter(|&&t| t >= ta && t <= tb).count();
        assert!(inside as f64 >= 0.8 * mids.len() as f64, "{inside} of {}", mids.len());
        assert_eq!(levels.len(), 2);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert_eq!((e[0], *e.last().unwrap()), (spec.t_near(), spec.t_far()));
    }

    #[test]
    fn straight_ray_matches_single_medium_sampling() {
        let r = diag_ray();
        let straight = VirtualRaySpec::straight(r);
        let land = build_virtual_ray(&r, &WaterPlane::horizontal(0.0), MediumLabel::Land, &unit_box(), true);
        let f = |x: &Vec3| 5.0 * (x.x + 1.0);
        assert_eq!(run_hier(&straight, f, Some(5)).0, run_hier(&land, f, Some(5)).0);
    }

    #[test]
    fn medium_flags_are_monotone_and_positions_in_box() {
        let spec = build_virtual_ray(&diag_ray(), &WaterPlane::horizontal(0.0), MediumLabel::Water, &unit_box(), true);
        let (e, _) = run_hier(&spec, |x| if x.z < -0.5 { 50.0 } else { 0.1 }, Some(6));
        let mids = midpoints(&e);
        let flags: Vec<bool> = mids.iter().map(|&t| spec.in_water(t)).collect();
        assert!(flags.windows(2).all(|w| w[0] <= w[1]));
        assert!(flags.iter().any(|&f| f) && flags.iter().any(|&f| !f));
        for &t in &mids {
            assert!(unit_box().contains(&spec.position(t), 1e-9));
        }
    }

    #[test]
    fn anneal_and_interval_schedules() {
        let cfg = ProposalConfig::default();
        assert_eq!(cfg.anneal(0), 0.0);
        assert_eq!(cfg.anneal(1000), 1.0);
        assert_eq!(cfg.anneal(5000), 1.0);
        assert!((cfg.anneal(100) - 1.0 / 1.9).abs() < 1e-12);
        assert_eq!(cfg.update_interval(0), 1);
        assert_eq!(cfg.update_interval(2500), 2);
        assert_eq!(cfg.update_interval(10_000), 5);
    }

    #[test]
    fn weights_follow_transmittance() {
        let mut w = Vec::new();
        let ln2 = 2f64.ln();
        weights_from_density(&[ln2, ln2], &[0.0, 1.0, 2.0], &mut w);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
    }
}
