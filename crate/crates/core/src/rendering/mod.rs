//! Volume rendering on virtual rays, losses and pose correction, with the
//! per-ray reverse pass used by training.

mod composite;
mod loss;
mod pose;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use composite::{composite, output_weight_grads, transmittance, weights_backward, RenderOutputs, EPS};
pub use loss::{distortion_loss, interlevel_loss, proposal_bound, rgb_loss, total_loss, LossParts, LossWeights};
pub use pose::{PoseCorrection, PosedRay};

use crate::dataprep::{Camera, Image, MediumLabel, MediumMask};
use crate::error::{Error, Result};
use crate::field::{DensityCache, DensityField, DensityFieldConfig, FieldCache, FieldConfig, RadianceField, Workspace};
use crate::geom::{refract_jacobian, Aabb, Mat3, Vec3, WaterPlane};
use crate::sampling::{
    build_virtual_ray, collide, hierarchical_sample, midpoints, weights_from_density, LevelRecord, ProposalConfig,
    VirtualRaySpec,
};

/// Model configurations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Single medium: masks ignored, no refraction, medium flag always 0.
    BaselineSingleMedium,
    TwoMediaRefractionOn,
    /// Water rays are gated and flagged but keep their air direction.
    TwoMediaRefractionOff,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::BaselineSingleMedium,
        Variant::TwoMediaRefractionOn,
        Variant::TwoMediaRefractionOff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::BaselineSingleMedium => "baseline-single-medium",
            Self::TwoMediaRefractionOn => "two-media-refraction-on",
            Self::TwoMediaRefractionOff => "two-media-refraction-off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn mask_gating(self) -> bool {
        self != Self::BaselineSingleMedium
    }

    pub fn refraction(self) -> bool {
        self == Self::TwoMediaRefractionOn
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub field: FieldConfig,
    pub proposal_fields: Vec<DensityFieldConfig>,
    pub sampling: ProposalConfig,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            field: FieldConfig::default(),
            proposal_fields: vec![
                DensityFieldConfig::default(),
                DensityFieldConfig {
                    grid: crate::field::HashGridConfig {
                        max_resolution: 128,
                        ..DensityFieldConfig::default().grid
                    },
                    ..DensityFieldConfig::default()
                },
            ],
            sampling: ProposalConfig::default(),
            variant: Variant::TwoMediaRefractionOn,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.proposal_fields.len() != self.sampling.proposal_samples.len() {
            return bad(format!(
                "{} proposal fields but {} proposal sample counts",
                self.proposal_fields.len(),
                self.sampling.proposal_samples.len()
            ));
        }
        if self.sampling.proposal_samples.iter().any(|&n| n == 0) || self.sampling.nerf_samples == 0 {
            return bad("sample counts must be positive".into());
        }
        self.field.grid.validate().map_err(Error::InvalidArgument)?;
        for p in &self.proposal_fields {
            p.grid.validate().map_err(Error::InvalidArgument)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub field: RadianceField,
    pub proposals: Vec<DensityField>,
    pub poses: PoseCorrection,
    pub plane: WaterPlane,
    pub aabb: Aabb,
}

/// Sample placement for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub spec: VirtualRaySpec,
    pub proposal_edges: Vec<Vec<f64>>,
    pub edges: Vec<f64>,
}

pub enum Sampling<'a> {
    /// Jittered proposal sampling (training).
    Random { rng: &'a mut ChaCha8Rng, anneal: f64 },
    /// Deterministic midpoint quantiles (evaluation).
    Fixed { anneal: f64 },
    /// Reuse a previous placement.
    Frozen(&'a RaySamples),
}

/// Per-ray inputs of the photometric objective.
#[derive(Debug, Clone, Copy)]
pub struct RayTarget {
    pub rgb: [f64; 3],
    /// Multiplier of this ray's loss terms (1 / rays in the batch).
    pub scale: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RayEval {
    pub outputs: RenderOutputs,
    pub samples: Option<RaySamples>,
    /// `‖C − Ĉ‖²`.
    pub rgb_error: f64,
    pub distortion: f64,
    pub interlevel: f64,
}

/// Gradient buffers matching a model's parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub field: Vec<f64>,
    pub proposals: Vec<Vec<f64>>,
    pub pose: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            field: vec![0.0; model.field.params.len()],
            proposals: model.proposals.iter().map(|p| vec![0.0; p.params.len()]).collect(),
            pose: vec![0.0; model.poses.params.len()],
        }
    }

    pub fn zero(&mut self) {
        self.field.fill(0.0);
        for p in &mut self.proposals {
            p.fill(0.0);
        }
        self.pose.fill(0.0);
    }

    pub fn add(&mut self, other: &Self) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.field, &other.field);
        for (a, b) in self.proposals.iter_mut().zip(&other.proposals) {
            add(a, b);
        }
        add(&mut self.pose, &other.pose);
    }
}

/// What the reverse pass should produce.
#[derive(Debug, Clone, Copy)]
pub struct GradOptions {
    pub field: bool,
    pub proposals: bool,
    pub pose: bool,
}

/// Reusable per-thread buffers.
#[derive(Debug, Default)]
pub struct RayWorkspace {
    field_caches: Vec<FieldCache>,
    prop_caches: Vec<Vec<DensityCache>>,
    levels: Vec<LevelRecord>,
    fws: Workspace,
    sigma: Vec<f64>,
    colors: Vec<[f64; 3]>,
    deltas: Vec<f64>,
    ts: Vec<f64>,
    grad_w: Vec<f64>,
    grad_sigma: Vec<f64>,
    aux: Vec<f64>,
    s_norm: Vec<f64>,
}

/// One rendered view.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub rgb: Image,
    pub depth: Vec<f32>,
    pub accumulation: Vec<f32>,
}

impl Model {
    pub fn new(config: ModelConfig, aabb: Aabb, plane: WaterPlane, n_cameras: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let field = RadianceField::new(config.field, aabb, seed);
        let proposals = config
            .proposal_fields
            .iter()
            .enumerate()
            .map(|(i, c)| DensityField::new(*c, aabb, seed.wrapping_add(1 + i as u64)))
            .collect();
        Ok(Self {
            field,
            proposals,
            poses: PoseCorrection::zeros(n_cameras),
            plane,
            aabb,
            config,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Virtual ray for a corrected camera ray, or `None` if it misses the box.
    pub fn virtual_ray(&self, posed: &PosedRay, label: MediumLabel) -> Option<VirtualRaySpec> {
        let ray = collide(&posed.ray, &self.aabb, self.config.sampling.near)?;
        let variant = self.variant();
        let label = if variant.mask_gating() { label } else { MediumLabel::Land };
        Some(build_virtual_ray(&ray, &self.plane, label, &self.aabb, variant.refraction()))
    }

    fn place_samples(&self, spec: &VirtualRaySpec, sampling: Sampling<'_>, record: bool, ws: &mut RayWorkspace) -> RaySamples {
        let n_levels = self.proposals.len();
        ws.prop_caches.resize_with(n_levels, Vec::new);
        let proposals = &self.proposals;
        let caches = &mut ws.prop_caches;
        let mut density = |level: usize, xs: &[Vec3], out: &mut Vec<f64>| {
            out.clear();
            let field = &proposals[level];
            if record {
                let c = &mut caches[level];
                c.resize_with(xs.len(), DensityCache::default);
                out.extend(xs.iter().zip(c.iter_mut()).map(|(x, cache)| field.query(x, cache)));
            } else {
                let mut cache = DensityCache::default();
                out.extend(xs.iter().map(|x| field.query(x, &mut cache)));
            }
        };
        match sampling {
            Sampling::Random { rng, anneal } => {
                let edges = hierarchical_sample(spec, &self.config.sampling, anneal, Some(rng), &mut density, &mut ws.levels);
                RaySamples {
                    spec: *spec,
                    proposal_edges: ws.levels.iter().map(|l| l.edges.clone()).collect(),
                    edges,
                }
            }
            Sampling::Fixed { anneal } => {
                let edges = hierarchical_sample::<ChaCha8Rng>(spec, &self.config.sampling, anneal, None, &mut density, &mut ws.levels);
                RaySamples {
                    spec: *spec,
                    proposal_edges: ws.levels.iter().map(|l| l.edges.clone()).collect(),
                    edges,
                }
            }
            Sampling::Frozen(frozen) => {
                ws.levels.resize_with(n_levels, LevelRecord::default);
                let mut xs = Vec::new();
                for (level, rec) in ws.levels.iter_mut().enumerate() {
                    rec.edges.clone_from(&frozen.proposal_edges[level]);
                    xs.clear();
                    xs.extend(midpoints(&rec.edges).iter().map(|&t| frozen.spec.position(t)));
                    density(level, &xs, &mut rec.sigma);
                    weights_from_density(&rec.sigma, &rec.edges, &mut rec.weights);
                }
                frozen.clone()
            }
        }
    }

    /// Renders one pixel ray and, when `grads` is given, accumulates the
    /// gradient of `scale · (‖C − Ĉ‖² + λ_dist L_dist + λ_inter L_inter)`.
    ///
    /// Final-sample weights enter the interlevel term as constants, so that
    /// term only reaches the proposal fields. Sample positions are held fixed
    /// with respect to pose corrections except through the ray geometry.
    #[allow(clippy::too_many_arguments)]
    pub fn trace(
        &self,
        posed: &PosedRay,
        label: MediumLabel,
        target: Option<&RayTarget>,
        sampling: Sampling<'_>,
        weights: &LossWeights,
        grads: Option<(&mut Gradients, GradOptions)>,
        keep_samples: bool,
        ws: &mut RayWorkspace,
    ) -> RayEval {
        let Some(spec) = self.virtual_ray(posed, label) else {
            let rgb_error = target.map_or(0.0, |t| t.rgb.iter().map(|v| v * v).sum());
            return RayEval {
                rgb_error,
                ..Default::default()
            };
        };
        let want = grads.as_ref().map(|(_, o)| *o);
        let record_props = want.is_some_and(|o| o.proposals);
        let samples = self.place_samples(&spec, sampling, record_props, ws);

        // Final field queries.
        let n = samples.edges.len() - 1;
        ws.field_caches.resize_with(n, FieldCache::default);
        ws.sigma.clear();
        ws.colors.clear();
        ws.deltas.clear();
        ws.ts.clear();
        let image = Some(posed.cam);
        for i in 0..n {
            let (a, b) = (samples.edges[i], samples.edges[i + 1]);
            let t = 0.5 * (a + b);
            let x = spec.position(t);
            let d = spec.direction(t);
            let m = if spec.in_water(t) { 1.0 } else { 0.0 };
            let (s, c) = self.field.query(&x, &d, m, image, &mut ws.field_caches[i]);
            ws.sigma.push(s);
            ws.colors.push(c);
            ws.deltas.push(b - a);
            ws.ts.push(t);
        }
        let outputs = composite(&ws.sigma, &ws.deltas, &ws.colors, &ws.ts);

        // Loss terms.
        // Normalisation bounds come from the placement so frozen samples keep
        // the same `s` under small pose changes.
        let (t0, t1) = (samples.spec.t_near(), samples.spec.t_far());
        ws.s_norm.clear();
        ws.s_norm.extend(samples.edges.iter().map(|&t| (t - t0) / (t1 - t0)));
        let want_dist_grad = want.is_some();
        let distortion = distortion_loss(&outputs.weights, &ws.s_norm, want_dist_grad.then_some(&mut ws.aux));
        let mut interlevel = 0.0;
        for rec in &ws.levels {
            interlevel += interlevel_loss(&samples.edges, &outputs.weights, &rec.edges, &rec.weights, None);
        }
        let rgb_error = target.map_or(0.0, |t| (0..3).map(|c| (outputs.rgb[c] - t.rgb[c]).powi(2)).sum());

        if let (Some((g, opts)), Some(target)) = (grads, target) {
            let scale = target.scale;
            if opts.field || opts.pose {
                let d_rgb = [
                    scale * 2.0 * (outputs.rgb[0] - target.rgb[0]),
                    scale * 2.0 * (outputs.rgb[1] - target.rgb[1]),
                    scale * 2.0 * (outputs.rgb[2] - target.rgb[2]),
                ];
                output_weight_grads(&outputs, &ws.colors, &ws.ts, d_rgb, 0.0, 0.0, &mut ws.grad_w);
                for (gw, gd) in ws.grad_w.iter_mut().zip(&ws.aux) {
                    *gw += scale * weights.distortion * gd;
                }
                weights_backward(&ws.sigma, &ws.deltas, &outputs.weights, &ws.grad_w, &mut ws.grad_sigma);
                let mut d_origin = Vec3::zeros();
                let mut d_dir = Vec3::zeros();
                let geo = opts.pose.then(|| RayGeometry::new(&spec, &self.plane, self.variant().refraction()));
                for i in 0..n {
                    let w = outputs.weights[i];
                    let d_c = [w * d_rgb[0], w * d_rgb[1], w * d_rgb[2]];
                    let (dx, dd) = self.field.backward(
                        &ws.field_caches[i],
                        ws.grad_sigma[i],
                        d_c,
                        &mut g.field,
                        &mut ws.fws,
                        opts.pose,
                    );
                    if let Some(geo) = &geo {
                        geo.accumulate(&spec, ws.ts[i], &dx, &dd, &mut d_origin, &mut d_dir);
                    }
                }
                if opts.pose {
                    posed.backward(&d_origin, &d_dir, &mut g.pose);
                }
            }
            if opts.proposals {
                let mut d_w = Vec::new();
                let mut d_s = Vec::new();
                for (level, rec) in ws.levels.iter().enumerate() {
                    interlevel_loss(&samples.edges, &outputs.weights, &rec.edges, &rec.weights, Some(&mut d_w));
                    for v in &mut d_w {
                        *v *= scale * weights.interlevel;
                    }
                    let deltas: Vec<f64> = rec.edges.windows(2).map(|w| w[1] - w[0]).collect();
                    weights_backward(&rec.sigma, &deltas, &rec.weights, &d_w, &mut d_s);
                    let field = &self.proposals[level];
                    for (cache, ds) in ws.prop_caches[level].iter().zip(&d_s) {
                        field.backward(cache, *ds, &mut g.proposals[level], &mut ws.fws);
                    }
                }
            }
        }

        RayEval {
            outputs,
            samples: keep_samples.then_some(samples),
            rgb_error,
            distortion,
            interlevel,
        }
    }

    /// Deterministic render of one pixel for evaluation and export.
    pub fn render_pixel(&self, camera: &Camera, cam: usize, col: u32, row: u32, label: MediumLabel, ws: &mut RayWorkspace) -> (RenderOutputs, Option<VirtualRaySpec>) {
        let posed = self.poses.ray(camera, cam, col as f64 + 0.5, row as f64 + 0.5);
        let eval = self.trace(&posed, label, None, Sampling::Fixed { anneal: 1.0 }, &LossWeights::default(), None, true, ws);
        (eval.outputs, eval.samples.map(|s| s.spec))
    }

    /// Renders a full view; pixels labelled IGNORE are rendered as well.
    pub fn render_view(&self, camera: &Camera, cam: usize, mask: Option<&MediumMask>) -> RenderedView {
        let (w, h) = (camera.width, camera.height);
        let rows: Vec<Vec<RenderOutputs>> = (0..h)
            .into_par_iter()
            .map_init(RayWorkspace::default, |ws, row| {
                (0..w)
                    .map(|col| {
                        let label = mask.map_or(MediumLabel::Water, |m| m.get(col, row));
                        self.render_pixel(camera, cam, col, row, label, ws).0
                    })
                    .collect()
            })
            .collect();
        let mut rgb = Image::new(w, h);
        let mut depth = Vec::with_capacity((w * h) as usize);
        let mut accumulation = Vec::with_capacity((w * h) as usize);
        for (row, outs) in rows.iter().enumerate() {
            for (col, o) in outs.iter().enumerate() {
                rgb.set(col as u32, row as u32, o.rgb);
                depth.push(o.depth as f32);
                accumulation.push(o.accumulation as f32);
            }
        }
        RenderedView { rgb, depth, accumulation }
    }
}

/// Jacobians of sample position and direction with respect to the ray
/// origin and direction.
struct RayGeometry {
    normal: Vec3,
    n_dot_d: f64,
    j_w: Mat3,
}

impl RayGeometry {
    fn new(spec: &VirtualRaySpec, plane: &WaterPlane, refraction: bool) -> Self {
        let j_w = if spec.refracts && refraction {
            refract_jacobian(&spec.ray.direction, &plane.normal, plane.n_air, plane.n_water).unwrap_or_else(|_| Mat3::identity())
        } else {
            Mat3::identity()
        };
        Self {
            normal: plane.normal,
            n_dot_d: plane.normal.dot(&spec.ray.direction),
            j_w,
        }
    }

    fn accumulate(&self, spec: &VirtualRaySpec, t: f64, dx: &Vec3, dd: &Vec3, d_origin: &mut Vec3, d_dir: &mut Vec3) {
        if !spec.in_water(t) {
            *d_origin += dx;
            *d_dir += dx * t + dd;
            return;
        }
        // x = o + t_I d + d_w (t − t_I), t_I = (h − n·o)/(n·d)
        let d = spec.ray.direction;
        let dti_do = self.normal * (-1.0 / self.n_dot_d);
        let dti_dd = self.normal * (-spec.t_i / self.n_dot_d);
        let k = (d - spec.d_w).dot(dx);
        *d_origin += dx + dti_do * k;
        *d_dir += dx * spec.t_i + dti_dd * k + self.j_w.transpose() * (dx * (t - spec.t_i) + dd);
    }
}

/// Per-ray RNG derived from `(seed, step, ray)`.
pub fn ray_rng(seed: u64, step: u64, ray: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng.set_word_pos(u128::from(ray) << 8);
    rng
}
