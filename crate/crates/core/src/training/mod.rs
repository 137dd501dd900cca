//! Optimisation loop: Adam, exponential learning-rate decay, the proposal
//! update schedule, metrics and checkpoints.

mod adam;
mod checkpoint;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::dataprep::{Dataset, MediumLabel};
use crate::error::{Error, IoContext, Result};
use crate::rendering::{
    ray_rng, total_loss, GradOptions, Gradients, LossParts, LossWeights, Model, ModelConfig, RayTarget, RayWorkspace,
    Sampling,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub rays_per_batch: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    /// Initial pose-correction learning rate; decays with the same ratio.
    pub pose_lr: f64,
    pub optimize_poses: bool,
    pub seed: u64,
    /// Work units per batch; gradients are reduced in shard order, so results
    /// do not depend on the thread count.
    pub shards: usize,
    /// Steps between validation renders (0 disables them).
    pub eval_interval: usize,
    pub loss: LossWeights,
    pub adam: AdamConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            rays_per_batch: 1024,
            lr_init: 1e-2,
            lr_final: 1e-4,
            pose_lr: 1e-3,
            optimize_poses: true,
            seed: 0,
            shards: 4,
            eval_interval: 0,
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Original full-scale schedule and network sizes.
    pub fn full_scale() -> Self {
        let mut model = ModelConfig {
            field: crate::field::FieldConfig::full_scale(),
            sampling: crate::sampling::ProposalConfig::full_scale(),
            ..ModelConfig::default()
        };
        model.proposal_fields[1].grid.max_resolution = 256;
        Self {
            max_iterations: 100_000,
            rays_per_batch: 4096,
            model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Schema(m.to_string()));
        if self.rays_per_batch == 0 {
            return bad("rays_per_batch must be positive");
        }
        if !(self.lr_init > 0.0 && self.lr_final > 0.0 && self.lr_final <= self.lr_init) {
            return bad("learning rates must satisfy 0 < lr_final <= lr_init");
        }
        if self.shards == 0 {
            return bad("shards must be positive");
        }
        self.model.validate().map_err(|e| Error::Schema(e.to_string()))
    }

    /// Reads a TOML or JSON file (by extension) over the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_path(path)?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `lr_init · (lr_final / lr_init)^(step / max)`.
pub fn lr_schedule(step: usize, max: usize, lr_init: f64, lr_final: f64) -> f64 {
    if max == 0 {
        return lr_init;
    }
    let x = (step as f64 / max as f64).clamp(0.0, 1.0);
    lr_init * (lr_final / lr_init).powf(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub rgb: f64,
    pub distortion: f64,
    pub interlevel: f64,
    pub psnr: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Model,
    pub metrics: Vec<StepMetrics>,
}

/// PSNR of a mean squared error summed over three channels.
fn psnr_from_rgb_loss(l: f64) -> f64 {
    let mse = l / 3.0;
    if mse <= 0.0 {
        99.0
    } else {
        (-10.0 * mse.log10()).min(99.0)
    }
}

/// Builds the model a training run starts from.
pub fn init_model(dataset: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.field.num_images = if model_cfg.field.appearance_dim > 0 { dataset.len() } else { 0 };
    Model::new(
        model_cfg,
        dataset.bundle.scene_box,
        dataset.bundle.water_plane,
        dataset.len(),
        cfg.seed,
    )
}

/// Valid (non-IGNORE) pixels of the training views as `(camera, col, row)`.
pub fn training_pixels(dataset: &Dataset) -> Vec<(u32, u32, u32)> {
    let mut out = Vec::new();
    for &cam in &dataset.bundle.split.train {
        let mask = &dataset.masks[cam];
        for row in 0..mask.height {
            for col in 0..mask.width {
                if mask.get(col, row) != MediumLabel::Ignore {
                    out.push((cam as u32, col, row));
                }
            }
        }
    }
    out
}

fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut s = String::from("step,loss,rgb,distortion,interlevel,psnr,lr\n");
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.step, m.loss, m.rgb, m.distortion, m.interlevel, m.psnr, m.lr
        );
    }
    s
}

struct Shard {
    grads: Gradients,
    ws: RayWorkspace,
    rgb: f64,
    distortion: f64,
    interlevel: f64,
}

/// Trains from scratch. With `out`, writes `config.json`, `metrics.csv` and
/// `checkpoint.bin` there.
pub fn fit(dataset: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<FitOutcome> {
    let model = init_model(dataset, cfg)?;
    fit_model(model, dataset, cfg, out)
}

pub fn fit_model(mut model: Model, dataset: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<FitOutcome> {
    cfg.validate()?;
    if model.poses.len() != dataset.len() {
        return Err(Error::InvalidArgument("model and dataset camera counts differ".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_path(dir)?;
        let p = dir.join(CONFIG_FILE);
        fs::write(&p, serde_json::to_string_pretty(cfg)?).with_path(&p)?;
    }
    let pixels = training_pixels(dataset);
    if pixels.is_empty() && cfg.max_iterations > 0 {
        return Err(Error::InvalidArgument("no valid training pixels".into()));
    }
    let cameras = &dataset.bundle.cameras;

    let mut field_opt = Adam::new(model.field.params.len(), cfg.adam);
    let mut prop_opts: Vec<Adam> = model.proposals.iter().map(|p| Adam::new(p.params.len(), cfg.adam)).collect();
    let mut pose_opt = Adam::new(model.poses.params.len(), cfg.adam);
    let mut shards: Vec<Shard> = (0..cfg.shards)
        .map(|_| Shard {
            grads: Gradients::zeros_like(&model),
            ws: RayWorkspace::default(),
            rgb: 0.0,
            distortion: 0.0,
            interlevel: 0.0,
        })
        .collect();
    let mut total = Gradients::zeros_like(&model);
    let mut metrics = Vec::with_capacity(cfg.max_iterations);
    let n = cfg.rays_per_batch;
    let per_shard = n.div_ceil(cfg.shards);

    for step in 0..cfg.max_iterations {
        let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        batch_rng.set_stream(step as u64);
        let batch: Vec<(u32, u32, u32)> = (0..n).map(|_| pixels[batch_rng.gen_range(0..pixels.len())]).collect();

        let anneal = model.config.sampling.anneal(step);
        let update_props = step % model.config.sampling.update_interval(step) == 0;
        let opts = GradOptions {
            field: true,
            proposals: update_props,
            pose: cfg.optimize_poses,
        };
        let scale = 1.0 / n as f64;
        let model_ref = &model;
        shards.par_iter_mut().enumerate().for_each(|(s, shard)| {
            shard.grads.zero();
            shard.rgb = 0.0;
            shard.distortion = 0.0;
            shard.interlevel = 0.0;
            let lo = (s * per_shard).min(n);
            let hi = ((s + 1) * per_shard).min(n);
            for (k, &(cam, col, row)) in batch[lo..hi].iter().enumerate() {
                let ray_idx = (lo + k) as u64;
                let cam = cam as usize;
                let gt = dataset.images[cam].get(col, row);
                let label = dataset.masks[cam].get(col, row);
                let posed = model_ref.poses.ray(&cameras[cam], cam, col as f64 + 0.5, row as f64 + 0.5);
                let mut rng = ray_rng(cfg.seed, step as u64, ray_idx);
                let target = RayTarget { rgb: gt, scale };
                let e = model_ref.trace(
                    &posed,
                    label,
                    Some(&target),
                    Sampling::Random { rng: &mut rng, anneal },
                    &cfg.loss,
                    Some((&mut shard.grads, opts)),
                    false,
                    &mut shard.ws,
                );
                shard.rgb += e.rgb_error;
                shard.distortion += e.distortion;
                shard.interlevel += e.interlevel;
            }
        });

        total.zero();
        let (mut rgb, mut dist, mut inter) = (0.0, 0.0, 0.0);
        for shard in &shards {
            total.add(&shard.grads);
            rgb += shard.rgb;
            dist += shard.distortion;
            inter += shard.interlevel;
        }
        let (pr, pt) = model.poses.squared_norms();
        let parts = LossParts {
            rgb: rgb * scale,
            distortion: dist * scale,
            interlevel: inter * scale,
            pose_rotation: if cfg.optimize_poses { pr } else { 0.0 },
            pose_translation: if cfg.optimize_poses { pt } else { 0.0 },
        };
        let loss = match total_loss(&parts, &cfg.loss) {
            Ok(l) => l,
            Err(_) => {
                if let Some(dir) = out {
                    save_checkpoint(&model, step, &dir.join(CHECKPOINT_FILE))?;
                    let p = dir.join(METRICS_FILE);
                    fs::write(&p, metrics_csv(&metrics)).with_path(&p)?;
                }
                return Err(Error::NonFiniteLoss { step });
            }
        };

        let lr = lr_schedule(step, cfg.max_iterations, cfg.lr_init, cfg.lr_final);
        if !field_opt.update(&mut model.field.params, &total.field, lr) {
            warn!("step {step}: non-finite radiance-field gradient, update skipped");
        }
        if update_props {
            for (level, opt) in prop_opts.iter_mut().enumerate() {
                if !opt.update(&mut model.proposals[level].params, &total.proposals[level], lr) {
                    warn!("step {step}: non-finite proposal {level} gradient, update skipped");
                }
            }
        }
        if cfg.optimize_poses {
            model
                .poses
                .regularizer_grad(cfg.loss.pose_rotation, cfg.loss.pose_translation, &mut total.pose);
            let pose_lr = cfg.pose_lr * lr / cfg.lr_init;
            if !pose_opt.update(&mut model.poses.params, &total.pose, pose_lr) {
                warn!("step {step}: non-finite pose gradient, update skipped");
            }
        }

        let m = StepMetrics {
            step,
            loss,
            rgb: parts.rgb,
            distortion: parts.distortion,
            interlevel: parts.interlevel,
            psnr: psnr_from_rgb_loss(parts.rgb),
            lr,
        };
        metrics.push(m);
        if step % 100 == 0 || step + 1 == cfg.max_iterations {
            info!(
                "step {step:>6}  loss {:.5}  rgb {:.5}  psnr {:.2}  lr {:.2e}",
                m.loss, m.rgb, m.psnr, m.lr
            );
        }
        if cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0 {
            if let Some(&view) = dataset.bundle.split.val.first() {
                let p = view_psnr(&model, dataset, view);
                info!("step {:>6}  val view {view} psnr {p:.2}", step + 1);
            }
        }
    }

    if let Some(dir) = out {
        save_checkpoint(&model, cfg.max_iterations, &dir.join(CHECKPOINT_FILE))?;
        let p = dir.join(METRICS_FILE);
        fs::write(&p, metrics_csv(&metrics)).with_path(&p)?;
    }
    Ok(FitOutcome { model, metrics })
}

/// PSNR of a rendered view against its image over non-IGNORE pixels.
pub fn view_psnr(model: &Model, dataset: &Dataset, view: usize) -> f64 {
    let mask = &dataset.masks[view];
    let r = model.render_view(&dataset.bundle.cameras[view], view, Some(mask));
    let gt = &dataset.images[view];
    let mut se = 0.0;
    let mut count = 0usize;
    for row in 0..mask.height {
        for col in 0..mask.width {
            if mask.get(col, row) == MediumLabel::Ignore {
                continue;
            }
            let a = r.rgb.get(col, row);
            let b = gt.get(col, row);
            se += (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    psnr_from_rgb_loss(se / count as f64)
}
