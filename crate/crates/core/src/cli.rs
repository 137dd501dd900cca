//! Command-line pipeline: synth → prep → train → render/export → eval, plus
//! the three-variant ablation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::dataprep::{prepare_dataset, Dataset, MediumLabel, PrepOptions, DEFAULT_MASK_THRESHOLD};
use crate::error::{Error, IoContext, Result};
use crate::eval::{evaluate_cloud, psnr, ssim, write_report, CloudEvaluation, EvalOptions, IcpOptions, Reference, TriMesh};
use crate::export::{denormalize, export_pointcloud, read_ply, read_ply_mesh, write_pfm, write_ply, ExportOptions, Frame};
use crate::rendering::{Model, Variant};
use crate::synthscene::{load_scene, render_dataset, SyntheticScene, Trajectory, SCENE_FILE};
use crate::training::{fit, load_checkpoint, TrainConfig};

pub const THREADS_ENV: &str = "BATHY_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bathy", version, about = "Refraction-aware two-media radiance fields for bathymetry")]
struct Cli {
    /// Worker thread cap (defaults to $BATHY_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic two-media dataset with ground truth.
    Synth(SynthArgs),
    /// Normalize cameras, markers, images and masks into a training dataset.
    Prep(PrepArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Render one dataset view from a checkpoint.
    Render(RenderArgs),
    /// Export a refraction-corrected point cloud.
    Export(ExportArgs),
    /// Evaluate a point cloud against a reference surface.
    Eval(EvalArgs),
    /// Train, export and evaluate all three variants on one dataset.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "default")]
    preset: String,
    /// Scene JSON overriding the preset.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 24)]
    cameras: usize,
    #[arg(long, default_value_t = 64)]
    res: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PrepArgs {
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    markers: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    mask_threshold: f64,
}

/// Flags that override the config file.
#[derive(Debug, Args, Clone)]
struct TrainOverrides {
    /// TOML or JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainOverrides {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(n) = self.iterations {
            cfg.max_iterations = n;
        }
        if let Some(n) = self.rays {
            cfg.rays_per_batch = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// baseline-single-medium, two-media-refraction-on or two-media-refraction-off.
    #[arg(long)]
    variant: Option<String>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// View index or camera id.
    #[arg(long)]
    view: String,
    /// `rgb.png,depth.pfm`, or a directory receiving both.
    #[arg(long)]
    out: String,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = crate::export::DEFAULT_OPACITY_THRESHOLD)]
    opacity_threshold: f64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    refraction: Switch,
    #[arg(long, default_value = "global", value_parser = parse_frame)]
    frame: Frame,
    #[arg(long, default_value_t = 1)]
    stride: u32,
    /// Write ASCII instead of binary PLY.
    #[arg(long)]
    ascii: bool,
}

#[derive(Debug, Args, Clone)]
struct EvalFlags {
    #[arg(long, default_value_t = crate::eval::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = crate::eval::DEFAULT_CLIP)]
    clip: f64,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    icp: Switch,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    sor: Switch,
    /// Side of the central evaluation square as a fraction of the extent.
    #[arg(long, default_value_t = 0.8)]
    crop: f64,
}

impl EvalFlags {
    fn options(&self) -> Result<EvalOptions> {
        if !(self.threshold > 0.0 && self.clip > 0.0 && self.crop > 0.0 && self.crop <= 1.0) {
            return Err(Error::InvalidArgument("threshold and clip must be positive, crop in (0, 1]".into()));
        }
        let defaults = EvalOptions::default();
        Ok(EvalOptions {
            threshold: self.threshold,
            clip: self.clip,
            crop_fraction: self.crop,
            sor: self.sor.on().then_some(defaults.sor.unwrap_or((10, 2.0))),
            icp: self.icp.on().then(IcpOptions::default),
            ..defaults
        })
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Synthetic scene JSON or a reference mesh PLY.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Row label in the report.
    #[arg(long, default_value = "cloud")]
    method: String,
    #[command(flatten)]
    flags: EvalFlags,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference surface; defaults to a scene.json in or next to the dataset.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = crate::export::DEFAULT_OPACITY_THRESHOLD)]
    opacity_threshold: f64,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[command(flatten)]
    flags: EvalFlags,
}

fn parse_frame(s: &str) -> std::result::Result<Frame, String> {
    Frame::parse(s).ok_or_else(|| format!("unknown frame '{s}' (normalized, chunk or global)"))
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s).ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}'")))
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code: 0 on success, 2 on usage or config-schema
/// errors, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Schema(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Prep(a) => prep(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Export(a) => export(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate_cmd(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let scene = match &a.scene {
        Some(p) => load_scene(p)?,
        None => SyntheticScene::preset(&a.preset)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset '{}'", a.preset)))?,
    };
    if a.cameras == 0 || a.res == 0 {
        return Err(Error::InvalidArgument("cameras and res must be positive".into()));
    }
    let out = render_dataset(&scene, &Trajectory::with_cameras(a.cameras), a.res, &a.out)?;
    info!("wrote {} views to {}", a.cameras, out.root.display());
    println!("{}", out.root.display());
    Ok(())
}

fn prep(a: PrepArgs) -> Result<()> {
    let mut opts = PrepOptions::new(a.cameras, a.markers, a.images, &a.out);
    opts.masks = a.masks;
    opts.train_fraction = a.train_fraction;
    opts.seed = a.seed;
    opts.mask_threshold = a.mask_threshold;
    let bundle = prepare_dataset(&opts)?;
    println!(
        "{}: {} views ({} train / {} val)",
        a.out.display(),
        bundle.cameras.len(),
        bundle.split.train.len(),
        bundle.split.val.len()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.overrides.resolve()?;
    if let Some(v) = &a.variant {
        cfg.model.variant = parse_variant(v)?;
    }
    let dataset = Dataset::load(&a.dataset)?;
    let out = fit(&dataset, &cfg, Some(&a.out))?;
    if let Some(m) = out.metrics.last() {
        println!("step {} loss {:.6} psnr {:.2}", m.step, m.loss, m.psnr);
    }
    Ok(())
}

fn resolve_view(dataset: &Dataset, view: &str) -> Result<usize> {
    if let Some(i) = dataset.bundle.cameras.iter().position(|c| c.id == view) {
        return Ok(i);
    }
    match view.parse::<usize>() {
        Ok(i) if i < dataset.len() => Ok(i),
        _ => Err(Error::InvalidArgument(format!("no view '{view}' in dataset"))),
    }
}

fn render(a: RenderArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let dataset = Dataset::load(&a.dataset)?;
    let v = resolve_view(&dataset, &a.view)?;
    let (rgb_path, depth_path) = match a.out.split_once(',') {
        Some((r, d)) => (PathBuf::from(r), PathBuf::from(d)),
        None => {
            let dir = PathBuf::from(&a.out);
            fs::create_dir_all(&dir).with_path(&dir)?;
            (dir.join("rgb.png"), dir.join("depth.pfm"))
        }
    };
    let cam = &dataset.bundle.cameras[v];
    let view = model.render_view(cam, v, Some(&dataset.masks[v]));
    view.rgb.write_png(&rgb_path)?;
    write_pfm(&depth_path, cam.width, cam.height, &view.depth)?;
    println!("{} {}", rgb_path.display(), depth_path.display());
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let dataset = Dataset::load(&a.dataset)?;
    let opts = ExportOptions {
        opacity_threshold: a.opacity_threshold,
        refraction: a.refraction.on(),
        stride: a.stride,
    };
    let cloud = export_pointcloud(&model, &dataset, &opts)?;
    let cloud = denormalize(&cloud, &dataset.bundle.norm, &dataset.bundle.chunk, a.frame)?;
    write_ply(&cloud, &a.out, !a.ascii)?;
    println!("{}: {} points ({} frame)", a.out.display(), cloud.len(), cloud.frame);
    Ok(())
}

/// Loads a synthetic scene (`.json`) or a triangle mesh (`.ply`).
pub fn load_reference(path: &Path) -> Result<Reference> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(Reference::analytic(load_scene(path)?)),
        Some("ply") => {
            let (verts, faces) = read_ply_mesh(path)?;
            if faces.is_empty() {
                return Err(Error::InvalidArgument(format!("{} has no faces", path.display())));
            }
            Ok(Reference::mesh(TriMesh::new(verts.positions, faces), verts.frame))
        }
        _ => Err(Error::InvalidArgument(format!(
            "reference {} must be a scene .json or a mesh .ply",
            path.display()
        ))),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let reference = load_reference(&a.reference)?;
    let cloud = read_ply(&a.cloud)?;
    let e = evaluate_cloud(&a.method, &cloud, &reference, &a.flags.options()?)?;
    write_report(std::slice::from_ref(&e), &a.out)?;
    print_row(&e);
    Ok(())
}

fn print_row(e: &CloudEvaluation) {
    let r = &e.report;
    println!(
        "{:<28} points {:>8}  c2m {:+.4} ± {:.4}  completeness {:.1}%",
        r.method,
        r.points,
        r.c2m_mean,
        r.c2m_std,
        100.0 * r.completeness
    );
}

/// Mean PSNR and SSIM over the held-out views, ignoring IGNORE pixels.
pub fn test_view_metrics(model: &Model, dataset: &Dataset) -> (Option<f64>, Option<f64>) {
    let (mut p, mut s, mut ns) = (0.0, 0.0, 0usize);
    let views = &dataset.bundle.split.val;
    for &v in views {
        let cam = &dataset.bundle.cameras[v];
        let mask = &dataset.masks[v];
        let rendered = model.render_view(cam, v, Some(mask));
        let valid: Vec<bool> = (0..cam.height)
            .flat_map(|r| (0..cam.width).map(move |c| (c, r)))
            .map(|(c, r)| mask.get(c, r) != MediumLabel::Ignore)
            .collect();
        p += psnr(&rendered.rgb, &dataset.images[v], Some(&valid));
        if let Some(x) = ssim(&rendered.rgb, &dataset.images[v], Some(&valid)) {
            s += x;
            ns += 1;
        }
    }
    let n = views.len();
    ((n > 0).then(|| p / n as f64), (ns > 0).then(|| s / ns as f64))
}

/// Exports a trained model in the global frame and evaluates it.
pub fn evaluate_model(
    method: &str,
    model: &Model,
    dataset: &Dataset,
    reference: &Reference,
    export: &ExportOptions,
    opts: &EvalOptions,
) -> Result<CloudEvaluation> {
    let cloud = export_pointcloud(model, dataset, export)?;
    let cloud = denormalize(&cloud, &dataset.bundle.norm, &dataset.bundle.chunk, reference.frame)?;
    let mut e = evaluate_cloud(method, &cloud, reference, opts)?;
    let (p, s) = test_view_metrics(model, dataset);
    e.report.psnr = p;
    e.report.ssim = s;
    Ok(e)
}

/// Trains every variant with the same config and seed, exports with each
/// variant's own refraction setting, and evaluates against `reference`.
/// With `out`, each variant gets a run directory and the report is written
/// next to them.
pub fn ablate(
    dataset: &Dataset,
    cfg: &TrainConfig,
    reference: &Reference,
    opacity_threshold: f64,
    opts: &EvalOptions,
    out: Option<&Path>,
) -> Result<Vec<CloudEvaluation>> {
    let mut evals = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let mut c = cfg.clone();
        c.model.variant = variant;
        let run_dir = out.map(|o| o.join(variant.name()));
        info!("training {variant}");
        let fitted = fit(dataset, &c, run_dir.as_deref())?;
        let export = ExportOptions {
            opacity_threshold,
            refraction: variant.refraction(),
            stride: 1,
        };
        let e = evaluate_model(variant.name(), &fitted.model, dataset, reference, &export, opts)?;
        if let Some(dir) = &run_dir {
            let cloud = export_pointcloud(&fitted.model, dataset, &export)?;
            let cloud = denormalize(&cloud, &dataset.bundle.norm, &dataset.bundle.chunk, reference.frame)?;
            write_ply(&cloud, &dir.join("cloud.ply"), true)?;
        }
        evals.push(e);
    }
    if let Some(o) = out {
        write_report(&evals, o)?;
    }
    Ok(evals)
}

fn find_reference(dataset: &Path) -> Option<PathBuf> {
    [dataset.join(SCENE_FILE), dataset.join("..").join(SCENE_FILE)]
        .into_iter()
        .find(|p| p.is_file())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    let opts = a.flags.options()?;
    let ref_path = a
        .reference
        .clone()
        .or_else(|| find_reference(&a.dataset))
        .ok_or_else(|| Error::InvalidArgument("no reference surface found; pass --ref".into()))?;
    let reference = load_reference(&ref_path)?;
    let dataset = Dataset::load(&a.dataset)?;
    let evals = ablate(&dataset, &cfg, &reference, a.opacity_threshold, &opts, Some(&a.out))?;
    for e in &evals {
        print_row(e);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["bathy", "synth", "--bogus"]), 2);
        assert_eq!(run(["bathy"]), 2);
        assert_eq!(run(["bathy", "frobnicate"]), 2);
        assert_eq!(run(["bathy", "export", "--checkpoint", "a", "--dataset", "b", "--out", "c", "--frame", "sideways"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["bathy", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert_eq!(run(["bathy".into(), "train".into(), "--dataset".into(), missing.clone().into_os_string(), "--out".into(), dir.path().join("run").into_os_string()]), 1);
        assert_eq!(run(["bathy", "synth", "--preset", "nonexistent", "--out", "x"]), 1);
    }

    #[test]
    fn schema_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, "max_iterations = 10\nunknown_key = 3\n").unwrap();
        let code = run([
            OsString::from("bathy"),
            "train".into(),
            "--dataset".into(),
            dir.path().into(),
            "--out".into(),
            dir.path().join("run").into(),
            "--config".into(),
            cfg.into(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn overrides_take_precedence_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"max_iterations": 10, "seed": 3}"#).unwrap();
        let o = TrainOverrides {
            config: Some(cfg),
            iterations: Some(7),
            rays: None,
            seed: None,
        };
        let r = o.resolve().unwrap();
        assert_eq!((r.max_iterations, r.seed, r.rays_per_batch), (7, 3, TrainConfig::default().rays_per_batch));
    }
}
