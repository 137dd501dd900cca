//! 3D and 2D evaluation: cloud-to-surface distances, completeness, outlier
//! removal, rigid ICP, image metrics and report files.

mod image;
mod index;
mod mesh;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::SVD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use image::{psnr, psnr_from_mse, ssim, ssim_terms, PSNR_CAP};
pub use index::{KdTree, SpatialGrid};
pub use mesh::{closest_point_on_triangle, TriMesh};

use crate::error::{Error, IoContext, Result};
use crate::export::{Frame, PointCloud};
use crate::geom::{Mat3, SimilarityTransform, Vec3};
use crate::synthscene::SyntheticScene;

pub const DEFAULT_THRESHOLD: f64 = 0.3;
pub const DEFAULT_CLIP: f64 = 2.0;

/// Ground-truth surface in a known frame.
#[derive(Debug, Clone)]
pub enum Surface {
    Analytic(Box<SyntheticScene>),
    Mesh(TriMesh),
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub surface: Surface,
    pub frame: Frame,
}

impl Reference {
    pub fn analytic(scene: SyntheticScene) -> Self {
        Self {
            surface: Surface::Analytic(Box::new(scene)),
            frame: Frame::Global,
        }
    }

    pub fn mesh(mesh: TriMesh, frame: Frame) -> Self {
        Self {
            surface: Surface::Mesh(mesh),
            frame,
        }
    }

    /// Positive above the surface.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match &self.surface {
            Surface::Analytic(s) => s.signed_distance(p),
            Surface::Mesh(m) => m.signed_distance(p),
        }
    }

    /// Horizontal evaluation square `[min, max]` covering the central
    /// `fraction` of the reference extent.
    pub fn crop(&self, fraction: f64) -> ([f64; 2], [f64; 2]) {
        let (lo, hi) = match &self.surface {
            Surface::Analytic(s) => ([-s.half_extent; 2], [s.half_extent; 2]),
            Surface::Mesh(m) => m.vertices.iter().fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), v| {
                ([lo[0].min(v.x), lo[1].min(v.y)], [hi[0].max(v.x), hi[1].max(v.y)])
            }),
        };
        let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let h = [(hi[0] - lo[0]) * fraction / 2.0, (hi[1] - lo[1]) * fraction / 2.0];
        ([c[0] - h[0], c[1] - h[1]], [c[0] + h[0], c[1] + h[1]])
    }

    pub fn sample_points(&self, gsd: f64, min: [f64; 2], max: [f64; 2]) -> Vec<Vec3> {
        match &self.surface {
            Surface::Analytic(s) => s.sample_reference_points_in(gsd, min, max),
            Surface::Mesh(m) => m
                .sample_surface(gsd)
                .into_iter()
                .filter(|p| p.x >= min[0] && p.x <= max[0] && p.y >= min[1] && p.y <= max[1])
                .collect(),
        }
    }

    /// True where the reference ground lies under water (analytic only).
    pub fn is_underwater(&self, x: f64, y: f64) -> Option<bool> {
        match &self.surface {
            Surface::Analytic(s) => Some(s.height(x, y) < s.water_plane_z()),
            Surface::Mesh(_) => None,
        }
    }
}

fn check_frame(cloud: &PointCloud, reference: &Reference) -> Result<()> {
    if cloud.frame != reference.frame {
        return Err(Error::FrameMismatch {
            cloud: cloud.frame.to_string(),
            reference: reference.frame.to_string(),
        });
    }
    Ok(())
}

/// Signed cloud-to-surface distance per point.
pub fn c2m_signed(cloud: &PointCloud, reference: &Reference) -> Result<Vec<f64>> {
    check_frame(cloud, reference)?;
    Ok(cloud.positions.par_iter().map(|p| reference.signed_distance(p)).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub std: f64,
    /// Values inside the clip range.
    pub retained: usize,
    pub excluded: usize,
}

/// Mean and population standard deviation of the values within `±clip`.
pub fn distance_stats(d: &[f64], clip: Option<f64>) -> DistanceStats {
    let kept: Vec<f64> = d.iter().copied().filter(|v| clip.is_none_or(|c| v.abs() <= c)).collect();
    let n = kept.len();
    if n == 0 {
        return DistanceStats {
            excluded: d.len(),
            ..Default::default()
        };
    }
    let mean = kept.iter().sum::<f64>() / n as f64;
    let var = kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    DistanceStats {
        mean,
        std: var.sqrt(),
        retained: n,
        excluded: d.len() - n,
    }
}

/// Fraction of reference points with a reconstructed point within `threshold`.
pub fn completeness(reference: &[Vec3], cloud: &[Vec3], threshold: f64) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    if cloud.is_empty() {
        return 0.0;
    }
    let grid = SpatialGrid::new(cloud, threshold.max(1e-9));
    let hit = reference.par_iter().filter(|p| grid.any_within(p, threshold)).count();
    hit as f64 / reference.len() as f64
}

/// Statistical outlier removal. Returns the keep mask.
pub fn sor_mask(points: &[Vec3], k: usize, sigma: f64) -> Vec<bool> {
    if points.len() <= k {
        return vec![true; points.len()];
    }
    let tree = KdTree::new(points);
    let means: Vec<f64> = points
        .par_iter()
        .map(|p| {
            let nn = tree.knn(p, k + 1);
            nn.iter().skip(1).map(|(d2, _)| d2.sqrt()).sum::<f64>() / k as f64
        })
        .collect();
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sd = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / n).sqrt();
    let limit = mu + sigma * sd;
    means.iter().map(|&m| m <= limit).collect()
}

pub fn sor_filter(cloud: &PointCloud, k: usize, sigma: f64) -> PointCloud {
    cloud.retain_indices(&sor_mask(&cloud.positions, k, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Correspondences farther apart are ignored.
    pub max_distance: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-10,
            max_distance: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    /// Maps the source onto the target (scale fixed to 1).
    pub transform: SimilarityTransform,
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Least-squares rotation and translation taking `src` onto `dst`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> (Mat3, Vec3) {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - cs) * (b - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    (r, cd - r * cs)
}

/// Point-to-point ICP of `source` onto `target`.
pub fn icp_align(source: &[Vec3], target: &[Vec3], opts: &IcpOptions) -> IcpResult {
    let mut transform = SimilarityTransform::identity();
    let mut result = IcpResult {
        transform,
        rms: f64::INFINITY,
        iterations: 0,
        converged: false,
    };
    if source.is_empty() || target.is_empty() {
        return result;
    }
    let tree = KdTree::new(target);
    let max_d2 = opts.max_distance * opts.max_distance;
    let mut prev_rms = f64::INFINITY;
    for it in 0..opts.max_iterations {
        let moved: Vec<Vec3> = source.iter().map(|p| transform.apply(p)).collect();
        let pairs: Vec<(Vec3, Vec3, f64)> = moved
            .par_iter()
            .zip(source.par_iter())
            .filter_map(|(m, s)| {
                let (d2, j) = tree.nearest(m)?;
                (d2 <= max_d2).then_some((*s, target[j], d2))
            })
            .collect();
        if pairs.len() < 3 {
            return result;
        }
        let rms = (pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64).sqrt();
        result = IcpResult {
            transform,
            rms,
            iterations: it,
            converged: false,
        };
        if (prev_rms - rms).abs() < opts.tolerance || rms < opts.tolerance {
            result.converged = true;
            return result;
        }
        prev_rms = rms;
        let (src, dst): (Vec<Vec3>, Vec<Vec3>) = pairs.iter().map(|p| (p.0, p.1)).unzip();
        let (r, t) = kabsch(&src, &dst);
        transform = SimilarityTransform::new(r, t, 1.0);
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub clip: f64,
    /// Side of the central evaluation square as a fraction of the extent.
    pub crop_fraction: f64,
    /// Spacing of the reference samples used for completeness.
    pub reference_gsd: f64,
    /// `(k, σ)` for outlier removal before evaluation.
    pub sor: Option<(usize, f64)>,
    pub icp: Option<IcpOptions>,
    pub histogram_bin: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            clip: DEFAULT_CLIP,
            crop_fraction: 0.8,
            reference_gsd: 0.1,
            sor: Some((10, 2.0)),
            icp: None,
            histogram_bin: 0.05,
        }
    }
}

/// One row of the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub points: usize,
    pub c2m_mean: f64,
    pub c2m_std: f64,
    pub c2m_retained: usize,
    pub completeness: f64,
    /// Mean signed distance over points above under-water ground.
    pub seabed_mean: Option<f64>,
    pub seabed_points: usize,
    pub icp_rms: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CloudEvaluation {
    pub report: MethodReport,
    /// Signed distances within the clip range, in point order.
    pub distances: Vec<f64>,
    pub histogram: Histogram,
}

/// Crop → optional SOR → optional ICP → C2M statistics and completeness.
pub fn evaluate_cloud(method: &str, cloud: &PointCloud, reference: &Reference, opts: &EvalOptions) -> Result<CloudEvaluation> {
    check_frame(cloud, reference)?;
    let (lo, hi) = reference.crop(opts.crop_fraction);
    let inside = |p: &Vec3| p.x >= lo[0] && p.x <= hi[0] && p.y >= lo[1] && p.y <= hi[1];
    let keep: Vec<bool> = cloud.positions.iter().map(inside).collect();
    let mut cropped = cloud.retain_indices(&keep);
    if let Some((k, sigma)) = opts.sor {
        cropped = sor_filter(&cropped, k, sigma);
    }
    let ref_points = reference.sample_points(opts.reference_gsd, lo, hi);
    let mut icp_rms = None;
    if let Some(icp) = &opts.icp {
        let r = icp_align(&cropped.positions, &ref_points, icp);
        cropped.positions = cropped.positions.iter().map(|p| r.transform.apply(p)).collect();
        icp_rms = Some(r.rms);
    }
    let d = c2m_signed(&cropped, reference)?;
    let stats = distance_stats(&d, Some(opts.clip));
    let clipped: Vec<f64> = d.iter().copied().filter(|v| v.abs() <= opts.clip).collect();
    let mut seabed = Vec::new();
    for (p, &v) in cropped.positions.iter().zip(&d) {
        if v.abs() <= opts.clip && reference.is_underwater(p.x, p.y) == Some(true) {
            seabed.push(v);
        }
    }
    let seabed_mean = (!seabed.is_empty()).then(|| seabed.iter().sum::<f64>() / seabed.len() as f64);
    let histogram = Histogram::new(&clipped, -opts.clip, opts.clip, opts.histogram_bin);
    Ok(CloudEvaluation {
        report: MethodReport {
            method: method.to_string(),
            points: cropped.len(),
            c2m_mean: stats.mean,
            c2m_std: stats.std,
            c2m_retained: stats.retained,
            completeness: completeness(&ref_points, &cropped.positions, opts.threshold),
            seabed_mean,
            seabed_points: seabed.len(),
            icp_rms,
            psnr: None,
            ssim: None,
        },
        distances: clipped,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Fixed-width bins over `[lo, hi]`; values outside are dropped.
    pub fn new(values: &[f64], lo: f64, hi: f64, width: f64) -> Self {
        let n = ((hi - lo) / width).round().max(1.0) as usize;
        let edges: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let mut counts = vec![0; n];
        for &v in values {
            if v < lo || v > hi {
                continue;
            }
            let i = (((v - lo) / (hi - lo)) * n as f64).floor() as usize;
            counts[i.min(n - 1)] += 1;
        }
        Self { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

pub fn report_csv(rows: &[MethodReport]) -> String {
    let mut s = String::from(
        "method,points,c2m_mean,c2m_std,c2m_retained,completeness,seabed_mean,seabed_points,icp_rms,psnr,ssim\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.points,
            r.c2m_mean,
            r.c2m_std,
            r.c2m_retained,
            r.completeness,
            opt(r.seabed_mean),
            r.seabed_points,
            opt(r.icp_rms),
            opt(r.psnr),
            opt(r.ssim)
        );
    }
    s
}

/// Writes `report.csv` plus one `hist_<method>.csv` per evaluation.
pub fn write_report(evals: &[CloudEvaluation], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_path(dir)?;
    let rows: Vec<MethodReport> = evals.iter().map(|e| e.report.clone()).collect();
    let p = dir.join("report.csv");
    fs::write(&p, report_csv(&rows)).with_path(&p)?;
    for e in evals {
        let p = dir.join(format!("hist_{}.csv", e.report.method));
        fs::write(&p, e.histogram.to_csv()).with_path(&p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn flat_reference() -> Reference {
        Reference::analytic(SyntheticScene::preset("flat").unwrap())
    }

    #[test]
    fn c2m_cases() {
        let r = flat_reference();
        let on = PointCloud::from_points(vec![Vec3::new(1.0, 2.0, -2.0), Vec3::new(-3.0, 0.5, -2.0)], Frame::Global);
        assert!(c2m_signed(&on, &r).unwrap().iter().all(|d| d.abs() < 1e-12));
        let above = PointCloud::from_points(vec![Vec3::new(1.0, 2.0, -1.5); 3], Frame::Global);
        assert!(c2m_signed(&above, &r).unwrap().iter().all(|d| (d - 0.5).abs() < 1e-12));
        let mut d = c2m_signed(&above, &r).unwrap();
        d.push(5.0);
        let s = distance_stats(&d, Some(2.0));
        assert_eq!((s.retained, s.excluded), (3, 1));
        assert!((s.mean - 0.5).abs() < 1e-12 && s.std < 1e-12);
        let wrong = PointCloud::from_points(vec![Vec3::zeros()], Frame::Normalized);
        assert!(matches!(c2m_signed(&wrong, &r), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn completeness_cases() {
        let reference: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(completeness(&reference, &reference, 0.3), 1.0);
        let cloud: Vec<Vec3> = reference[..7].iter().map(|p| p + Vec3::new(0.0, 0.2, 0.0)).collect();
        assert!((completeness(&reference, &cloud, 0.3) - 0.7).abs() < 1e-15);
        assert_eq!(completeness(&reference, &[], 0.3), 0.0);
    }

    #[test]
    fn completeness_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reference: Vec<Vec3> = (0..300).map(|_| Vec3::new(rng.gen(), rng.gen(), 0.0)).collect();
        let cloud: Vec<Vec3> = (0..100).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen_range(-0.1..0.1))).collect();
        let mut last = 0.0;
        for k in 0..30 {
            let c = completeness(&reference, &cloud, 0.01 * k as f64);
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn sor_removes_far_outlier() {
        let mut pts: Vec<Vec3> = Vec::new();
        for j in 0..20 {
            for i in 0..20 {
                pts.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        pts.push(Vec3::new(10.0, 10.0, 100.0));
        let keep = sor_mask(&pts, 10, 2.0);
        assert!(!keep[400]);
        assert!(keep[..400].iter().all(|&k| k));

        let coincident = vec![Vec3::new(1.0, 2.0, 3.0); 11];
        assert!(sor_mask(&coincident, 10, 2.0).iter().all(|&k| k));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 0.1).unwrap();
        let blob: Vec<Vec3> = (0..2000).map(|_| Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng))).collect();
        let kept = sor_mask(&blob, 10, 2.0).iter().filter(|&&k| k).count();
        // Sparse Gaussian tails lose a few points; the bulk must survive.
        assert!(kept as f64 >= 0.9 * 2000.0, "kept {kept}");
    }

    fn surface_points() -> Vec<Vec3> {
        let mut pts = Vec::new();
        for j in 0..30 {
            for i in 0..30 {
                let (x, y) = (i as f64 * 0.1, j as f64 * 0.1);
                pts.push(Vec3::new(x, y, 0.3 * (2.0 * x).sin() + 0.2 * (3.0 * y).cos()));
            }
        }
        pts
    }

    #[test]
    fn icp_identity_and_recovery() {
        let target = surface_points();
        let r = icp_align(&target, &target, &IcpOptions::default());
        assert!(r.converged && r.rms < 1e-12);
        assert!((r.transform.rotation - Mat3::identity()).abs().max() < 1e-12);

        let rot = so3_exp(&Vec3::new(0.0, 0.0, 2f64.to_radians()));
        let perturb = SimilarityTransform::new(rot, Vec3::new(0.05, 0.0, 0.0), 1.0);
        let source: Vec<Vec3> = target.iter().map(|p| perturb.apply(p)).collect();
        let r = icp_align(&source, &target, &IcpOptions::default());
        let inv = perturb.inverse();
        assert!(r.rms < 1e-6, "rms {}", r.rms);
        assert!((r.transform.rotation - inv.rotation).abs().max() < 1e-3);
        assert!((r.transform.translation - inv.translation).norm() < 1e-3);
    }

    #[test]
    fn icp_disjoint_clouds_do_not_converge() {
        let target = surface_points();
        let far: Vec<Vec3> = target.iter().map(|p| p + Vec3::new(100.0, 0.0, 0.0)).collect();
        let r = icp_align(&far, &target, &IcpOptions::default());
        assert!(!r.converged);
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src: Vec<Vec3> = (0..50).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let r = so3_exp(&Vec3::new(0.3, -1.1, 2.0));
        let t = Vec3::new(1.0, -2.0, 0.5);
        let dst: Vec<Vec3> = src.iter().map(|p| r * p + t).collect();
        let (rr, tt) = kabsch(&src, &dst);
        assert!((rr - r).abs().max() < 1e-12 && (tt - t).norm() < 1e-12);
    }

    #[test]
    fn histogram_counts_sum() {
        let vals = [-1.99, -0.5, 0.0, 0.01, 1.2, 2.0];
        let h = Histogram::new(&vals, -2.0, 2.0, 0.05);
        assert_eq!(h.counts.len(), 80);
        assert_eq!(h.counts.iter().sum::<usize>(), vals.len());
        assert!(h.to_csv().starts_with("lo,hi,count\n"));
    }

    #[test]
    fn evaluation_of_exact_cloud() {
        let scene = SyntheticScene::default();
        let r = Reference::analytic(scene.clone());
        let pts = scene.sample_reference_points(0.05);
        let cloud = PointCloud::from_points(pts, Frame::Global);
        let e = evaluate_cloud("exact", &cloud, &r, &EvalOptions::default()).unwrap();
        assert!(e.report.c2m_mean.abs() < 1e-6 && e.report.c2m_std < 1e-3);
        assert!(e.report.completeness > 0.999);
        assert!(e.report.seabed_mean.unwrap().abs() < 1e-9);
        assert_eq!(e.histogram.counts.iter().sum::<usize>(), e.report.c2m_retained);
        let csv = report_csv(&[e.report.clone()]);
        assert_eq!(csv.lines().count(), 2);
    }
}
