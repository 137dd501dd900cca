//! Image metrics over valid-pixel masks.

use crate::dataprep::Image;

pub const PSNR_CAP: f64 = 99.0;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check(pred: &Image, gt: &Image, valid: Option<&[bool]>) {
    assert_eq!((pred.width, pred.height), (gt.width, gt.height), "image sizes differ");
    if let Some(v) = valid {
        assert_eq!(v.len(), (gt.width * gt.height) as usize, "mask size differs");
    }
}

/// `−10·log10(MSE)` over valid pixels and channels, capped at 99 dB.
pub fn psnr(pred: &Image, gt: &Image, valid: Option<&[bool]>) -> f64 {
    check(pred, gt, valid);
    let mut se = 0.0;
    let mut n = 0usize;
    for (i, (a, b)) in pred.data.iter().zip(&gt.data).enumerate() {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        for c in 0..3 {
            se += (a[c] as f64 - b[c] as f64).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return 0.0;
    }
    psnr_from_mse(se / n as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

/// Luminance, contrast and structure terms of one window's statistics.
pub fn ssim_terms(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> (f64, f64, f64) {
    let c3 = C2 / 2.0;
    let (sx, sy) = (vx.max(0.0).sqrt(), vy.max(0.0).sqrt());
    let l = (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
    let c = (2.0 * sx * sy + C2) / (vx + vy + C2);
    let s = (cxy + c3) / (sx * sy + c3);
    (l, c, s)
}

fn gaussian_window() -> Vec<f64> {
    let r = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(WINDOW * WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Mean SSIM over 11×11 Gaussian windows lying fully inside the valid mask,
/// averaged over channels. `None` when no window fits.
pub fn ssim(pred: &Image, gt: &Image, valid: Option<&[bool]>) -> Option<f64> {
    check(pred, gt, valid);
    let (w, h) = (gt.width as usize, gt.height as usize);
    if w < WINDOW || h < WINDOW {
        return None;
    }
    // Summed-area table of invalid pixels for O(1) window tests.
    let mut bad = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let b = valid.is_some_and(|v| !v[y * w + x]) as u32;
            bad[(y + 1) * (w + 1) + x + 1] = b + bad[y * (w + 1) + x + 1] + bad[(y + 1) * (w + 1) + x] - bad[y * (w + 1) + x];
        }
    }
    let kernel = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - WINDOW {
        for x0 in 0..=w - WINDOW {
            let (x1, y1) = (x0 + WINDOW, y0 + WINDOW);
            let n_bad = bad[y1 * (w + 1) + x1] + bad[y0 * (w + 1) + x0] - bad[y0 * (w + 1) + x1] - bad[y1 * (w + 1) + x0];
            if n_bad > 0 {
                continue;
            }
            for c in 0..3 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..WINDOW {
                    for dx in 0..WINDOW {
                        let k = kernel[dy * WINDOW + dx];
                        let i = (y0 + dy) * w + x0 + dx;
                        let a = pred.data[i][c] as f64;
                        let b = gt.data[i][c] as f64;
                        mx += k * a;
                        my += k * b;
                        xx += k * a * a;
                        yy += k * b * b;
                        xy += k * a * b;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                count += 1;
            }
        }
    }
    (count > 0).then(|| total / count as f64)
}
