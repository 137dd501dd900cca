//! Alpha compositing along a (virtual) ray and its reverse pass.

pub const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderOutputs {
    pub rgb: [f64; 3],
    /// Weight-normalized expected `t` on the virtual ray.
    pub depth: f64,
    pub accumulation: f64,
    pub weights: Vec<f64>,
    /// Transmittance after the last sample.
    pub transmittance: f64,
}

/// `α_i = 1 − exp(−σ_i Δ_i)`, `T_i = Π_{j<i}(1 − α_j)`, `w_i = T_i α_i`.
/// The transmittance chain runs through the interface without reset.
pub fn composite(sigma: &[f64], deltas: &[f64], colors: &[[f64; 3]], ts: &[f64]) -> RenderOutputs {
    let n = sigma.len();
    let mut out = RenderOutputs {
        weights: Vec::with_capacity(n),
        ..Default::default()
    };
    let mut log_t = 0.0f64;
    let mut wt = 0.0;
    for i in 0..n {
        let tau = sigma[i] * deltas[i];
        let w = (-log_t).exp() * -(-tau).exp_m1();
        log_t += tau;
        for c in 0..3 {
            out.rgb[c] += w * colors[i][c];
        }
        out.accumulation += w;
        wt += w * ts[i];
        out.weights.push(w);
    }
    out.depth = wt / out.accumulation.max(EPS);
    out.transmittance = (-log_t).exp();
    out
}

/// Per-sample transmittance `T_i` (length `n + 1`, last entry `T_final`).
pub fn transmittance(sigma: &[f64], deltas: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sigma.len() + 1);
    let mut log_t = 0.0f64;
    out.push(1.0);
    for (s, d) in sigma.iter().zip(deltas) {
        log_t += s * d;
        out.push((-log_t).exp());
    }
    out
}

/// Given `∂L/∂w_i`, returns `∂L/∂σ_i`.
pub fn weights_backward(sigma: &[f64], deltas: &[f64], weights: &[f64], grad_w: &[f64], out: &mut Vec<f64>) {
    let n = sigma.len();
    out.clear();
    out.resize(n, 0.0);
    // suffix = Σ_{i>k} g_i w_i
    let mut suffix = 0.0;
    let mut log_t: f64 = sigma.iter().zip(deltas).map(|(s, d)| s * d).sum();
    for k in (0..n).rev() {
        let t_next = (-log_t).exp();
        let d_tau = grad_w[k] * t_next - suffix;
        out[k] = d_tau * deltas[k];
        suffix += grad_w[k] * weights[k];
        log_t -= sigma[k] * deltas[k];
    }
}

/// `∂L/∂w_i` from gradients on the composited color, depth and accumulation.
pub fn output_weight_grads(
    out: &RenderOutputs,
    colors: &[[f64; 3]],
    ts: &[f64],
    d_rgb: [f64; 3],
    d_depth: f64,
    d_acc: f64,
    grad_w: &mut Vec<f64>,
) {
    grad_w.clear();
    let a = out.accumulation;
    for (c, &t) in colors.iter().zip(ts) {
        let mut g = d_rgb[0] * c[0] + d_rgb[1] * c[1] + d_rgb[2] * c[2] + d_acc;
        if a > EPS {
            g += d_depth * (t - out.depth) / a;
        }
        grad_w.push(g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_is_empty() {
        let o = composite(&[0.0; 4], &[0.1; 4], &[[1.0; 3]; 4], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(o.rgb, [0.0; 3]);
        assert_eq!(o.accumulation, 0.0);
        assert_eq!(o.transmittance, 1.0);
    }

    #[test]
    fn ln2_samples() {
        let ln2 = 2f64.ln();
        let o = composite(&[ln2], &[1.0], &[[1.0, 0.0, 0.0]], &[0.5]);
        assert!((o.weights[0] - 0.5).abs() < 1e-15);
        let o = composite(&[ln2, ln2], &[1.0, 1.0], &[[1.0; 3]; 2], &[0.5, 1.5]);
        assert!((o.weights[0] - 0.5).abs() < 1e-15);
        assert!((o.weights[1] - 0.25).abs() < 1e-15);
        assert!((o.accumulation - 0.75).abs() < 1e-15);
        assert!((o.depth - (0.25 + 0.375) / 0.75).abs() < 1e-15);
    }

    #[test]
    fn weights_backward_matches_fd() {
        let sigma = [0.3, 2.0, 0.0, 5.0, 1.1];
        let deltas = [0.2, 0.1, 0.3, 0.05, 0.4];
        let g = [0.7, -1.3, 0.2, 0.9, -0.4];
        let loss = |s: &[f64]| -> f64 {
            let o = composite(s, &deltas, &[[0.0; 3]; 5], &[0.0; 5]);
            o.weights.iter().zip(&g).map(|(w, g)| w * g).sum()
        };
        let o = composite(&sigma, &deltas, &[[0.0; 3]; 5], &[0.0; 5]);
        let mut ds = Vec::new();
        weights_backward(&sigma, &deltas, &o.weights, &g, &mut ds);
        for k in 0..5 {
            let h = 1e-6;
            let mut p = sigma;
            p[k] += h;
            let mut m = sigma;
            m[k] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - ds[k]).abs() < 1e-8, "{k}: {fd} vs {}", ds[k]);
        }
    }

    #[test]
    fn depth_gradient_matches_fd() {
        let sigma = [0.3, 2.0, 0.7];
        let deltas = [0.2, 0.1, 0.3];
        let ts = [1.0, 1.3, 1.6];
        let cols = [[0.2, 0.4, 0.6]; 3];
        let o = composite(&sigma, &deltas, &cols, &ts);
        let mut gw = Vec::new();
        output_weight_grads(&o, &cols, &ts, [0.0; 3], 1.0, 0.0, &mut gw);
        let mut ds = Vec::new();
        weights_backward(&sigma, &deltas, &o.weights, &gw, &mut ds);
        for k in 0..3 {
            let h = 1e-6;
            let mut p = sigma;
            p[k] += h;
            let mut m = sigma;
            m[k] -= h;
            let fd = (composite(&p, &deltas, &cols, &ts).depth - composite(&m, &deltas, &cols, &ts).depth) / (2.0 * h);
            assert!((fd - ds[k]).abs() < 1e-8);
        }
    }
}
