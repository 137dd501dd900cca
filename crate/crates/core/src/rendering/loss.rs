//! Photometric, distortion and interlevel losses with their gradients.

use log::warn;
use serde::{Deserialize, Serialize};

use super::composite::EPS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub distortion: f64,
    pub interlevel: f64,
    pub pose_rotation: f64,
    pub pose_translation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            distortion: 0.002,
            interlevel: 1.0,
            pose_rotation: 0.001,
            pose_translation: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rgb: f64,
    pub distortion: f64,
    pub interlevel: f64,
    /// Unweighted `Σ‖r‖²` over cameras.
    pub pose_rotation: f64,
    /// Unweighted `Σ‖t‖²` over cameras.
    pub pose_translation: f64,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    let l = parts.rgb
        + w.distortion * parts.distortion
        + w.interlevel * parts.interlevel
        + w.pose_rotation * parts.pose_rotation
        + w.pose_translation * parts.pose_translation;
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::NonFiniteLoss { step: 0 })
    }
}

/// Mean squared color error (summed over channels) over valid pixels.
pub fn rgb_loss(pred: &[[f64; 3]], gt: &[[f64; 3]], valid: &[bool]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len(), valid.len());
    let mut n = 0usize;
    let mut sum = 0.0;
    for ((p, g), &v) in pred.iter().zip(gt).zip(valid) {
        if v {
            n += 1;
            sum += (0..3).map(|c| (p[c] - g[c]).powi(2)).sum::<f64>();
        }
    }
    if n == 0 {
        warn!("rgb loss over zero valid pixels");
        return 0.0;
    }
    sum / n as f64
}

/// Per-ray distortion `Σ_{i,j} w_i w_j |m_i − m_j| + ⅓ Σ_i w_i² (s_{i+1} − s_i)`
/// over normalized edges `s`; writes `∂/∂w` into `grad` when given.
pub fn distortion_loss(weights: &[f64], s: &[f64], grad: Option<&mut Vec<f64>>) -> f64 {
    let n = weights.len();
    debug_assert_eq!(s.len(), n + 1);
    let mut pair = 0.0;
    let mut w_below = 0.0;
    let mut wm_below = 0.0;
    let mut self_term = 0.0;
    for i in 0..n {
        let m = 0.5 * (s[i] + s[i + 1]);
        pair += weights[i] * (m * w_below - wm_below);
        w_below += weights[i];
        wm_below += weights[i] * m;
        self_term += weights[i] * weights[i] * (s[i + 1] - s[i]);
    }
    if let Some(g) = grad {
        g.clear();
        let (w_total, wm_total) = (w_below, wm_below);
        let mut wb = 0.0;
        let mut wmb = 0.0;
        for i in 0..n {
            let m = 0.5 * (s[i] + s[i + 1]);
            let wa = w_total - wb - weights[i];
            let wma = wm_total - wmb - weights[i] * m;
            g.push(2.0 * (m * wb - wmb + wma - m * wa) + 2.0 / 3.0 * weights[i] * (s[i + 1] - s[i]));
            wb += weights[i];
            wmb += weights[i] * m;
        }
    }
    2.0 * pair + self_term / 3.0
}

/// Proposal mass overlapping each final bin.
pub fn proposal_bound(final_edges: &[f64], prop_edges: &[f64], prop_weights: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(prop_weights.len() + 1);
    cum.push(0.0);
    for w in prop_weights {
        cum.push(cum.last().unwrap() + w);
    }
    final_edges
        .windows(2)
        .map(|b| {
            let (lo, hi) = overlap_range(prop_edges, b[0], b[1]);
            if hi > lo {
                cum[hi] - cum[lo]
            } else {
                0.0
            }
        })
        .collect()
}

/// Indices `[lo, hi)` of bins in `edges` overlapping the open interval `(a, b)`.
fn overlap_range(edges: &[f64], a: f64, b: f64) -> (usize, usize) {
    let n = edges.len() - 1;
    // first bin whose right edge exceeds a
    let lo = edges[1..].partition_point(|&e| e <= a);
    // bins whose left edge is below b
    let hi = edges[..n].partition_point(|&e| e < b);
    (lo, hi)
}

/// Interlevel loss of one proposal level for one ray, and its gradient with
/// respect to the proposal weights. Final weights are treated as constants.
pub fn interlevel_loss(
    final_edges: &[f64],
    final_weights: &[f64],
    prop_edges: &[f64],
    prop_weights: &[f64],
    grad: Option<&mut Vec<f64>>,
) -> f64 {
    let bound = proposal_bound(final_edges, prop_edges, prop_weights);
    let n = final_weights.len() as f64;
    let mut loss = 0.0;
    let mut d_bound = vec![0.0; bound.len()];
    for j in 0..bound.len() {
        let w = final_weights[j];
        let excess = (w - bound[j]).max(0.0);
        loss += excess * excess / (w + EPS);
        d_bound[j] = -2.0 * excess / (w + EPS) / n;
    }
    if let Some(g) = grad {
        g.clear();
        g.resize(prop_weights.len(), 0.0);
        // Scatter d_bound over the overlapping ranges with a difference array.
        let mut diff = vec![0.0; prop_weights.len() + 1];
        for (j, b) in final_edges.windows(2).enumerate() {
            if d_bound[j] == 0.0 {
                continue;
            }
            let (lo, hi) = overlap_range(prop_edges, b[0], b[1]);
            if hi > lo {
                diff[lo] += d_bound[j];
                diff[hi] -= d_bound[j];
            }
        }
        let mut run = 0.0;
        for k in 0..prop_weights.len() {
            run += diff[k];
            g[k] = run;
        }
    }
    loss / n
}
