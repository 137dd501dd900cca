//! Small fully connected network over a flat parameter slice.
//!
//! Layout per layer: weights `out × in` (row-major) followed by `out` biases.
//! Hidden layers use ReLU; the output layer is linear.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2);
        Self { dims }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Total length of the activation record written by [`Mlp::forward`].
    pub fn activation_len(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Kaiming-uniform weights, zero biases.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let mut off = 0;
        for w in self.dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            off += fan_in * fan_out;
            params[off..off + fan_out].fill(0.0);
            off += fan_out;
        }
    }

    /// Runs the network on `acts[..input_dim]`, writing every layer's output
    /// after it. Returns the offset of the (linear) output.
    pub fn forward(&self, params: &[f64], acts: &mut [f64]) -> usize {
        let mut p_off = 0;
        let mut a_off = 0;
        let n_layers = self.dims.len() - 1;
        for (layer, w) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let (head, tail) = acts.split_at_mut(a_off + n_in);
            let input = &head[a_off..];
            let weights = &params[p_off..p_off + n_in * n_out];
            let bias = &params[p_off + n_in * n_out..p_off + n_in * n_out + n_out];
            let relu = layer + 1 < n_layers;
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut s = bias[o];
                for (a, b) in row.iter().zip(input) {
                    s += a * b;
                }
                tail[o] = if relu { s.max(0.0) } else { s };
            }
            p_off += n_in * n_out + n_out;
            a_off += n_in;
        }
        a_off
    }

    /// Backpropagates `grad_out` through the recorded activations.
    ///
    /// `scratch` must hold at least `2 · max(dims)` values. When `grad_input`
    /// is given it receives `∂L/∂input`.
    pub fn backward(
        &self,
        params: &[f64],
        acts: &[f64],
        grad_out: &[f64],
        grads: &mut [f64],
        scratch: &mut Vec<f64>,
        grad_input: Option<&mut [f64]>,
    ) {
        let width = *self.dims.iter().max().unwrap();
        scratch.clear();
        scratch.resize(2 * width, 0.0);
        let (cur, next) = scratch.split_at_mut(width);
        let out_dim = self.output_dim();
        cur[..out_dim].copy_from_slice(&grad_out[..out_dim]);

        let n_layers = self.dims.len() - 1;
        let mut p_end = self.num_params();
        let mut a_end = self.activation_len();
        let need_input = grad_input.is_some();
        let mut cur = cur;
        let mut next = next;
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            let p_off = p_end - (n_in * n_out + n_out);
            let out_off = a_end - n_out;
            let in_off = out_off - n_in;
            // ReLU gate on hidden outputs.
            if layer + 1 < n_layers {
                for o in 0..n_out {
                    if acts[out_off + o] <= 0.0 {
                        cur[o] = 0.0;
                    }
                }
            }
            let input = &acts[in_off..out_off];
            let (gw, gb) = grads[p_off..p_off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let g = cur[o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += g * x;
                }
            }
            if layer > 0 || need_input {
                let weights = &params[p_off..p_off + n_in * n_out];
                next[..n_in].fill(0.0);
                for o in 0..n_out {
                    let g = cur[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    for (dst, w) in next[..n_in].iter_mut().zip(row) {
                        *dst += g * w;
                    }
                }
                std::mem::swap(&mut cur, &mut next);
            }
            p_end = p_off;
            a_end = out_off;
        }
        if let Some(gi) = grad_input {
            gi[..self.dims[0]].copy_from_slice(&cur[..self.dims[0]]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mlp = Mlp::new(vec![5, 7, 6, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = vec![0.0; mlp.num_params()];
        mlp.init(&mut params, &mut rng);
        for b in params.iter_mut() {
            *b += rng.gen_range(-0.1..0.1);
        }
        let input: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gout = [0.3, -1.2, 0.7];
        let loss = |p: &[f64], x: &[f64]| {
            let mut acts = vec![0.0; mlp.activation_len()];
            acts[..5].copy_from_slice(x);
            let o = mlp.forward(p, &mut acts);
            (0..3).map(|i| acts[o + i] * gout[i]).sum::<f64>()
        };
        let mut acts = vec![0.0; mlp.activation_len()];
        acts[..5].copy_from_slice(&input);
        mlp.forward(&params, &mut acts);
        let mut grads = vec![0.0; params.len()];
        let mut gin = vec![0.0; 5];
        let mut scratch = vec![];
        mlp.backward(&params, &acts, &gout, &mut grads, &mut scratch, Some(&mut gin));
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let lp = loss(&p, &input);
            p[i] -= 2.0 * h;
            let lm = loss(&p, &input);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}");
        }
        for i in 0..5 {
            let mut x = input.clone();
            x[i] += h;
            let lp = loss(&params, &x);
            x[i] -= 2.0 * h;
            let lm = loss(&params, &x);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gin[i]).abs() < 1e-6 * (1.0 + fd.abs()), "input {i}");
        }
    }
}
