//! Minimal fully-connected network with tanh hidden units, sparse inputs and
//! an Adam optimizer over a flat parameter vector.
//!
//! A network without hidden layers on a one-hot input is a lookup table of
//! logits, which is how the tabular policy and critic backends are built.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Sparse input vector as `(index, value)` pairs.
pub type SparseInput = Vec<(usize, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

pub struct Trace {
    hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// Xavier-uniform weights and zero biases. Networks without hidden layers
    /// start at zero.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = if hidden.is_empty() { 0.0 } else { (6.0 / (fan_in + fan_out) as f64).sqrt() };
            params.extend((0..fan_in * fan_out).map(|_| if limit > 0.0 { rng.gen_range(-limit..limit) } else { 0.0 }));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self { sizes, params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.sizes.len());
        let mut acc = 0;
        for w in self.sizes.windows(2) {
            offs.push(acc);
            acc += w[0] * w[1] + w[1];
        }
        offs
    }

    pub fn forward_trace(&self, x: &[(usize, f64)]) -> Trace {
        let offs = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let mut hidden = Vec::with_capacity(n_layers - 1);
        let mut output = Vec::new();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offs[l]..offs[l] + fan_in * fan_out];
            let b = &self.params[offs[l] + fan_in * fan_out..offs[l] + fan_in * fan_out + fan_out];
            let mut z = b.to_vec();
            if l == 0 {
                for &(j, v) in x {
                    debug_assert!(j < fan_in);
                    for (k, zk) in z.iter_mut().enumerate() {
                        *zk += w[k * fan_in + j] * v;
                    }
                }
            } else {
                let h: &Vec<f64> = &hidden[l - 1];
                for (k, zk) in z.iter_mut().enumerate() {
                    let row = &w[k * fan_in..(k + 1) * fan_in];
                    *zk += row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
                hidden.push(z);
            } else {
                output = z;
            }
        }
        Trace { hidden, output }
    }

    pub fn forward(&self, x: &[(usize, f64)]) -> Vec<f64> {
        self.forward_trace(x).output
    }

    /// Accumulate d(loss)/d(params) into `grad` given d(loss)/d(output).
    pub fn backward(&self, x: &[(usize, f64)], trace: &Trace, d_out: &[f64], grad: &mut [f64]) {
        let offs = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = offs[l];
            let b_off = w_off + fan_in * fan_out;
            for k in 0..fan_out {
                grad[b_off + k] += delta[k];
            }
            if l == 0 {
                for &(j, v) in x {
                    for (k, dk) in delta.iter().enumerate() {
                        grad[w_off + k * fan_in + j] += dk * v;
                    }
                }
            } else {
                let h = &trace.hidden[l - 1];
                let mut d_in = vec![0.0; fan_in];
                for (k, &dk) in delta.iter().enumerate() {
                    if dk == 0.0 {
                        continue;
                    }
                    let row = w_off + k * fan_in;
                    for j in 0..fan_in {
                        grad[row + j] += dk * h[j];
                        d_in[j] += self.params[row + j] * dk;
                    }
                }
                delta = d_in.iter().zip(h).map(|(d, hj)| d * (1.0 - hj * hj)).collect();
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps);
        }
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Concatenated one-hot encoding of several categorical ids.
pub fn one_hot_blocks(ids: &[usize], sizes: &[usize]) -> SparseInput {
    let mut off = 0;
    let mut out = Vec::with_capacity(ids.len());
    for (&id, &size) in ids.iter().zip(sizes) {
        out.push((off + id, 1.0));
        off += size;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn loss(net: &Mlp, x: &[(usize, f64)], target: &[f64]) -> f64 {
        net.forward(x).iter().zip(target).map(|(o, t)| 0.5 * (o - t).powi(2)).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(5, &[4, 3], 2, &mut rng);
        let x = vec![(1, 1.0), (4, -0.5)];
        let target = [0.3, -0.7];
        let trace = net.forward_trace(&x);
        let d_out: Vec<f64> = trace.output.iter().zip(&target).map(|(o, t)| o - t).collect();
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&x, &trace, &d_out, &mut grad);
        let h = 1e-6;
        for i in 0..net.n_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (loss(&plus, &x, &target) - loss(&minus, &x, &target)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn adam_fits_a_table() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(3, &[], 1, &mut rng);
        let mut opt = Adam::new(net.n_params(), 0.05);
        let targets = [1.0, -2.0, 0.5];
        for _ in 0..2000 {
            let mut grad = vec![0.0; net.n_params()];
            for (j, &t) in targets.iter().enumerate() {
                let x = vec![(j, 1.0)];
                let tr = net.forward_trace(&x);
                net.backward(&x, &tr, &[tr.output[0] - t], &mut grad);
            }
            opt.step(net.params_mut(), &grad);
        }
        for (j, &t) in targets.iter().enumerate() {
            assert!((net.forward(&[(j, 1.0)])[0] - t).abs() < 1e-3);
        }
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
    }
}
