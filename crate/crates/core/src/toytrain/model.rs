//! Softmax regression and small ReLU MLPs with hand-written backprop.
//!
//! Parameters live in one flat vector. Layer `l` maps `dims[l]` to
//! `dims[l + 1]` and stores its weights row-major `[out x in]` followed by
//! its bias `[out]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    SoftmaxRegression,
    Mlp { hidden: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations of one forward pass, kept for the backward pass.
struct Trace {
    /// `acts[0]` is the input batch, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    /// Softmax output `[batch x classes]`.
    probs: Vec<f64>,
}

impl Network {
    /// Uniform init in `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init<R: Rng>(spec: &ModelSpec, input_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        if let ModelSpec::Mlp { hidden } = spec {
            dims.extend(hidden);
        }
        dims.push(num_classes);
        let mut params = Vec::with_capacity(param_count(&dims));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Self { dims, params }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.dims.windows(2).take(l).map(|w| (w[0] + 1) * w[1]).sum();
        (start, start + self.dims[l] * self.dims[l + 1])
    }

    fn forward(&self, inputs: &[f64], batch: usize) -> Trace {
        let layers = self.dims.len() - 1;
        let mut acts = vec![inputs.to_vec()];
        let mut out = Vec::new();
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w_at, b_at) = self.layer_offsets(l);
            let w = &self.params[w_at..w_at + n_in * n_out];
            let b = &self.params[b_at..b_at + n_out];
            let a = &acts[l];
            out = vec![0.0; batch * n_out];
            for r in 0..batch {
                let x = &a[r * n_in..(r + 1) * n_in];
                let z = &mut out[r * n_out..(r + 1) * n_out];
                for (j, zj) in z.iter_mut().enumerate() {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    *zj = b[j] + row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
                }
            }
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                acts.push(std::mem::take(&mut out));
            }
        }
        softmax_rows(&mut out, self.num_classes());
        Trace { acts, probs: out }
    }

    /// Class probabilities, row-major `[batch x classes]`.
    pub fn predict_proba(&self, inputs: &[f64]) -> Vec<f64> {
        let batch = inputs.len() / self.dims[0];
        self.forward(inputs, batch).probs
    }

    /// Mean cross-entropy over the batch and its gradient (flat, same layout
    /// as the parameters). Weight decay is not included.
    pub fn loss_and_grad(&self, inputs: &[f64], labels: &[u32]) -> (f64, Vec<f64>) {
        let batch = labels.len();
        let c = self.num_classes();
        let trace = self.forward(inputs, batch);
        let mut loss = 0.0;
        let mut delta = trace.probs.clone();
        for (r, &y) in labels.iter().enumerate() {
            loss -= trace.probs[r * c + y as usize].max(f64::MIN_POSITIVE).ln();
            delta[r * c + y as usize] -= 1.0;
        }
        let scale = 1.0 / batch as f64;
        delta.iter_mut().for_each(|d| *d *= scale);

        let mut grad = vec![0.0; self.params.len()];
        for l in (0..self.dims.len() - 1).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w_at, b_at) = self.layer_offsets(l);
            let a = &trace.acts[l];
            {
                let (gw, gb) = grad[w_at..b_at + n_out].split_at_mut(n_in * n_out);
                for r in 0..batch {
                    let d = &delta[r * n_out..(r + 1) * n_out];
                    let x = &a[r * n_in..(r + 1) * n_in];
                    for (j, &dj) in d.iter().enumerate() {
                        gb[j] += dj;
                        if dj != 0.0 {
                            for (g, &xi) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                                *g += dj * xi;
                            }
                        }
                    }
                }
            }
            if l > 0 {
                let w = &self.params[w_at..w_at + n_in * n_out];
                let mut prev = vec![0.0; batch * n_in];
                for r in 0..batch {
                    let d = &delta[r * n_out..(r + 1) * n_out];
                    let p = &mut prev[r * n_in..(r + 1) * n_in];
                    for (j, &dj) in d.iter().enumerate() {
                        if dj != 0.0 {
                            for (pi, &wji) in p.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                                *pi += dj * wji;
                            }
                        }
                    }
                    // ReLU derivative, read off the stored activation.
                    for (pi, &ai) in p.iter_mut().zip(&a[r * n_in..(r + 1) * n_in]) {
                        if ai <= 0.0 {
                            *pi = 0.0;
                        }
                    }
                }
                delta = prev;
            }
        }
        (loss * scale, grad)
    }

    /// Mean cross-entropy without the gradient.
    pub fn loss(&self, inputs: &[f64], labels: &[u32]) -> f64 {
        let c = self.num_classes();
        let probs = self.forward(inputs, labels.len()).probs;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| -probs[r * c + y as usize].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / labels.len() as f64
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn softmax_rows(z: &mut [f64], classes: usize) {
    for row in z.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}
