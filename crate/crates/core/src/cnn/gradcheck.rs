//! Central finite-difference checks of the analytic gradients.
//!
//! Relative error is `|a − n| / max(|a|, |n|, 1e-6)`. Perturbations that
//! change a ReLU state or a pooling winner are skipped and counted.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{
    linear_backward, linear_forward, relu, relu_backward, softmax_cross_entropy, Conv3d, MaxPool3d,
};
use super::network::Network;
use crate::error::Result;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheck {
    pub fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let rel = rel_error(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = rel;
            self.worst = what();
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_error > self.max_rel_error || (self.worst.is_empty() && other.checked > 0) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` in coordinate `i` of `x`.
fn central(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + STEP;
    let up = f(x);
    x[i] = orig - STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * STEP)
}

/// Convolution with padding and stride on every axis, loss `Σ g ⊙ conv(x)`.
pub fn conv3d(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = Conv3d {
        in_channels: 2,
        out_channels: 3,
        kernel: [3, 3, 2],
        stride: [1, 2, 1],
        pad: [1, 1, 0],
    };
    let mut x = random(&mut rng, &[2, 4, 5, 3]);
    let mut w = random(&mut rng, &conv.weight_shape());
    let mut b = random(&mut rng, &[3]);
    let (y, lowered) = conv.forward(&x, w.data(), b.data())?;
    let g = random(&mut rng, y.shape());
    let grads = conv.backward(&lowered, w.data(), &g, true)?;
    let dx = grads.input.expect("requested");
    let loss = |x: &Tensor, w: &[f64], b: &[f64]| dot(conv.forward(x, w, b).expect("shape").0.data(), g.data());

    let mut out = GradCheck::default();
    for i in 0..x.len() {
        let n = {
            let (wv, bv) = (w.data().to_vec(), b.data().to_vec());
            let shape = x.shape().to_vec();
            central(x.data_mut(), i, |xs| loss(&Tensor::new(&shape, xs.to_vec()).unwrap(), &wv, &bv))
        };
        out.record(|| format!("conv input[{i}]"), dx.data()[i], n);
    }
    for i in 0..w.len() {
        let n = central(w.data_mut(), i, |ws| loss(&x, ws, b.data()));
        out.record(|| format!("conv weight[{i}]"), grads.weight[i], n);
    }
    for i in 0..b.len() {
        let n = central(b.data_mut(), i, |bs| loss(&x, w.data(), bs));
        out.record(|| format!("conv bias[{i}]"), grads.bias[i], n);
    }
    Ok(out)
}

/// Pooling with the asymmetric `(0, 1, 1)` padding, loss `Σ g ⊙ pool(x)`.
pub fn maxpool3d(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = MaxPool3d {
        kernel: [2; 3],
        stride: [2; 3],
        pad: [0, 1, 1],
    };
    let mut x = random(&mut rng, &[3, 6, 5, 3]);
    let (y, arg) = pool.forward(&x)?;
    let g = random(&mut rng, y.shape());
    let dx = pool.backward(x.shape(), &arg, &g)?;
    let mut out = GradCheck::default();
    let shape = x.shape().to_vec();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let stable = [orig + STEP, orig - STEP].iter().all(|&v| {
            let mut xp = x.clone();
            xp.data_mut()[i] = v;
            pool.forward(&xp).expect("shape").1 == arg
        });
        if !stable {
            out.skipped += 1;
            continue;
        }
        let n = central(x.data_mut(), i, |xs| {
            dot(pool.forward(&Tensor::new(&shape, xs.to_vec()).unwrap()).unwrap().0.data(), g.data())
        });
        out.record(|| format!("pool input[{i}]"), dx.data()[i], n);
    }
    Ok(out)
}

pub fn relu_layer(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = random(&mut rng, &[4, 3, 2, 2]);
    let g = random(&mut rng, x.shape());
    let dx = relu_backward(&x, &g);
    let shape = x.shape().to_vec();
    let mut out = GradCheck::default();
    for i in 0..x.len() {
        if x.data()[i].abs() <= STEP {
            out.skipped += 1;
            continue;
        }
        let n = central(x.data_mut(), i, |xs| {
            dot(relu(&Tensor::new(&shape, xs.to_vec()).unwrap()).data(), g.data())
        });
        out.record(|| format!("relu input[{i}]"), dx.data()[i], n);
    }
    Ok(out)
}

pub fn linear(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = random(&mut rng, &[17]).into_data();
    let mut w = random(&mut rng, &[3, 17]);
    let mut b = random(&mut rng, &[3]);
    let g = random(&mut rng, &[3]).into_data();
    let (dx, dw, db) = linear_backward(&x, &w, &g);
    let mut out = GradCheck::default();
    for i in 0..x.len() {
        let n = central(&mut x, i, |xs| dot(&linear_forward(xs, &w, &b).unwrap(), &g));
        out.record(|| format!("fc input[{i}]"), dx[i], n);
    }
    for i in 0..w.len() {
        let n = {
            let shape = w.shape().to_vec();
            central(w.data_mut(), i, |ws| {
                dot(&linear_forward(&x, &Tensor::new(&shape, ws.to_vec()).unwrap(), &b).unwrap(), &g)
            })
        };
        out.record(|| format!("fc weight[{i}]"), dw[i], n);
    }
    for i in 0..b.len() {
        let n = central(b.data_mut(), i, |bs| {
            dot(&linear_forward(&x, &w, &Tensor::new(&[3], bs.to_vec()).unwrap()).unwrap(), &g)
        });
        out.record(|| format!("fc bias[{i}]"), db[i], n);
    }
    Ok(out)
}

/// Gradient of the batch-mean cross-entropy with respect to the logits.
pub fn cross_entropy(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..5).map(|i| (i % 2) as u8).collect();
    let logits: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
    let (_, grads) = softmax_cross_entropy(&logits, &labels)?;
    let mut flat: Vec<f64> = logits.concat();
    let mut out = GradCheck::default();
    for i in 0..flat.len() {
        let n = central(&mut flat, i, |z| {
            let rows: Vec<Vec<f64>> = z.chunks(2).map(|c| c.to_vec()).collect();
            softmax_cross_entropy(&rows, &labels).unwrap().0
        });
        out.record(|| format!("logit[{i}]"), grads[i / 2][i % 2], n);
    }
    Ok(out)
}

/// End-to-end check of the network loss. Up to `per_tensor` randomly chosen
/// entries of every parameter tensor are perturbed.
pub fn network(net: &Network, xs: &[Tensor], labels: &[u8], per_tensor: usize, seed: u64) -> Result<GradCheck> {
    let mut net = net.clone();
    let refs: Vec<&Tensor> = xs.iter().collect();
    net.backward(&refs, labels)?;
    let analytic: Vec<Vec<f64>> = net.params.tensors.iter().map(|p| p.grad.data().to_vec()).collect();
    let base = xs
        .iter()
        .map(|x| net.activation_pattern(x))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    for t in 0..net.params.tensors.len() {
        let len = net.params.tensors[t].value.len();
        let picks = sample(&mut rng, len, per_tensor.min(len)).into_vec();
        for i in picks {
            let orig = net.params.tensors[t].value.data()[i];
            let mut losses = [0.0; 2];
            let mut kink = false;
            for (slot, v) in [orig + STEP, orig - STEP].into_iter().enumerate() {
                net.params.tensors[t].value.data_mut()[i] = v;
                for (x, pattern) in xs.iter().zip(&base) {
                    if &net.activation_pattern(x)? != pattern {
                        kink = true;
                    }
                }
                losses[slot] = net.loss(&refs, labels)?;
            }
            net.params.tensors[t].value.data_mut()[i] = orig;
            if kink {
                out.skipped += 1;
                continue;
            }
            let numeric = (losses[0] - losses[1]) / (2.0 * STEP);
            let name = &net.params.tensors[t].name;
            out.record(|| format!("{name}[{i}]"), analytic[t][i], numeric);
        }
    }
    Ok(out)
}
