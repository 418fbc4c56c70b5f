//! Symmetric FastICA (tanh contrast) for ocular/muscular artifact removal.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, Tensor};

pub const MAX_ITERATIONS: usize = 500;
pub const TOLERANCE: f64 = 1e-6;
/// Components whose |excess kurtosis| exceeds this are rejected in auto mode.
pub const AUTO_REJECT_KURTOSIS: f64 = 8.0;

const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct IcaModel {
    /// Per-channel mean removed before whitening.
    pub mean: Vec<f64>,
    /// `[components × channels]`; whitened data has identity covariance.
    pub whitener: Tensor,
    /// Orthogonal rotation `[components × components]` found by FastICA.
    pub rotation: Tensor,
    /// `rotation · whitener`, `[components × channels]`.
    pub unmixing: Tensor,
    /// Pseudo-inverse of `unmixing`, `[channels × components]`.
    pub mixing: Tensor,
    /// Excess kurtosis of each recovered component.
    pub component_scores: Vec<f64>,
    pub rejected: BTreeSet<usize>,
    pub iterations: usize,
}

impl IcaModel {
    pub fn n_components(&self) -> usize {
        self.rotation.shape()[0]
    }

    /// Component time courses `[components × samples]`.
    pub fn sources(&self, x: &Tensor) -> Result<Tensor> {
        let centered = center_with(x, &self.mean)?;
        self.unmixing.matmul(&centered)
    }

    pub fn auto_rejection(&self, threshold: f64) -> BTreeSet<usize> {
        self.component_scores
            .iter()
            .enumerate()
            .filter(|(_, k)| k.abs() > threshold)
            .map(|(i, _)| i)
            .collect()
    }
}

fn center_with(x: &Tensor, mean: &[f64]) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] != mean.len() {
        return Err(Error::shape("ica", x.shape(), &[mean.len()]));
    }
    let n = x.shape()[1];
    let mut out = x.clone();
    for (row, m) in out.data_mut().chunks_exact_mut(n).zip(mean) {
        row.iter_mut().for_each(|v| *v -= m);
    }
    Ok(out)
}

fn from_matrix(m: &DMatrix<f64>) -> Tensor {
    let data: Vec<f64> = m.transpose().as_slice().to_vec();
    Tensor::new(&[m.nrows(), m.ncols()], data).expect("non-empty matrix")
}

/// `(W Wᵀ)^{-1/2} W`
fn symmetric_decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()));
    &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w
}

fn excess_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), &v| {
        let d = (v - mean) * (v - mean);
        (a + d, b + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    m4 / (m2 * m2) - 3.0
}

/// Fits a FastICA model to `x` (`[channels × samples]`).
///
/// Deterministic for a given `seed`. Returns
/// [`Error::ConvergenceFailure`] when the rotation has not settled after
/// [`MAX_ITERATIONS`], and [`Error::RankDeficient`] when the retained
/// covariance spectrum is numerically singular.
pub fn fast_ica(x: &Tensor, n_components: usize, seed: u64) -> Result<IcaModel> {
    if x.rank() != 2 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "fast_ica expects [channels × samples]".into(),
        });
    }
    let (channels, samples) = (x.shape()[0], x.shape()[1]);
    if n_components == 0 || n_components > channels {
        return Err(Error::OutOfRange {
            op: "fast_ica n_components",
            index: n_components,
            limit: channels,
        });
    }
    if samples < 10 * channels {
        return Err(Error::SignalTooShort {
            len: samples,
            min: 10 * channels,
        });
    }

    let mean: Vec<f64> = (0..channels)
        .map(|c| x.row(c).iter().sum::<f64>() / samples as f64)
        .collect();
    let centered = center_with(x, &mean)?;

    let mut cov = vec![0.0; channels * channels];
    gemm_nt(
        channels,
        samples,
        channels,
        1.0 / samples as f64,
        centered.data(),
        centered.data(),
        0.0,
        &mut cov,
    );
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(channels, channels, &cov));
    let mut order: Vec<usize> = (0..channels).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let smallest = eig.eigenvalues[order[n_components - 1]];
    if !(top > 0.0) || smallest / top < RANK_TOLERANCE {
        return Err(Error::RankDeficient {
            ratio: if top > 0.0 { smallest / top } else { 0.0 },
        });
    }

    let mut whitener = DMatrix::zeros(n_components, channels);
    let mut dewhitener = DMatrix::zeros(channels, n_components);
    for (i, &k) in order.iter().take(n_components).enumerate() {
        let l = eig.eigenvalues[k];
        let v = eig.eigenvectors.column(k);
        for c in 0..channels {
            whitener[(i, c)] = v[c] / l.sqrt();
            dewhitener[(c, i)] = v[c] * l.sqrt();
        }
    }
    let whitener_t = from_matrix(&whitener);
    let z = whitener_t.matmul(&centered)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<f64> = (0..n_components * n_components)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut w = symmetric_decorrelate(&DMatrix::from_row_slice(n_components, n_components, &init));

    let m = n_components;
    let inv_n = 1.0 / samples as f64;
    let mut wz = vec![0.0; m * samples];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let w_flat = from_matrix(&w);
        gemm(m, m, samples, 1.0, w_flat.data(), z.data(), 0.0, &mut wz);
        let mut dg_mean = vec![0.0; m];
        for (row, d) in wz.chunks_exact_mut(samples).zip(dg_mean.iter_mut()) {
            let mut acc = 0.0;
            for v in row.iter_mut() {
                let g = v.tanh();
                acc += 1.0 - g * g;
                *v = g;
            }
            *d = acc * inv_n;
        }
        let mut gz = vec![0.0; m * m];
        gemm_nt(m, samples, m, inv_n, &wz, z.data(), 0.0, &mut gz);
        let mut next = DMatrix::from_row_slice(m, m, &gz);
        for i in 0..m {
            for j in 0..m {
                next[(i, j)] -= dg_mean[i] * w[(i, j)];
            }
        }
        let next = symmetric_decorrelate(&next);
        let change = (&next * w.transpose())
            .diagonal()
            .iter()
            .map(|d| (d.abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure { iterations });
    }

    let unmixing = &w * &whitener;
    let mixing = &dewhitener * w.transpose();
    let rotation = from_matrix(&w);
    let sources = rotation.matmul(&z)?;
    let component_scores = (0..m).map(|i| excess_kurtosis(sources.row(i))).collect();

    Ok(IcaModel {
        mean,
        whitener: whitener_t,
        rotation,
        unmixing: from_matrix(&unmixing),
        mixing: from_matrix(&mixing),
        component_scores,
        rejected: BTreeSet::new(),
        iterations,
    })
}

/// Reconstructs `x` from every component except `rejected`.
pub fn remove_components(x: &Tensor, model: &IcaModel, rejected: &BTreeSet<usize>) -> Result<Tensor> {
    let m = model.n_components();
    if let Some(&bad) = rejected.iter().find(|&&i| i >= m) {
        return Err(Error::OutOfRange {
            op: "remove_components",
            index: bad,
            limit: m,
        });
    }
    let mut sources = model.sources(x)?;
    let samples = sources.shape()[1];
    for &i in rejected {
        sources.data_mut()[i * samples..(i + 1) * samples].fill(0.0);
    }
    let mut out = model.mixing.matmul(&sources)?;
    for (row, mu) in out.data_mut().chunks_exact_mut(samples).zip(&model.mean) {
        row.iter_mut().for_each(|v| *v += mu);
    }
    Ok(out)
}
