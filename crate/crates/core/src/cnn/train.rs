use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{Confusion, Metrics};
use super::network::{argmax, Network, NetworkSpec};
use super::optim::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Stop once an epoch's running train accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 64,
            epochs: 20,
            seed: 0,
            train_fraction: 0.8,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must lie in (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Labelled examples, each shaped like the network input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<u8>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape("dataset", &[inputs.len()], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidLabel(bad));
        }
        if let Some(first) = inputs.first() {
            if let Some(odd) = inputs.iter().find(|x| x.shape() != first.shape()) {
                return Err(Error::shape("dataset example", odd.shape(), first.shape()));
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.len() - ones, ones]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// SHA-256 over the sorted index lists.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (tag, idx) in [(b'r', &self.train), (b'e', &self.test)] {
            h.update([tag]);
            for &i in idx {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-class shuffled split; each class with at least two members lands on
/// both sides.
pub fn stratified_split(labels: &[u8], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {train_fraction} must lie in (0, 1)")));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..=1u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let mut k = (n as f64 * train_fraction).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        }
        train.extend_from_slice(&idx[..k.min(n)]);
        test.extend_from_slice(&idx[k.min(n)..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Example-weighted mean of the batch losses.
    pub loss: f64,
    /// Accuracy of the logits seen during the epoch's forward passes.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub network: Network,
    pub history: Vec<EpochMetrics>,
}

/// Mini-batch Adam on every example of `data`. Parameters are initialised
/// from `cfg.seed`; shuffling uses an independent stream of the same seed.
pub fn train(spec: NetworkSpec, data: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.class_counts().contains(&0) {
        return Err(Error::SingleClass);
    }
    let mut network = Network::new(spec, cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer, &network.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&Tensor> = batch.iter().map(|&i| &data.inputs[i]).collect();
            let ys: Vec<u8> = batch.iter().map(|&i| data.labels[i]).collect();
            let (loss, logits) = network.backward(&xs, &ys)?;
            loss_sum += loss * batch.len() as f64;
            correct += logits.iter().zip(&ys).filter(|(z, &y)| argmax(z) == y as usize).count();
            adam.step(&mut network.params);
            if !network.params.all_finite() {
                return Err(Error::NonFinite(format!("parameters after update {}", adam.steps())));
            }
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        };
        history.push(m);
        if cfg.target_train_accuracy.is_some_and(|t| m.train_accuracy >= t) {
            break;
        }
    }
    Ok(Trained { network, history })
}

pub fn predict(network: &Network, data: &Dataset) -> Result<Vec<u8>> {
    data.inputs
        .par_iter()
        .map(|x| network.predict(x))
        .collect()
}

pub fn evaluate(network: &Network, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predicted = predict(network, data)?;
    Metrics::from_confusion(Confusion::from_predictions(&predicted, &data.labels)?)
}
