//! Seeded fixtures shared by the benchmarks.

use mca_eeg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("non-empty shape")
}

/// One minute of a 10 Hz tone plus uniform noise at 128 Hz.
pub fn eeg_like_channel(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..7680)
        .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 128.0).sin() + rng.gen_range(-0.5..0.5))
        .collect()
}

/// `n` random segments of shape `[1, 32, 5, 3]` with alternating labels.
pub fn segments(n: usize, seed: u64) -> (Vec<Tensor>, Vec<u8>) {
    let xs = (0..n).map(|i| uniform(&[1, 32, 5, 3], seed + i as u64)).collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    (xs, labels)
}
