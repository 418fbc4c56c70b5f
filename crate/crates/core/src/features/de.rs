use std::f64::consts::{E, PI};

use crate::error::{Error, Result};

/// Gaussian differential entropy `½·ln(2πe·σ̂²)` in nats, with σ̂² the
/// unbiased sample variance of `window`.
pub fn differential_entropy(window: &[f64]) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::DegenerateWindow);
    }
    let first = window[0];
    if window.iter().all(|&v| v == first) {
        return Err(Error::DegenerateWindow);
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DegenerateWindow);
    }
    Ok(0.5 * (2.0 * PI * E * var).ln())
}
