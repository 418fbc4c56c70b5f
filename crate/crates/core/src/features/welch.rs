//! Welch power spectral density: Hann-windowed periodograms averaged over
//! overlapping segments, one-sided and density-scaled.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap: usize,
    pub nfft: usize,
}

impl Default for WelchConfig {
    /// 2 s segments at 128 Hz, 50% overlap, 0.5 Hz resolution.
    fn default() -> Self {
        Self::half_overlap(256)
    }
}

impl WelchConfig {
    pub fn half_overlap(segment_len: usize) -> Self {
        Self {
            segment_len,
            overlap: segment_len / 2,
            nfft: segment_len,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.segment_len == 0 || self.overlap >= self.segment_len || self.nfft < self.segment_len {
            return Err(Error::Config(format!("invalid Welch configuration {self:?}")));
        }
        Ok(())
    }

    /// Periodic Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.segment_len as f64;
        (0..self.segment_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }

    pub fn segments_for(&self, len: usize) -> usize {
        if len < self.segment_len {
            0
        } else {
            (len - self.segment_len) / (self.segment_len - self.overlap) + 1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub sample_rate_hz: f64,
    pub nfft: usize,
    /// One-sided PSD, `nfft / 2 + 1` bins.
    pub values: Vec<f64>,
    /// Number of averaged segments.
    pub segments: usize,
}

impl Spectrum {
    pub fn resolution_hz(&self) -> f64 {
        self.sample_rate_hz / self.nfft as f64
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.resolution_hz()
    }

    /// Σ P(f)·Δf, the total power.
    pub fn integrated_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.resolution_hz()
    }

    pub fn peak_frequency(&self) -> f64 {
        let (k, _) = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        self.frequency(k)
    }
}

/// Reusable Welch estimator holding the FFT plan and window.
#[derive(Clone)]
pub struct WelchEstimator {
    cfg: WelchConfig,
    window: Vec<f64>,
    /// Σ w[n]²
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl WelchEstimator {
    pub fn new(cfg: WelchConfig) -> Result<Self> {
        cfg.validate()?;
        let window = cfg.window();
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(cfg.nfft);
        Ok(Self {
            cfg,
            window,
            window_power,
            fft,
        })
    }

    pub fn config(&self) -> &WelchConfig {
        &self.cfg
    }

    pub fn window_power(&self) -> f64 {
        self.window_power
    }

    pub fn estimate(&self, x: &[f64], fs: f64) -> Result<Spectrum> {
        let WelchConfig {
            segment_len,
            overlap,
            nfft,
        } = self.cfg;
        let k = self.cfg.segments_for(x.len());
        if k == 0 {
            return Err(Error::SignalTooShort {
                len: x.len(),
                min: segment_len,
            });
        }
        let bins = nfft / 2 + 1;
        let mut acc = vec![0.0; bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        let step = segment_len - overlap;
        for seg in 0..k {
            let start = seg * step;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < segment_len {
                    Complex64::new(x[start + i] * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
        }
        let scale = 1.0 / (fs * self.window_power * k as f64);
        let last = if nfft % 2 == 0 { bins - 1 } else { bins };
        for (bin, v) in acc.iter_mut().enumerate() {
            *v *= scale;
            if bin != 0 && bin < last {
                *v *= 2.0;
            }
        }
        Ok(Spectrum {
            sample_rate_hz: fs,
            nfft,
            values: acc,
            segments: k,
        })
    }
}

pub fn welch_psd(x: &[f64], fs: f64, cfg: &WelchConfig) -> Result<Spectrum> {
    WelchEstimator::new(*cfg)?.estimate(x, fs)
}

/// Mean PSD over bins whose centre frequency lies in `[lo_hz, hi_hz]`.
pub fn band_average(spectrum: &Spectrum, lo_hz: f64, hi_hz: f64) -> Result<f64> {
    let nyquist = spectrum.sample_rate_hz / 2.0;
    if !(lo_hz >= 0.0 && lo_hz <= hi_hz && hi_hz <= nyquist) {
        return Err(Error::InvalidBand {
            lo_hz,
            hi_hz,
            reason: format!("must lie within [0, {nyquist}]"),
        });
    }
    let tol = 1e-9 * spectrum.resolution_hz();
    let (sum, count) = spectrum
        .values
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = spectrum.frequency(*k);
            f >= lo_hz - tol && f <= hi_hz + tol
        })
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    if count == 0 {
        return Err(Error::EmptyBand { lo_hz, hi_hz });
    }
    Ok(sum / count as f64)
}
