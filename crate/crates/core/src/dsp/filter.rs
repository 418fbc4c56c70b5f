//! IIR filter design and application as cascaded second-order sections.
//!
//! Butterworth designs go through the analog prototype, an LP→BP (or LP)
//! frequency transformation, and a pre-warped bilinear transform. Poles are
//! grouped into conjugate pairs so every section is a real biquad.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad, `a[0]` normalised to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z_inv * self.a[1] + z2 * self.a[2];
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
}

impl FilterCoefficients {
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / fs;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn gain_db(&self, freq_hz: f64, fs: f64) -> f64 {
        20.0 * self.response(freq_hz, fs).norm().log10()
    }

    /// Causal filtering from rest.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let zeros = vec![[0.0; 2]; self.sections.len()];
        self.apply_with_state(x, &zeros, 0.0)
    }

    /// Transposed direct form II, with every section's state initialised to
    /// `state[i] * scale`.
    fn apply_with_state(&self, x: &[f64], state: &[[f64; 2]], scale: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, zi) in self.sections.iter().zip(state) {
            let (mut z1, mut z2) = (zi[0] * scale, zi[1] * scale);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * out + z2;
                z2 = s.b[2] * input - s.a[2] * out;
                *v = out;
            }
        }
        y
    }

    /// Per-section states corresponding to a unit step that has been applied
    /// forever.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut gain = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let y = s.dc_gain();
                let z2 = s.b[2] - s.a[2] * y;
                let z1 = s.b[1] - s.a[1] * y + z2;
                let st = [z1 * gain, z2 * gain];
                gain *= y;
                st
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Notch,
    Bandpass,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub notch_freq_hz: f64,
    pub bandpass_lo_hz: f64,
    pub bandpass_hi_hz: f64,
    pub order: usize,
    pub q_factor: f64,
}

impl FilterSpec {
    /// 50 Hz mains notch, Q = 30.
    pub fn mains_notch() -> Self {
        Self {
            kind: FilterKind::Notch,
            notch_freq_hz: 50.0,
            bandpass_lo_hz: 4.0,
            bandpass_hi_hz: 45.0,
            order: 2,
            q_factor: 30.0,
        }
    }

    /// 4-45 Hz Butterworth band-pass, order 4.
    pub fn eeg_bandpass() -> Self {
        Self {
            kind: FilterKind::Bandpass,
            order: 4,
            ..Self::mains_notch()
        }
    }

    pub fn design(&self, fs: f64) -> Result<FilterCoefficients> {
        match self.kind {
            FilterKind::Notch => design_notch(self.notch_freq_hz, self.q_factor, fs),
            FilterKind::Bandpass => {
                design_bandpass(self.bandpass_lo_hz, self.bandpass_hi_hz, self.order, fs)
            }
        }
    }
}

/// Second-order IIR notch with a null at `freq_hz`.
pub fn design_notch(freq_hz: f64, q: f64, fs: f64) -> Result<FilterCoefficients> {
    let nyquist = fs / 2.0;
    if !(freq_hz > 0.0 && freq_hz < nyquist) {
        return Err(Error::FrequencyOutOfRange {
            freq_hz,
            nyquist_hz: nyquist,
        });
    }
    if !(q > 0.0) {
        return Err(Error::Config(format!("notch Q must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * freq_hz / fs;
    let alpha = w0.sin() / (2.0 * q);
    let cos = w0.cos();
    let a0 = 1.0 + alpha;
    Ok(FilterCoefficients {
        sections: vec![Biquad {
            b: [1.0 / a0, -2.0 * cos / a0, 1.0 / a0],
            a: [1.0, -2.0 * cos / a0, (1.0 - alpha) / a0],
        }],
    })
}

fn butterworth_prototype(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn prewarp(freq_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * freq_hz / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

/// Groups digital poles into real biquad denominators, one per pole with
/// positive imaginary part.
fn conjugate_denominators(poles: &[Complex64]) -> Vec<[f64; 3]> {
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 0.0).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    upper
        .into_iter()
        .map(|p| [1.0, -2.0 * p.re, p.norm_sqr()])
        .collect()
}

/// Butterworth band-pass. `order` is the low-pass prototype order, so the
/// result has `order` biquads (`2 * order` poles).
pub fn design_bandpass(lo_hz: f64, hi_hz: f64, order: usize, fs: f64) -> Result<FilterCoefficients> {
    let nyquist = fs / 2.0;
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < nyquist) {
        return Err(Error::InvalidBand {
            lo_hz,
            hi_hz,
            reason: format!("need 0 < lo < hi < {nyquist}"),
        });
    }
    if order == 0 || order % 2 != 0 {
        return Err(Error::InvalidBand {
            lo_hz,
            hi_hz,
            reason: format!("order must be even and positive, got {order}"),
        });
    }
    let w_lo = prewarp(lo_hz, fs);
    let w_hi = prewarp(hi_hz, fs);
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut poles = Vec::with_capacity(2 * order);
    for p in butterworth_prototype(order) {
        let half = p * bw / 2.0;
        let root = (half * half - w0_sq).sqrt();
        poles.push(bilinear(half + root, fs));
        poles.push(bilinear(half - root, fs));
    }

    // Unity gain at the digital image of the analog centre frequency.
    let centre_hz = fs / PI * (w0_sq.sqrt() / (2.0 * fs)).atan();
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * centre_hz / fs);
    let sections = conjugate_denominators(&poles)
        .into_iter()
        .map(|a| {
            let raw = Biquad { b: [1.0, 0.0, -1.0], a };
            let g = 1.0 / raw.response(z_inv).norm();
            Biquad {
                b: [g, 0.0, -g],
                a,
            }
        })
        .collect();
    Ok(FilterCoefficients { sections })
}

/// Butterworth low-pass with unity DC gain; `order` must be even.
pub fn design_lowpass(cutoff_hz: f64, order: usize, fs: f64) -> Result<FilterCoefficients> {
    let nyquist = fs / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::FrequencyOutOfRange {
            freq_hz: cutoff_hz,
            nyquist_hz: nyquist,
        });
    }
    if order == 0 || order % 2 != 0 {
        return Err(Error::Config(format!(
            "low-pass order must be even and positive, got {order}"
        )));
    }
    let wc = prewarp(cutoff_hz, fs);
    let poles: Vec<Complex64> = butterworth_prototype(order)
        .into_iter()
        .map(|p| bilinear(p * wc, fs))
        .collect();
    let sections = conjugate_denominators(&poles)
        .into_iter()
        .map(|a| {
            let g = (a[0] + a[1] + a[2]) / 4.0;
            Biquad {
                b: [g, 2.0 * g, g],
                a,
            }
        })
        .collect();
    Ok(FilterCoefficients { sections })
}

/// Zero-phase filtering: forward pass, then a pass over the reversed output.
///
/// Edges are padded by odd reflection and both passes start from the
/// steady-state response to the first padded sample, which suppresses
/// start-up transients.
pub fn filter_forward_backward(x: &[f64], coeffs: &FilterCoefficients) -> Result<Vec<f64>> {
    let n = x.len();
    let min = 3 * coeffs.order();
    if n <= min {
        return Err(Error::SignalTooShort { len: n, min: min + 1 });
    }
    let edge = (3 * (coeffs.order() + 1)).min(n - 1);

    let mut ext = Vec::with_capacity(n + 2 * edge);
    ext.extend((1..=edge).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=edge).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = coeffs.step_state();
    let mut y = coeffs.apply_with_state(&ext, &zi, ext[0]);
    y.reverse();
    let mut y = coeffs.apply_with_state(&y, &zi, y[0]);
    y.reverse();
    Ok(y[edge..edge + n].to_vec())
}
