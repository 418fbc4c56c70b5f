//! Signal cleaning: mains notch, EEG band-pass, ICA artifact removal and
//! decimation, applied in that order.

pub mod filter;
pub mod ica;
pub mod resample;

use std::collections::BTreeSet;

use rayon::prelude::*;

pub use filter::{
    design_bandpass, design_lowpass, design_notch, filter_forward_backward, Biquad,
    FilterCoefficients, FilterKind, FilterSpec,
};
pub use ica::{fast_ica, remove_components, IcaModel, AUTO_REJECT_KURTOSIS};
pub use resample::downsample;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Multichannel recording, `samples` is `[channels × n_samples]` in µV.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub sample_rate_hz: f64,
    pub samples: Tensor,
}

impl RawRecording {
    /// Requires at least two seconds of finite samples.
    pub fn new(sample_rate_hz: f64, samples: Tensor) -> Result<Self> {
        if samples.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: samples.shape().to_vec(),
                reason: "recording must be [channels × samples]".into(),
            });
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Config(format!("sample rate {sample_rate_hz} must be positive")));
        }
        let min = (2.0 * sample_rate_hz).ceil() as usize;
        if samples.shape()[1] < min {
            return Err(Error::SignalTooShort {
                len: samples.shape()[1],
                min,
            });
        }
        if samples.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("recording contains non-finite samples".into()));
        }
        Ok(Self {
            sample_rate_hz,
            samples,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.samples.row(c)
    }

    /// Applies a zero-phase filter to every channel.
    pub fn filtered(&self, coeffs: &FilterCoefficients) -> Result<RawRecording> {
        let rows = (0..self.channels())
            .into_par_iter()
            .map(|c| filter_forward_backward(self.channel(c), coeffs))
            .collect::<Result<Vec<_>>>()?;
        Ok(RawRecording {
            sample_rate_hz: self.sample_rate_hz,
            samples: Tensor::new(self.samples.shape(), rows.concat())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IcaMode {
    Off,
    /// Reject components whose |excess kurtosis| exceeds `threshold`.
    Auto { threshold: f64, seed: u64 },
    Manual { rejected: BTreeSet<usize>, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub notch: Option<FilterSpec>,
    pub bandpass: Option<FilterSpec>,
    pub ica: IcaMode,
    pub target_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            notch: Some(FilterSpec::mains_notch()),
            bandpass: Some(FilterSpec::eeg_bandpass()),
            ica: IcaMode::Off,
            target_hz: 128.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub recording: RawRecording,
    pub ica: Option<IcaModel>,
}

/// Runs notch → band-pass → ICA → downsample.
///
/// A notch whose frequency is at or above Nyquist is skipped: data already
/// sampled at 128 Hz or below cannot carry 50 Hz mains.
pub fn preprocess(rec: &RawRecording, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let fs = rec.sample_rate_hz;
    let mut current = rec.clone();
    if let Some(spec) = cfg.notch.as_ref().filter(|s| s.notch_freq_hz < fs / 2.0) {
        current = current.filtered(&spec.design(fs)?)?;
    }
    if let Some(spec) = &cfg.bandpass {
        current = current.filtered(&spec.design(fs)?)?;
    }
    let mut ica_model = None;
    let rejected = match &cfg.ica {
        IcaMode::Off => None,
        IcaMode::Auto { threshold, seed } => {
            let model = fast_ica(&current.samples, current.channels(), *seed)?;
            let rejected = model.auto_rejection(*threshold);
            ica_model = Some(model);
            Some(rejected)
        }
        IcaMode::Manual { rejected, seed } => {
            ica_model = Some(fast_ica(&current.samples, current.channels(), *seed)?);
            Some(rejected.clone())
        }
    };
    if let (Some(model), Some(rejected)) = (ica_model.as_mut(), rejected) {
        current.samples = remove_components(&current.samples, model, &rejected)?;
        model.rejected = rejected;
    }
    let recording = downsample(&current, cfg.target_hz)?;
    Ok(Preprocessed {
        recording,
        ica: ica_model,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn recording_invariants() {
        assert!(RawRecording::new(128.0, Tensor::zeros(&[2, 255])).is_err());
        assert!(RawRecording::new(128.0, Tensor::zeros(&[2, 256])).is_ok());
        let mut t = Tensor::zeros(&[1, 300]);
        t.data_mut()[4] = f64::NAN;
        assert!(RawRecording::new(128.0, t).is_err());
    }

    #[test]
    fn chain_preserves_channels_and_yields_128_hz() {
        let fs = 512.0;
        let n = 10 * 512;
        let data: Vec<f64> = (0..3)
            .flat_map(|c| {
                (0..n).map(move |i| {
                    let t = i as f64 / fs;
                    (2.0 * PI * (10.0 + c as f64) * t).sin() + 0.5 * (2.0 * PI * 50.0 * t).sin()
                })
            })
            .collect();
        let rec = RawRecording::new(fs, Tensor::new(&[3, n], data).unwrap()).unwrap();
        let out = preprocess(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.recording.channels(), 3);
        assert_eq!(out.recording.n_samples(), 10 * 128);
        assert_eq!(out.recording.sample_rate_hz, 128.0);
        assert!(out.ica.is_none());
    }

    #[test]
    fn chain_with_manual_ica_keeps_signal_when_nothing_rejected() {
        let fs = 128.0;
        let n = 20 * 128;
        let data: Vec<f64> = (0..2)
            .flat_map(|c| {
                (0..n).map(move |i| {
                    let t = i as f64 / fs;
                    let s = (2.0 * PI * 9.0 * t).sin();
                    let saw = 2.0 * ((3.3 * t) - (3.3 * t).floor()) - 1.0;
                    if c == 0 { s + 0.4 * saw } else { 0.7 * s - saw }
                })
            })
            .collect();
        let rec = RawRecording::new(fs, Tensor::new(&[2, n], data).unwrap()).unwrap();
        let cfg = PreprocessConfig {
            notch: None,
            bandpass: None,
            ica: IcaMode::Manual {
                rejected: BTreeSet::new(),
                seed: 1,
            },
            target_hz: 128.0,
        };
        let out = preprocess(&rec, &cfg).unwrap();
        assert!(out.recording.samples.max_abs_diff(&rec.samples) < 1e-8);
        assert_eq!(out.ica.unwrap().component_scores.len(), 2);
    }
}
