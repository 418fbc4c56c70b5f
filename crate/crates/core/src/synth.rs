//! Seeded synthetic EEG-like data.
//!
//! Signals are Gaussian noise shaped in the frequency domain: a `1/f`
//! background whose θ and α bands are scaled for high-valence trials and
//! whose β and γ bands are scaled for high-arousal trials.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::container::{EegContainer, Trial};
use crate::error::{Error, Result};
use crate::features::{FeatureCube, FeatureKind};
use crate::tensor::Tensor;

pub const HIGH_RATING: f64 = 8.0;
pub const LOW_RATING: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub channels: usize,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Power factor applied to the label-carrying bands of "high" trials.
    pub class_power_gain: f64,
    /// Standard deviation of a low-class trial, in µV.
    pub amplitude_uv: f64,
    /// Log-normal spread of the fixed per-subject channel gains.
    pub channel_gain_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_subjects: 2,
            trials_per_subject: 32,
            channels: 32,
            sample_rate_hz: 128.0,
            duration_s: 60.0,
            class_power_gain: 2.0,
            amplitude_uv: 10.0,
            channel_gain_spread: 0.2,
        }
    }
}

const THETA_ALPHA: (f64, f64) = (4.0, 13.0);
const BETA_GAMMA: (f64, f64) = (14.0, 45.0);

/// Arousal alternates with the trial index, valence every second pair, so
/// both targets are balanced and independent.
pub fn planned_ratings(trial: usize) -> (f64, f64) {
    let pick = |high: bool| if high { HIGH_RATING } else { LOW_RATING };
    (pick((trial / 2) % 2 == 0), pick(trial % 2 == 0))
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.trials_per_subject == 0 || self.channels == 0 {
            return Err(Error::Config("synthetic counts must be at least 1".into()));
        }
        if !(self.sample_rate_hz > 2.0 * BETA_GAMMA.1) {
            return Err(Error::Config(format!(
                "sample rate {} Hz cannot represent the γ band",
                self.sample_rate_hz
            )));
        }
        if !(self.duration_s > 0.0 && self.class_power_gain > 0.0 && self.amplitude_uv > 0.0) {
            return Err(Error::Config("duration, gain and amplitude must be positive".into()));
        }
        if self.channel_gain_spread < 0.0 {
            return Err(Error::Config("channel gain spread must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    /// Expected power at `f_hz` before amplitude scaling.
    pub fn spectrum(&self, f_hz: f64, valence_high: bool, arousal_high: bool) -> f64 {
        let mut s = 1.0 / f_hz.max(1.0);
        if valence_high && (THETA_ALPHA.0..=THETA_ALPHA.1).contains(&f_hz) {
            s *= self.class_power_gain;
        }
        if arousal_high && (BETA_GAMMA.0..=BETA_GAMMA.1).contains(&f_hz) {
            s *= self.class_power_gain;
        }
        s
    }
}

fn shaped_noise(
    rng: &mut ChaCha8Rng,
    n: usize,
    fs: f64,
    spectrum: impl Fn(f64) -> f64,
    fft: &dyn rustfft::Fft<f64>,
) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..n.div_ceil(2) {
        let amp = (spectrum(k as f64 * fs / n as f64) / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let c = Complex64::new(re * amp, im * amp);
        buf[k] = c;
        buf[n - k] = c.conj();
    }
    fft.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Generates the full container. Every trial draws from its own RNG stream,
/// so trials are independent of generation order.
pub fn synth_container(cfg: &SynthConfig) -> Result<EegContainer> {
    cfg.validate()?;
    let n = cfg.n_samples();
    let fs = cfg.sample_rate_hz;
    let fft = FftPlanner::new().plan_fft_inverse(n);
    // variance of one low-class channel before scaling
    let template: f64 = (1..n.div_ceil(2)).map(|k| cfg.spectrum(k as f64 * fs / n as f64, false, false)).sum();
    let scale = cfg.amplitude_uv / (template * 2.0 / (n as f64 * n as f64)).sqrt();
    let gain_dist = LogNormal::new(0.0, cfg.channel_gain_spread.max(1e-12)).expect("valid spread");

    let jobs: Vec<(usize, usize)> = (0..cfg.n_subjects)
        .flat_map(|s| (0..cfg.trials_per_subject).map(move |t| (s, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(s, t)| {
            let mut subject_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            subject_rng.set_stream((s as u64) << 32 | u32::MAX as u64);
            let gains: Vec<f64> = (0..cfg.channels).map(|_| gain_dist.sample(&mut subject_rng)).collect();

            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((s as u64) << 32 | t as u64);
            let (valence, arousal) = planned_ratings(t);
            let (vh, ah) = (valence > 5.0, arousal > 5.0);
            let mut data = Vec::with_capacity(cfg.channels * n);
            for g in &gains {
                let x = shaped_noise(&mut rng, n, fs, |f| cfg.spectrum(f, vh, ah), fft.as_ref());
                data.extend(x.iter().map(|v| v * scale * g));
            }
            let samples = Tensor::new(&[cfg.channels, n], data)?;
            Trial::new(s as u32 + 1, t as u32, fs, valence, arousal, &samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EegContainer::new(trials))
}

/// Pure-tone test trial: every channel carries a sine of `freq_hz` plus a
/// little white noise.
pub fn tone_trial(freq_hz: f64, channels: usize, sample_rate_hz: f64, duration_s: f64, seed: u64) -> Result<Trial> {
    let n = (duration_s * sample_rate_hz).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    let data = (0..channels * n)
        .map(|i| {
            let t = (i % n) as f64 / sample_rate_hz;
            10.0 * (2.0 * std::f64::consts::PI * freq_hz * t).sin() + noise.sample(&mut rng)
        })
        .collect();
    Trial::new(1, 0, sample_rate_hz, 5.0, 5.0, &Tensor::new(&[channels, n], data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplementaryConfig {
    pub seed: u64,
    pub trials_per_class: usize,
    pub channels: usize,
    pub bands: usize,
    pub frames: usize,
    pub de_mean: f64,
    pub psd_mean: f64,
    pub noise: f64,
    /// Size of the planted shift.
    pub shift: f64,
}

impl Default for ComplementaryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials_per_class: 16,
            channels: 32,
            bands: 5,
            frames: 60,
            de_mean: 3.0,
            psd_mean: 4.0,
            noise: 0.3,
            shift: 1.0,
        }
    }
}

/// One trial's DE and PSD cubes with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct CubePair {
    pub de: FeatureCube,
    pub psd: FeatureCube,
    pub label: u8,
}

/// Feature cubes in which the class is visible in one feature and hidden by
/// an equal and opposite shift in the other.
///
/// For every "high" trial one random channel is shifted by `+shift` in DE and
/// `−shift` in PSD (half of the trials) or the reverse (the other half), so
/// `DE + PSD` has the same distribution in both classes.
pub fn complementary_cubes(cfg: &ComplementaryConfig) -> Result<Vec<CubePair>> {
    if cfg.trials_per_class == 0 || cfg.channels == 0 || cfg.bands == 0 || cfg.frames == 0 {
        return Err(Error::Config("complementary set dimensions must be at least 1".into()));
    }
    if cfg.psd_mean - cfg.shift - 6.0 * cfg.noise < 0.0 {
        return Err(Error::Config("psd_mean too small: PSD values could turn negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let shape = [cfg.channels, cfg.bands, cfg.frames];
    let per = cfg.bands * cfg.frames;
    let mut out = Vec::with_capacity(2 * cfg.trials_per_class);
    for i in 0..2 * cfg.trials_per_class {
        let label = (i % 2) as u8;
        let mut de: Vec<f64> = (0..cfg.channels * per).map(|_| cfg.de_mean + noise.sample(&mut rng)).collect();
        let mut psd: Vec<f64> = (0..cfg.channels * per)
            .map(|_| (cfg.psd_mean + noise.sample(&mut rng)).max(0.0))
            .collect();
        if label == 1 {
            let channel = rand::Rng::gen_range(&mut rng, 0..cfg.channels);
            let sign = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
            for k in channel * per..(channel + 1) * per {
                de[k] += sign * cfg.shift;
                psd[k] -= sign * cfg.shift;
            }
        }
        out.push(CubePair {
            de: FeatureCube::new(FeatureKind::De, Tensor::new(&shape, de)?)?,
            psd: FeatureCube::new(FeatureKind::Psd, Tensor::new(&shape, psd)?)?,
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::welch::{band_average, welch_psd, WelchConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 1,
            trials_per_subject: 8,
            channels: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shape_and_ratings() {
        let c = synth_container(&small()).unwrap();
        assert_eq!(c.trials.len(), 8);
        let t = &c.trials[0];
        assert_eq!((t.channels, t.n_samples, t.sample_rate_hz), (4, 7680, 128.0));
        let highs = c.trials.iter().filter(|t| t.arousal == HIGH_RATING).count();
        assert_eq!(highs, 4);
        assert!(c.trials.iter().all(|t| [2.0, 8.0].contains(&t.valence)));
    }

    #[test]
    fn same_seed_same_bytes() {
        let bytes = |cfg: &SynthConfig| {
            let mut b = Vec::new();
            synth_container(cfg).unwrap().write_to(&mut b).unwrap();
            b
        };
        assert_eq!(bytes(&small()), bytes(&small()));
        assert_ne!(bytes(&small()), bytes(&SynthConfig { seed: 1, ..small() }));
    }

    #[test]
    fn beta_power_ratio_matches_gain() {
        let cfg = SynthConfig {
            trials_per_subject: 16,
            ..small()
        };
        let c = synth_container(&cfg).unwrap();
        let mut sums = [0.0; 2];
        for t in &c.trials {
            let x = t.samples();
            for ch in 0..t.channels {
                let s = welch_psd(x.row(ch), 128.0, &WelchConfig::default()).unwrap();
                sums[t.label(crate::container::Target::Arousal) as usize] += band_average(&s, 14.0, 29.0).unwrap();
            }
        }
        let ratio = sums[1] / sums[0];
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn complementary_sum_hides_the_class() {
        let set = complementary_cubes(&ComplementaryConfig::default()).unwrap();
        assert_eq!(set.len(), 32);
        for pair in &set {
            let sum = pair.de.values.add(&pair.psd.values).unwrap();
            let mean = sum.sum() / sum.len() as f64;
            assert!((mean - 7.0).abs() < 0.05);
        }
        let planted = set.iter().filter(|p| p.label == 1).any(|p| {
            (0..32).any(|c| (p.de.values.get(&[c, 0, 0]) - 3.0).abs() > 0.5 + 3.0 * 0.3)
        });
        assert!(planted);
    }
}
