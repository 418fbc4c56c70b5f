//! Channel × band × frame feature cubes built from differential entropy and
//! Welch PSD, and their split into fixed-length classifier segments.

pub mod de;
pub mod welch;

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use de::differential_entropy;
pub use welch::{band_average, welch_psd, Spectrum, WelchConfig, WelchEstimator};

use crate::dsp::{design_bandpass, filter_forward_backward, RawRecording};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Band-pass order used to isolate each band before computing DE.
pub const DE_BAND_ORDER: usize = 4;
/// Frames per classifier segment.
pub const SEGMENT_FRAMES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

/// Ordered frequency bands; the band axis index of a cube follows this order.
#[derive(Clone, Debug, PartialEq)]
pub struct BandTable {
    bands: Vec<Band>,
}

impl Default for BandTable {
    fn default() -> Self {
        let b = |name: &str, lo_hz, hi_hz| Band {
            name: name.into(),
            lo_hz,
            hi_hz,
        };
        Self {
            bands: vec![
                b("theta", 4.0, 7.0),
                b("alpha", 8.0, 10.0),
                b("slow_alpha", 8.0, 13.0),
                b("beta", 14.0, 29.0),
                b("gamma", 30.0, 45.0),
            ],
        }
    }
}

impl BandTable {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Config("band table is empty".into()));
        }
        if let Some(b) = bands.iter().find(|b| !(b.lo_hz < b.hi_hz)) {
            return Err(Error::InvalidBand {
                lo_hz: b.lo_hz,
                hi_hz: b.hi_hz,
                reason: "lo must be below hi".into(),
            });
        }
        Ok(Self { bands })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }
}

/// Sliding-window layout of a trial: `frames_per_trial` windows of
/// `window_s`, `hop_s` apart. The tail is reflect-padded when the last
/// windows overrun the signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub window_s: f64,
    pub hop_s: f64,
    pub frames_per_trial: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            window_s: 2.0,
            hop_s: 1.0,
            frames_per_trial: 60,
        }
    }
}

fn samples_of(seconds: f64, fs: f64, what: &str) -> Result<usize> {
    let n = seconds * fs;
    if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{what} of {seconds} s is not a whole number of samples at {fs} Hz"
        )));
    }
    Ok(n.round() as usize)
}

impl FrameSpec {
    pub fn window_len(&self, fs: f64) -> Result<usize> {
        let n = samples_of(self.window_s, fs, "window")?;
        if n % 2 != 0 {
            return Err(Error::Config(format!("window length {n} must be even")));
        }
        Ok(n)
    }

    pub fn hop_len(&self, fs: f64) -> Result<usize> {
        samples_of(self.hop_s, fs, "hop")
    }

    /// Returns the (possibly padded) signal and the start offset of every
    /// frame.
    pub fn layout<'a>(&self, x: &'a [f64], fs: f64) -> Result<(Cow<'a, [f64]>, Vec<usize>)> {
        let win = self.window_len(fs)?;
        let hop = self.hop_len(fs)?;
        if self.frames_per_trial == 0 {
            return Err(Error::Config("frames_per_trial must be >= 1".into()));
        }
        let required = (self.frames_per_trial - 1) * hop + win;
        let n = x.len();
        let signal = if n >= required {
            Cow::Borrowed(x)
        } else {
            let pad = required - n;
            if pad > win || pad >= n {
                return Err(Error::SignalTooShort {
                    len: n,
                    min: required - win,
                });
            }
            let mut v = x.to_vec();
            v.extend((0..pad).map(|i| x[n - 2 - i]));
            Cow::Owned(v)
        };
        let starts = (0..self.frames_per_trial).map(|f| f * hop).collect();
        Ok((signal, starts))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    De,
    Psd,
    /// Element-wise DE + PSD.
    Sum,
    /// Mutual-cross-attention fusion of DE and PSD.
    Fused,
}

/// `[channels × bands × frames]` feature tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCube {
    pub kind: FeatureKind,
    pub values: Tensor,
}

impl FeatureCube {
    pub fn new(kind: FeatureKind, values: Tensor) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::InvalidShape {
                shape: values.shape().to_vec(),
                reason: "feature cube must be [channels × bands × frames]".into(),
            });
        }
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("{kind:?} cube contains non-finite values")));
        }
        if kind == FeatureKind::Psd && values.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Format("PSD cube contains negative values".into()));
        }
        Ok(Self { kind, values })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn bands(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[2]
    }

    /// The `[channels × frames]` slice for band `b`.
    pub fn band(&self, b: usize) -> Tensor {
        let (c, nb, t) = (self.channels(), self.bands(), self.frames());
        assert!(b < nb, "band {b} out of range {nb}");
        let mut data = Vec::with_capacity(c * t);
        for ch in 0..c {
            let start = (ch * nb + b) * t;
            data.extend_from_slice(&self.values.data()[start..start + t]);
        }
        Tensor::new(&[c, t], data).expect("non-empty band")
    }

    /// Inverse of [`FeatureCube::band`] over all bands.
    pub fn from_bands(kind: FeatureKind, bands: &[Tensor]) -> Result<Self> {
        let first = bands.first().ok_or(Error::EmptyDataset)?;
        let (c, t) = (first.shape()[0], first.shape()[1]);
        if let Some(bad) = bands.iter().find(|b| b.shape() != first.shape()) {
            return Err(Error::shape("from_bands", first.shape(), bad.shape()));
        }
        let nb = bands.len();
        let mut data = vec![0.0; c * nb * t];
        for (b, m) in bands.iter().enumerate() {
            for ch in 0..c {
                let dst = (ch * nb + b) * t;
                data[dst..dst + t].copy_from_slice(m.row(ch));
            }
        }
        Self::new(kind, Tensor::new(&[c, nb, t], data)?)
    }

    /// Whole-cube standardisation to zero mean and unit variance.
    pub fn zscored(&self) -> FeatureCube {
        let n = self.values.len() as f64;
        let mean = self.values.sum() / n;
        let var = self.values.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        FeatureCube {
            kind: self.kind,
            values: self.values.map(|v| (v - mean) / sd),
        }
    }
}

/// Builds a DE or PSD cube from a preprocessed recording.
pub fn extract_cube(
    rec: &RawRecording,
    kind: FeatureKind,
    bands: &BandTable,
    frames: &FrameSpec,
) -> Result<FeatureCube> {
    let fs = rec.sample_rate_hz;
    let nb = bands.len();
    let nf = frames.frames_per_trial;
    let win = frames.window_len(fs)?;

    let rows: Vec<Vec<f64>> = match kind {
        FeatureKind::De => {
            let filters = bands
                .bands()
                .iter()
                .map(|b| design_bandpass(b.lo_hz, b.hi_hz, DE_BAND_ORDER, fs))
                .collect::<Result<Vec<_>>>()?;
            (0..rec.channels())
                .into_par_iter()
                .map(|c| {
                    let mut row = Vec::with_capacity(nb * nf);
                    for f in &filters {
                        let filtered = filter_forward_backward(rec.channel(c), f)?;
                        let (signal, starts) = frames.layout(&filtered, fs)?;
                        for s in starts {
                            row.push(differential_entropy(&signal[s..s + win])?);
                        }
                    }
                    Ok(row)
                })
                .collect::<Result<_>>()?
        }
        FeatureKind::Psd => {
            let estimator = WelchEstimator::new(WelchConfig::half_overlap(win))?;
            (0..rec.channels())
                .into_par_iter()
                .map(|c| {
                    let (signal, starts) = frames.layout(rec.channel(c), fs)?;
                    let mut per_frame = Vec::with_capacity(nf);
                    for s in starts {
                        let spec = estimator.estimate(&signal[s..s + win], fs)?;
                        let vals = bands
                            .bands()
                            .iter()
                            .map(|b| band_average(&spec, b.lo_hz, b.hi_hz))
                            .collect::<Result<Vec<_>>>()?;
                        per_frame.push(vals);
                    }
                    let mut row = vec![0.0; nb * nf];
                    for (f, vals) in per_frame.iter().enumerate() {
                        for (b, v) in vals.iter().enumerate() {
                            row[b * nf + f] = *v;
                        }
                    }
                    Ok(row)
                })
                .collect::<Result<_>>()?
        }
        other => {
            return Err(Error::KindMismatch(format!(
                "extract_cube produces DE or PSD cubes, not {other:?}"
            )))
        }
    };
    FeatureCube::new(kind, Tensor::new(&[rec.channels(), nb, nf], rows.concat())?)
}

/// Splits a cube into consecutive, non-overlapping `[channels × bands ×
/// frames_per_segment]` blocks.
pub fn segment_cube(cube: &FeatureCube, frames_per_segment: usize) -> Result<Vec<Tensor>> {
    let t = cube.frames();
    if frames_per_segment == 0 || t % frames_per_segment != 0 {
        return Err(Error::InvalidShape {
            shape: cube.values.shape().to_vec(),
            reason: format!("{t} frames do not split into blocks of {frames_per_segment}"),
        });
    }
    (0..t / frames_per_segment)
        .map(|i| {
            cube.values
                .slice_time(i * frames_per_segment, (i + 1) * frames_per_segment)
        })
        .collect()
}

pub fn concat_segments(kind: FeatureKind, segments: &[Tensor]) -> Result<FeatureCube> {
    FeatureCube::new(kind, Tensor::concat_time(segments)?)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn recording(channels: usize, f: impl Fn(usize, usize) -> f64) -> RawRecording {
        let n = 60 * 128;
        let data = (0..channels).flat_map(|c| (0..n).map(move |i| (c, i))).map(|(c, i)| f(c, i)).collect();
        RawRecording::new(128.0, Tensor::new(&[channels, n], data).unwrap()).unwrap()
    }

    #[test]
    fn default_bands_follow_table_order() {
        let t = BandTable::default();
        let names: Vec<_> = t.bands().iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["theta", "alpha", "slow_alpha", "beta", "gamma"]);
        assert_eq!(t.bands()[2].lo_hz, 8.0);
        assert_eq!(t.bands()[2].hi_hz, 13.0);
        assert!(BandTable::new(vec![Band { name: "x".into(), lo_hz: 5.0, hi_hz: 5.0 }]).is_err());
    }

    #[test]
    fn framing_a_minute_pads_one_second() {
        let x: Vec<f64> = (0..7680).map(|i| i as f64).collect();
        let (signal, starts) = FrameSpec::default().layout(&x, 128.0).unwrap();
        assert_eq!(starts.len(), 60);
        assert_eq!(signal.len(), 7680 + 128);
        assert_eq!(signal[7680], 7678.0);
        assert_eq!(*starts.last().unwrap() + 256, signal.len());
        assert!(FrameSpec::default().layout(&x[..7000], 128.0).is_err());
        let odd = FrameSpec { window_s: 2.0, hop_s: 1.0, frames_per_trial: 60 };
        assert!(odd.window_len(127.5).is_err());
    }

    #[test]
    fn cube_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise: Vec<f64> = (0..32 * 7680).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rec = recording(32, |c, i| noise[c * 7680 + i]);
        for kind in [FeatureKind::De, FeatureKind::Psd] {
            let cube = extract_cube(&rec, kind, &BandTable::default(), &FrameSpec::default()).unwrap();
            assert_eq!(cube.values.shape(), &[32, 5, 60]);
        }
        assert!(extract_cube(&rec, FeatureKind::Fused, &BandTable::default(), &FrameSpec::default()).is_err());
    }

    #[test]
    fn alpha_tone_peaks_in_alpha_band() {
        let rec = recording(4, |c, i| (2.0 * PI * 9.0 * i as f64 / 128.0 + c as f64).sin());
        let cube = extract_cube(&rec, FeatureKind::Psd, &BandTable::default(), &FrameSpec::default()).unwrap();
        for c in 0..4 {
            for f in 0..60 {
                let best = (0..5)
                    .max_by(|&a, &b| cube.values.get(&[c, a, f]).total_cmp(&cube.values.get(&[c, b, f])))
                    .unwrap();
                assert_eq!(best, 1, "channel {c} frame {f}");
            }
        }
    }

    #[test]
    fn stationary_noise_gives_stable_de() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..2 * 7680).map(|_| 20.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let rec = recording(2, |c, i| noise[c * 7680 + i]);
        let cube = extract_cube(&rec, FeatureKind::De, &BandTable::default(), &FrameSpec::default()).unwrap();
        for c in 0..2 {
            for b in 0..5 {
                let row: Vec<f64> = (0..60).map(|f| cube.values.get(&[c, b, f])).collect();
                let mean = row.iter().sum::<f64>() / 60.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
                assert!(var <= 0.05 * mean.abs(), "band {b}: var {var} mean {mean}");
            }
        }
    }

    #[test]
    fn scaling_shifts_de_and_scales_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise: Vec<f64> = (0..7680).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = recording(1, |_, i| noise[i]);
        let b = recording(1, |_, i| 3.0 * noise[i]);
        let (bt, fr) = (BandTable::default(), FrameSpec::default());
        let de_a = extract_cube(&a, FeatureKind::De, &bt, &fr).unwrap();
        let de_b = extract_cube(&b, FeatureKind::De, &bt, &fr).unwrap();
        for (x, y) in de_a.values.data().iter().zip(de_b.values.data()) {
            assert!((y - x - 3f64.ln()).abs() < 1e-9);
        }
        let p_a = extract_cube(&a, FeatureKind::Psd, &bt, &fr).unwrap();
        let p_b = extract_cube(&b, FeatureKind::Psd, &bt, &fr).unwrap();
        for (x, y) in p_a.values.data().iter().zip(p_b.values.data()) {
            assert!((y - 9.0 * x).abs() <= 1e-9 * y);
        }
    }

    #[test]
    fn constant_channel_is_degenerate_for_de() {
        let rec = recording(1, |_, _| 2.0);
        assert!(matches!(
            extract_cube(&rec, FeatureKind::De, &BandTable::default(), &FrameSpec::default()),
            Err(Error::DegenerateWindow)
        ));
    }

    #[test]
    fn segmentation_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..32 * 5 * 60).map(|_| StandardNormal.sample(&mut rng)).collect();
        let cube = FeatureCube::new(FeatureKind::De, Tensor::new(&[32, 5, 60], data).unwrap()).unwrap();
        let segs = segment_cube(&cube, SEGMENT_FRAMES).unwrap();
        assert_eq!(segs.len(), 20);
        assert!(segs.iter().all(|s| s.shape() == [32, 5, 3]));
        for c in 0..32 {
            for b in 0..5 {
                for f in 0..3 {
                    assert_eq!(segs[0].get(&[c, b, f]), cube.values.get(&[c, b, f]));
                    assert_eq!(segs[7].get(&[c, b, f]), cube.values.get(&[c, b, 21 + f]));
                }
            }
        }
        assert_eq!(concat_segments(FeatureKind::De, &segs).unwrap(), cube);
        assert!(segment_cube(&cube, 7).is_err());
    }

    #[test]
    fn band_slices_round_trip() {
        let data = (0..3 * 5 * 4).map(|i| i as f64).collect();
        let cube = FeatureCube::new(FeatureKind::Psd, Tensor::new(&[3, 5, 4], data).unwrap()).unwrap();
        let bands: Vec<_> = (0..5).map(|b| cube.band(b)).collect();
        assert_eq!(bands[2].row(1), &[28.0, 29.0, 30.0, 31.0]);
        assert_eq!(FeatureCube::from_bands(FeatureKind::Psd, &bands).unwrap(), cube);
    }

    #[test]
    fn psd_cube_rejects_negative_values() {
        assert!(FeatureCube::new(FeatureKind::Psd, Tensor::filled(&[1, 1, 1], -1.0)).is_err());
        assert!(FeatureCube::new(FeatureKind::De, Tensor::filled(&[1, 1, 1], -1.0)).is_ok());
    }
}
