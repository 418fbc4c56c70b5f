//! The EEGC trial container.
//!
//! All fields little-endian.
//!
//! ```text
//! magic        4 bytes "EEGC"
//! version      u16 (= 1)
//! n_trials     u32
//! per trial:
//!   subject        u32
//!   trial          u32
//!   channels       u32
//!   sample_rate_hz f64
//!   n_samples      u32
//!   valence        f64   rating in [1, 9]
//!   arousal        f64   rating in [1, 9]
//!   payload        channels × n_samples f32, row-major (channel-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::RawRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EEGC_MAGIC: &[u8; 4] = b"EEGC";
pub const EEGC_VERSION: u16 = 1;
pub const RATING_RANGE: (f64, f64) = (1.0, 9.0);
/// Ratings strictly above this are the "high" class.
pub const HIGH_THRESHOLD: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Valence,
    Arousal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub subject: u32,
    pub trial: u32,
    pub channels: usize,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    pub valence: f64,
    pub arousal: f64,
    /// Channel-major samples as stored on disk.
    pub payload: Vec<f32>,
}

impl Trial {
    pub fn new(
        subject: u32,
        trial: u32,
        sample_rate_hz: f64,
        valence: f64,
        arousal: f64,
        samples: &Tensor,
    ) -> Result<Self> {
        if samples.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: samples.shape().to_vec(),
                reason: "trial samples must be [channels, samples]".into(),
            });
        }
        let t = Trial {
            subject,
            trial,
            channels: samples.shape()[0],
            sample_rate_hz,
            n_samples: samples.shape()[1],
            valence,
            arousal,
            payload: samples.data().iter().map(|&v| v as f32).collect(),
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        for (name, r) in [("valence", self.valence), ("arousal", self.arousal)] {
            if !(RATING_RANGE.0..=RATING_RANGE.1).contains(&r) {
                return Err(Error::Format(format!(
                    "trial {}/{}: {name} rating {r} outside [1, 9]",
                    self.subject, self.trial
                )));
            }
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Format(format!(
                "trial {}/{}: sample rate {} is not positive",
                self.subject, self.trial, self.sample_rate_hz
            )));
        }
        if self.payload.len() != self.channels * self.n_samples {
            return Err(Error::Format(format!(
                "trial {}/{}: payload has {} values, expected {}",
                self.subject,
                self.trial,
                self.payload.len(),
                self.channels * self.n_samples
            )));
        }
        Ok(())
    }

    pub fn rating(&self, target: Target) -> f64 {
        match target {
            Target::Valence => self.valence,
            Target::Arousal => self.arousal,
        }
    }

    /// 1 for ratings above 5.0, else 0.
    pub fn label(&self, target: Target) -> u8 {
        (self.rating(target) > HIGH_THRESHOLD) as u8
    }

    pub fn samples(&self) -> Tensor {
        Tensor::new(
            &[self.channels, self.n_samples],
            self.payload.iter().map(|&v| v as f64).collect(),
        )
        .expect("validated payload length")
    }

    pub fn recording(&self) -> Result<RawRecording> {
        RawRecording::new(self.sample_rate_hz, self.samples())
    }

    /// SHA-256 of the little-endian payload bytes, hex encoded.
    pub fn payload_sha256(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.payload {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EegContainer {
    pub trials: Vec<Trial>,
}

fn take<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("EEGC file truncated while reading {what}")))?;
    Ok(buf)
}

fn u32_field<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, what)?))
}

fn f64_field<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r, what)?))
}

impl EegContainer {
    pub fn new(trials: Vec<Trial>) -> Self {
        Self { trials }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(EEGC_MAGIC)?;
        w.write_all(&EEGC_VERSION.to_le_bytes())?;
        w.write_all(&(self.trials.len() as u32).to_le_bytes())?;
        for t in &self.trials {
            t.validate()?;
            w.write_all(&t.subject.to_le_bytes())?;
            w.write_all(&t.trial.to_le_bytes())?;
            w.write_all(&(t.channels as u32).to_le_bytes())?;
            w.write_all(&t.sample_rate_hz.to_le_bytes())?;
            w.write_all(&(t.n_samples as u32).to_le_bytes())?;
            w.write_all(&t.valence.to_le_bytes())?;
            w.write_all(&t.arousal.to_le_bytes())?;
            let mut bytes = Vec::with_capacity(t.payload.len() * 4);
            for v in &t.payload {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let magic: [u8; 4] = take(&mut r, "magic")?;
        if &magic != EEGC_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"EEGC\"")));
        }
        let version = u16::from_le_bytes(take(&mut r, "version")?);
        if version != EEGC_VERSION {
            return Err(Error::Format(format!(
                "unsupported EEGC version {version}, expected {EEGC_VERSION}"
            )));
        }
        let n = u32_field(&mut r, "trial count")? as usize;
        let mut trials = Vec::with_capacity(n.min(4096));
        for i in 0..n {
            let subject = u32_field(&mut r, "subject id")?;
            let trial = u32_field(&mut r, "trial id")?;
            let channels = u32_field(&mut r, "channel count")? as usize;
            let sample_rate_hz = f64_field(&mut r, "sample rate")?;
            let n_samples = u32_field(&mut r, "sample count")? as usize;
            let valence = f64_field(&mut r, "valence")?;
            let arousal = f64_field(&mut r, "arousal")?;
            let count = channels
                .checked_mul(n_samples)
                .ok_or_else(|| Error::Format(format!("trial {i}: payload size overflows")))?;
            let mut bytes = vec![0u8; count * 4];
            r.read_exact(&mut bytes).map_err(|_| {
                Error::Format(format!("EEGC file truncated in payload of trial {i} ({subject}/{trial})"))
            })?;
            let payload = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Trial {
                subject,
                trial,
                channels,
                sample_rate_hz,
                n_samples,
                valence,
                arousal,
                payload,
            };
            t.validate()?;
            trials.push(t);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after the last trial".into()));
        }
        Ok(Self { trials })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn find(&self, subject: u32, trial: u32) -> Option<&Trial> {
        self.trials.iter().find(|t| t.subject == subject && t.trial == trial)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trial(trial: u32, valence: f64) -> Trial {
        let data: Vec<f64> = (0..2 * 300).map(|i| (i as f64 * 0.37).sin() * 12.5).collect();
        Trial::new(1, trial, 128.0, valence, 8.0, &Tensor::new(&[2, 300], data).unwrap()).unwrap()
    }

    fn bytes(c: &EegContainer) -> Vec<u8> {
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = EegContainer::new(vec![sample_trial(0, 2.0), sample_trial(1, 7.5)]);
        let buf = bytes(&c);
        assert_eq!(buf.len(), 4 + 2 + 4 + 2 * (4 * 4 + 3 * 8 + 2 * 300 * 4));
        let back = EegContainer::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.trials[1].payload_sha256(), c.trials[1].payload_sha256());
        assert_eq!(bytes(&back), buf);
    }

    #[test]
    fn labels_split_at_five() {
        assert_eq!(sample_trial(0, 5.0).label(Target::Valence), 0);
        assert_eq!(sample_trial(0, 5.01).label(Target::Valence), 1);
        assert_eq!(sample_trial(0, 2.0).label(Target::Arousal), 1);
    }

    #[test]
    fn reader_errors_are_specific() {
        let buf = bytes(&EegContainer::new(vec![sample_trial(0, 2.0)]));
        let message = |b: &[u8]| EegContainer::read_from(b).unwrap_err().to_string();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(message(&bad).contains("magic"));
        let mut v9 = buf.clone();
        v9[4] = 9;
        assert!(message(&v9).contains("version"));
        assert!(message(&buf[..buf.len() - 1]).contains("truncated in payload"));
        assert!(message(&buf[..12]).contains("truncated"));
        let mut rating = buf.clone();
        // valence sits after subject, trial, channels, rate, n_samples
        let off = 10 + 4 + 4 + 4 + 8 + 4;
        rating[off..off + 8].copy_from_slice(&9.5f64.to_le_bytes());
        assert!(message(&rating).contains("outside [1, 9]"));
    }

    #[test]
    fn out_of_range_rating_rejected_on_construction() {
        let x = Tensor::zeros(&[1, 10]);
        assert!(Trial::new(0, 0, 128.0, 0.5, 5.0, &x).is_err());
    }
}
