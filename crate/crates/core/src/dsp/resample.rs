use rayon::prelude::*;

use super::filter::{design_lowpass, filter_forward_backward};
use super::RawRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const ANTI_ALIAS_ORDER: usize = 8;
const ANTI_ALIAS_FRACTION: f64 = 0.45;

/// Integer-factor decimation behind a zero-phase Butterworth anti-alias
/// filter at `0.45 * target_hz`.
pub fn downsample(rec: &RawRecording, target_hz: f64) -> Result<RawRecording> {
    let fs = rec.sample_rate_hz;
    let ratio = fs / target_hz;
    let factor = ratio.round();
    if !(target_hz > 0.0) || factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(Error::NonIntegerFactor {
            from_hz: fs,
            to_hz: target_hz,
        });
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(rec.clone());
    }

    let lp = design_lowpass(ANTI_ALIAS_FRACTION * target_hz, ANTI_ALIAS_ORDER, fs)?;
    let n = rec.n_samples();
    let out_len = n.div_ceil(factor);
    let rows = (0..rec.channels())
        .into_par_iter()
        .map(|c| {
            let filtered = filter_forward_backward(rec.channel(c), &lp)?;
            Ok(filtered.into_iter().step_by(factor).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = Tensor::new(&[rec.channels(), out_len], rows.concat())?;
    Ok(RawRecording {
        sample_rate_hz: target_hz,
        samples,
    })
}
