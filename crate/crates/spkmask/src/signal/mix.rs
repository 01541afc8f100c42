//! Power measurement, SIR gain computation, and offset mixing.

use crate::error::{Error, Result};
use crate::signal::AudioClip;
use crate::Scalar;

/// Mean of squared samples.
pub fn mean_power<T: Scalar>(clip: &AudioClip<T>) -> Result<T> {
    if clip.is_empty() {
        return Err(Error::Audio("mean_power of empty clip".into()));
    }
    let sum: T = clip.samples().iter().map(|&s| s * s).sum();
    Ok(sum / T::from_f(clip.len() as f64))
}

/// Gain g such that scaling the interference by g yields the requested
/// signal-to-interference ratio: g = sqrt(Pt / (Pi * 10^(sir_db/10))).
pub fn sir_gain<T: Scalar>(target_power: T, interference_power: T, sir_db: f64) -> Result<T> {
    if target_power <= T::zero() || interference_power <= T::zero() {
        return Err(Error::Audio(
            "sir_gain requires strictly positive powers".into(),
        ));
    }
    let ratio = T::from_f(10.0_f64.powf(sir_db / 10.0));
    Ok((target_power / (interference_power * ratio)).sqrt())
}

/// Result of mixing: the summed clip plus the pre-clipping peak magnitude.
/// Values may exceed [-1, 1]; nothing is clipped here.
#[derive(Debug, Clone)]
pub struct MixOutput<T> {
    pub clip: AudioClip<T>,
    pub peak: T,
}

/// Sample-wise sum of gain-scaled, offset-shifted sources. Output length is
/// the maximum of offset + duration over the sources.
pub fn mix_at_offsets<T: Scalar>(sources: &[(AudioClip<T>, f64, T)]) -> Result<MixOutput<T>> {
    if sources.is_empty() {
        return Err(Error::Audio("mix_at_offsets needs at least one source".into()));
    }
    let sr = sources[0].0.sample_rate_hz();
    for (clip, offset_s, _) in sources {
        if clip.sample_rate_hz() != sr {
            return Err(Error::Audio(format!(
                "mismatched sample rates: {} vs {}",
                clip.sample_rate_hz(),
                sr
            )));
        }
        if *offset_s < 0.0 {
            return Err(Error::Audio("negative mix offset".into()));
        }
    }
    let total = sources
        .iter()
        .map(|(clip, offset_s, _)| offset_samples(*offset_s, sr) + clip.len())
        .max()
        .unwrap_or(0);
    let mut out = vec![T::zero(); total];
    for (clip, offset_s, gain) in sources {
        let start = offset_samples(*offset_s, sr);
        for (i, &s) in clip.samples().iter().enumerate() {
            out[start + i] += *gain * s;
        }
    }
    let peak = out
        .iter()
        .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc });
    Ok(MixOutput {
        clip: AudioClip::new(out, sr)?,
        peak,
    })
}

fn offset_samples(offset_s: f64, sr: u32) -> usize {
    (offset_s * sr as f64).round() as usize
}
