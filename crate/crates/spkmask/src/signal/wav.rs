//! PCM 16-bit little-endian mono WAV reading and writing. No other audio
//! container is supported.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::AudioClip;
use crate::Scalar;

const I16_SCALE: f64 = 32768.0;

/// Loads a PCM 16-bit mono WAV file, normalizing samples to [-1, 1].
pub fn load_wav<T: Scalar>(path: &Path) -> Result<AudioClip<T>> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!(
            "{}: unsupported channel count {} (mono required)",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "{}: unsupported encoding {:?}/{} bits (PCM 16-bit required)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| T::from_f(v as f64 / I16_SCALE))
                .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<T>>>()?;
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a clip as PCM 16-bit mono WAV, clamping samples to [-1, 1].
pub fn write_wav<T: Scalar>(path: &Path, clip: &AudioClip<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for &s in clip.samples() {
        let v = s.to_f().clamp(-1.0, 1.0);
        let q = (v * (I16_SCALE - 1.0)).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}
