//! Log-Mel feature extraction: magnitude STFT, HTK-style triangular Mel
//! filterbank from 0 Hz to Nyquist, log with a floor epsilon.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal::{AudioClip, FeatureMatrix};
use crate::Scalar;

/// Analysis window length in milliseconds.
pub const WINDOW_MS: usize = 25;
/// Frame stride in milliseconds.
pub const STRIDE_MS: usize = 10;
/// Floor applied to Mel energies before the log.
pub const MEL_FLOOR: f64 = 1e-10;

const FFT_SIZE: usize = 512;

/// Feature extraction configuration. Window and stride are fixed at
/// 25 ms / 10 ms; only the filterbank size varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub num_mels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { num_mels: 16 }
    }
}

/// Frame count under the framing formula: floor((n - window) / stride) + 1.
pub fn num_feature_frames(num_samples: usize, sample_rate_hz: u32) -> Result<usize> {
    let window = window_samples(sample_rate_hz);
    let stride = stride_samples(sample_rate_hz);
    if num_samples < window {
        return Err(Error::Audio(format!(
            "clip of {num_samples} samples is shorter than one {window}-sample window"
        )));
    }
    Ok((num_samples - window) / stride + 1)
}

fn window_samples(sample_rate_hz: u32) -> usize {
    sample_rate_hz as usize * WINDOW_MS / 1000
}

fn stride_samples(sample_rate_hz: u32) -> usize {
    sample_rate_hz as usize * STRIDE_MS / 1000
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK-style triangular filterbank over FFT bins, spanning 0 Hz to Nyquist.
/// Returns (weights[num_mels][num_bins], center frequency per filter in Hz).
pub fn mel_filterbank(
    num_mels: usize,
    sample_rate_hz: u32,
    fft_size: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let nyquist = sample_rate_hz as f64 / 2.0;
    let num_bins = fft_size / 2 + 1;
    let mel_max = hz_to_mel(nyquist);
    // num_mels + 2 equally spaced Mel points; triangle m spans points m..m+2.
    let points: Vec<f64> = (0..num_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (num_mels + 1) as f64))
        .collect();
    let mut weights = vec![vec![0.0; num_bins]; num_mels];
    for m in 0..num_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for (bin, w) in weights[m].iter_mut().enumerate() {
            let f = bin as f64 * sample_rate_hz as f64 / fft_size as f64;
            if f > lo && f < center {
                *w = (f - lo) / (center - lo);
            } else if f == center {
                *w = 1.0;
            } else if f > center && f < hi {
                *w = (hi - f) / (hi - center);
            }
        }
    }
    let centers = points[1..=num_mels].to_vec();
    (weights, centers)
}

/// Magnitude STFT -> Mel filterbank -> log with floor epsilon. The matrix is
/// kept raw; normalization is a model-input concern.
pub fn log_mel<T: Scalar>(clip: &AudioClip<T>, config: &FeatureConfig) -> Result<FeatureMatrix<T>> {
    let sr = clip.sample_rate_hz();
    let window = window_samples(sr);
    let stride = stride_samples(sr);
    let num_frames = num_feature_frames(clip.len(), sr)?;
    debug_assert!(window <= FFT_SIZE);

    let hann: Vec<T> = (0..window)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * i as f64 / (window - 1) as f64;
            T::from_f(0.5 - 0.5 * x.cos())
        })
        .collect();
    let (bank, _) = mel_filterbank(config.num_mels, sr, FFT_SIZE);
    let bank: Vec<Vec<T>> = bank
        .into_iter()
        .map(|row| row.into_iter().map(T::from_f).collect())
        .collect();

    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let floor = T::from_f(MEL_FLOOR);
    let num_bins = FFT_SIZE / 2 + 1;

    let mut data = Vec::with_capacity(num_frames * config.num_mels);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); FFT_SIZE];
    let mut magnitude = vec![T::zero(); num_bins];
    for frame in 0..num_frames {
        let start = frame * stride;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < window {
                clip.samples()[start + i] * hann[i]
            } else {
                T::zero()
            };
            *slot = Complex::new(v, T::zero());
        }
        fft.process(&mut buf);
        for (bin, m) in magnitude.iter_mut().enumerate() {
            *m = buf[bin].norm();
        }
        for filter in &bank {
            let mut acc = T::zero();
            for (w, m) in filter.iter().zip(&magnitude) {
                acc += *w * *m;
            }
            data.push(if acc > floor { acc.ln() } else { floor.ln() });
        }
    }
    Ok(FeatureMatrix::from_rows(data, num_frames, config.num_mels))
}
