//! Energy-based voice activity detection on 20 ms frames. A frame is active
//! when its energy in dB is within `threshold_db_rel` of the loudest frame,
//! so the threshold adapts to the clip's own level.

use crate::error::{Error, Result};
use crate::signal::{AudioClip, MaskVector};
use crate::Scalar;

/// Marks each 20 ms frame active when
/// `10*log10(energy) >= max_frame_db + threshold_db_rel`. The last partial
/// frame, if any, is scored on the samples it has, so the mask covers
/// ceil(len / frame) frames. A clip with no energy at all yields all zeros.
pub fn energy_vad<T: Scalar>(clip: &AudioClip<T>, threshold_db_rel: f64) -> Result<MaskVector<T>> {
    if threshold_db_rel >= 0.0 {
        return Err(Error::Audio(format!(
            "relative VAD threshold must be negative, got {threshold_db_rel} dB"
        )));
    }
    if clip.is_empty() {
        return Err(Error::Audio("cannot run VAD on an empty clip".into()));
    }
    let frame_len = (clip.sample_rate_hz() as f64 * crate::MASK_FRAME_S).round() as usize;
    let energies: Vec<f64> = clip
        .samples()
        .chunks(frame_len)
        .map(|frame| frame.iter().map(|&s| s.to_f() * s.to_f()).sum())
        .collect();
    let max_energy = energies.iter().cloned().fold(0.0, f64::max);
    if max_energy <= 0.0 {
        return MaskVector::binary(vec![T::zero(); energies.len()]);
    }
    let cutoff_db = 10.0 * max_energy.log10() + threshold_db_rel;
    let values = energies
        .iter()
        .map(|&e| {
            if e > 0.0 && 10.0 * e.log10() >= cutoff_db {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    MaskVector::binary(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f64>) -> AudioClip<f64> {
        AudioClip::new(samples, 16000).unwrap()
    }

    #[test]
    fn silence_is_all_inactive() {
        let mask = energy_vad(&clip(vec![0.0; 16000]), -40.0).unwrap();
        assert_eq!(mask.len(), 50);
        assert_eq!(mask.active_frames().len(), 0);
    }

    #[test]
    fn constant_signal_is_all_active() {
        let mask = energy_vad(&clip(vec![0.5; 16000]), -40.0).unwrap();
        assert_eq!(mask.len(), 50);
        assert_eq!(mask.active_frames().len(), 50);
    }

    #[test]
    fn tone_then_silence_splits_at_the_boundary() {
        // 1 s tone followed by 1 s of silence: 50 active then 50 inactive.
        let mut samples: Vec<f64> = (0..16000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        samples.extend(std::iter::repeat(0.0).take(16000));
        let mask = energy_vad(&clip(samples), -40.0).unwrap();
        assert_eq!(mask.len(), 100);
        let values = mask.values();
        assert!(values[..50].iter().all(|&v| v == 1.0));
        assert!(values[50..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quiet_tail_below_threshold_is_inactive() {
        // Second half 60 dB quieter than the first: well past a -40 dB cutoff.
        let mut samples = vec![0.5; 3200];
        samples.extend(std::iter::repeat(0.0005).take(3200));
        let mask = energy_vad(&clip(samples), -40.0).unwrap();
        let values = mask.values();
        assert!(values[..10].iter().all(|&v| v == 1.0));
        assert!(values[10..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonnegative_threshold_is_rejected() {
        assert!(energy_vad(&clip(vec![0.5; 320]), 0.0).is_err());
        assert!(energy_vad(&clip(vec![0.5; 320]), 3.0).is_err());
    }

    #[test]
    fn partial_last_frame_is_scored() {
        // 330 samples: one full frame plus a 10-sample remainder.
        let mask = energy_vad(&clip(vec![0.5; 330]), -40.0).unwrap();
        assert_eq!(mask.len(), 2);
        // The tiny tail holds only 10 samples of the same amplitude; its
        // energy is 32x lower (-15 dB), still within a -40 dB window.
        assert_eq!(mask.active_frames().len(), 2);
    }

    proptest! {
        #[test]
        fn mask_length_is_ceil_of_frames(len in 1usize..20000) {
            let mask = energy_vad(&clip(vec![0.3; len]), -40.0).unwrap();
            prop_assert_eq!(mask.len(), (len + 319) / 320);
        }

        #[test]
        fn rerunning_vad_gives_identical_masks(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..4800).map(|_| rng.gen_range(-0.8..0.8)).collect();
            let c = clip(samples);
            let a = energy_vad(&c, -40.0).unwrap();
            let b = energy_vad(&c, -40.0).unwrap();
            prop_assert_eq!(a.values(), b.values());
        }
    }
}
