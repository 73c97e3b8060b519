//! Deterministic synthetic stems for tests, demos and micro-scale training.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{butterworth_filter, AudioTrack, DspError, FilterKind, MultiTrack};
use crate::Scalar;

/// Sine at `freq` plus short noise bursts, slightly different per channel.
pub fn tone_with_bursts<T: Scalar>(
    freq: f64,
    amplitude: f64,
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> AudioTrack<T> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burst_len = (0.05 * sample_rate as f64) as usize;
    let period = (0.25 * sample_rate as f64) as usize;
    let offset = rng.gen_range(0..period.max(1));
    let mut make = |phase: f64| -> Vec<T> {
        (0..n)
            .map(|i| {
                let t = i as f64 / sample_rate as f64;
                let mut v = amplitude * (2.0 * PI * freq * t + phase).sin();
                if (i + offset) % period < burst_len {
                    v += 0.3 * amplitude * rng.gen_range(-1.0..1.0);
                }
                T::lit(v)
            })
            .collect()
    };
    let left = make(0.0);
    let right = make(0.3);
    AudioTrack::new(left, right, sample_rate).expect("finite synthetic samples")
}

/// Three stems: sines at 110 / 440 / 1760 Hz with noise bursts, named bass / vocals / drums.
pub fn three_stem_multitrack<T: Scalar>(
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> MultiTrack<T> {
    MultiTrack::from_stems([
        ("vocals", tone_with_bursts(440.0, 0.3, seconds, sample_rate, seed)),
        ("drums", tone_with_bursts(1760.0, 0.2, seconds, sample_rate, seed + 1)),
        ("bass", tone_with_bursts(110.0, 0.4, seconds, sample_rate, seed + 2)),
    ])
    .expect("stems share shape")
}

/// Broadband stem: white noise shaped by a Butterworth filter, amplitude
/// modulated by a slow envelope, plus a harmonic tone.
pub fn shaped_noise<T: Scalar>(
    kind: FilterKind,
    cutoff_hz: f64,
    tone_hz: f64,
    amplitude: f64,
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioTrack<T>, DspError> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = rng.gen_range(1.0..4.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut channel = |shift: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / sample_rate as f64;
                let env = 0.6 + 0.4 * (2.0 * PI * rate * t + phase + shift).sin();
                let tone: f64 = (1..=3)
                    .map(|h| (2.0 * PI * tone_hz * h as f64 * t).sin() / h as f64)
                    .sum();
                env * (rng.gen_range(-1.0..1.0) + 0.5 * tone)
            })
            .collect()
    };
    let (l, r) = (channel(0.0), channel(0.5));
    let raw = AudioTrack::new(l, r, sample_rate)?;
    let shaped = butterworth_filter(&raw, kind, cutoff_hz)?;
    let peak = shaped.peak().max(1e-12);
    Ok(shaped.map_samples(|v| v * amplitude / peak).cast())
}

/// Two broadband stems with distinct spectra: `vocals` above ~800 Hz and
/// `bass` below ~800 Hz.
pub fn two_stem_multitrack<T: Scalar>(
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<MultiTrack<T>, DspError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocals = shaped_noise(
        FilterKind::Highpass,
        800.0,
        rng.gen_range(300.0..600.0),
        0.4,
        seconds,
        sample_rate,
        rng.gen(),
    )?;
    let bass = shaped_noise(
        FilterKind::Lowpass,
        800.0,
        rng.gen_range(50.0..120.0),
        0.4,
        seconds,
        sample_rate,
        rng.gen(),
    )?;
    MultiTrack::from_stems([("vocals", vocals), ("bass", bass)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a: MultiTrack<f64> = three_stem_multitrack(0.1, 8000, 7);
        let b: MultiTrack<f64> = three_stem_multitrack(0.1, 8000, 7);
        assert_eq!(a, b);
        assert_eq!(a.num_samples(), 800);
        let c: MultiTrack<f64> = two_stem_multitrack(0.2, 8000, 1).unwrap();
        assert!((c.get("bass").unwrap().peak() - 0.4).abs() < 1e-12);
    }
}
