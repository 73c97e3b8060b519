use serde::{Deserialize, Serialize};

use super::{stft, AudioTrack, DspError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    /// Added to mel energies before the logarithm.
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            fft_size: 2048,
            hop: 1024,
            n_mels: 40,
            n_mfcc: 20,
            log_floor: 1e-10,
        }
    }
}

/// Cepstral coefficients laid out as `[channel][frame][coefficient]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix<T> {
    pub channels: usize,
    pub frames: usize,
    pub n_mfcc: usize,
    pub coefficients: Vec<T>,
}

impl<T: Scalar> MfccMatrix<T> {
    pub fn frame(&self, channel: usize, t: usize) -> &[T] {
        let start = (channel * self.frames + t) * self.n_mfcc;
        &self.coefficients[start..start + self.n_mfcc]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular unit-peak filters on the HTK mel scale spanning 0 Hz to Nyquist,
/// returned as `[band][bin]` weights.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = fft_size / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / fft_size as f64;
                    let rise = (f - lo) / (mid - lo);
                    let fall = (hi - f) / (hi - mid);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II, first `keep` coefficients.
fn dct_ortho(x: &[f64], keep: usize) -> impl Iterator<Item = f64> + '_ {
    let n = x.len() as f64;
    (0..keep).map(move |k| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        let s: f64 = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
            })
            .sum();
        scale * s
    })
}

/// Power spectrogram, mel filterbank, `ln(x + floor)`, orthonormal DCT-II.
pub fn mfcc<T: Scalar>(a: &AudioTrack<T>, cfg: &MfccConfig) -> Result<MfccMatrix<T>, DspError> {
    if a.len() < cfg.fft_size {
        return Err(DspError::TooShort {
            len: a.len(),
            need: cfg.fft_size,
        });
    }
    let spec = stft(a, cfg.fft_size, cfg.hop)?;
    let bank = mel_filterbank(cfg.n_mels, cfg.fft_size, a.sample_rate());
    let mut coefficients = Vec::with_capacity(2 * spec.frames() * cfg.n_mfcc);
    let mut log_mel = vec![0.0f64; cfg.n_mels];
    for c in 0..2 {
        for t in 0..spec.frames() {
            let frame = spec.frame(c, t);
            for (m, weights) in bank.iter().enumerate() {
                let e: f64 = weights
                    .iter()
                    .zip(frame)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(w, z)| w * z.norm_sqr().as_f64())
                    .sum();
                log_mel[m] = (e + cfg.log_floor).ln();
            }
            coefficients.extend(dct_ortho(&log_mel, cfg.n_mfcc).map(T::lit));
        }
    }
    Ok(MfccMatrix {
        channels: 2,
        frames: spec.frames(),
        n_mfcc: cfg.n_mfcc,
        coefficients,
    })
}
