use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioTrack, DspError};
use crate::Scalar;

/// Complex stereo spectrogram laid out channel-major: `values[(c * frames + t) * bins + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    values: Vec<Complex<T>>,
    frames: usize,
    bins: usize,
    fft_size: usize,
    hop: usize,
    sample_rate: u32,
}

impl<T: Scalar> Spectrogram<T> {
    pub const CHANNELS: usize = 2;

    pub fn from_values(
        values: Vec<Complex<T>>,
        frames: usize,
        fft_size: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Result<Self, DspError> {
        check_params(fft_size, hop)?;
        let bins = fft_size / 2 + 1;
        if values.len() != Self::CHANNELS * frames * bins {
            return Err(DspError::LengthMismatch(
                values.len(),
                Self::CHANNELS * frames * bins,
            ));
        }
        Ok(Spectrogram {
            values,
            frames,
            bins,
            fft_size,
            hop,
            sample_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn frame(&self, channel: usize, t: usize) -> &[Complex<T>] {
        let start = (channel * self.frames + t) * self.bins;
        &self.values[start..start + self.bins]
    }

    pub fn get(&self, channel: usize, t: usize, f: usize) -> Complex<T> {
        self.values[(channel * self.frames + t) * self.bins + f]
    }
}

fn check_params(fft_size: usize, hop: usize) -> Result<(), DspError> {
    if fft_size < 2 || fft_size % 2 != 0 {
        return Err(DspError::InvalidFftSize(fft_size));
    }
    if hop == 0 || hop > fft_size {
        return Err(DspError::InvalidHop { hop, fft_size });
    }
    Ok(())
}

/// Periodic Hann window, `0.5 - 0.5 cos(2 pi n / N)`.
pub fn hann_periodic<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            T::lit(0.5 - 0.5 * x.cos())
        })
        .collect()
}

/// Number of frames for `len` samples with centred frames.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

fn reflect_pad<T: Scalar>(x: &[T], pad: usize) -> Vec<T> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|k| x[k]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|k| x[n - 2 - k]));
    out
}

/// Short-time Fourier transform with a periodic Hann window. Each channel is
/// padded by reflection with `fft_size / 2` samples on both ends, so frame `t`
/// is centred on sample `t * hop`.
pub fn stft<T: Scalar>(
    a: &AudioTrack<T>,
    fft_size: usize,
    hop: usize,
) -> Result<Spectrogram<T>, DspError> {
    check_params(fft_size, hop)?;
    let pad = fft_size / 2;
    if a.len() <= pad {
        return Err(DspError::TooShort {
            len: a.len(),
            need: pad + 1,
        });
    }
    let window = hann_periodic::<T>(fft_size);
    let fft = FftPlanner::<T>::new().plan_fft_forward(fft_size);
    let frames = frame_count(a.len(), hop);
    let bins = fft_size / 2 + 1;
    let mut values = Vec::with_capacity(2 * frames * bins);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); fft_size];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    for c in 0..2 {
        let padded = reflect_pad(a.channel(c), pad);
        for t in 0..frames {
            let start = t * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let v = padded.get(start + i).copied().unwrap_or_else(T::zero);
                *b = Complex::new(v * window[i], T::zero());
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            values.extend_from_slice(&buf[..bins]);
        }
    }
    Ok(Spectrogram {
        values,
        frames,
        bins,
        fft_size,
        hop,
        sample_rate: a.sample_rate(),
    })
}

/// Inverse of [`stft`]: windowed overlap-add divided by the summed squared
/// window, trimmed to `length` samples.
pub fn istft<T: Scalar>(s: &Spectrogram<T>, length: usize) -> Result<AudioTrack<T>, DspError> {
    let n = s.fft_size;
    let pad = n / 2;
    let window = hann_periodic::<T>(n);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let total = (s.frames.saturating_sub(1)) * s.hop + n;
    let mut norm = vec![T::zero(); total];
    for t in 0..s.frames {
        for i in 0..n {
            norm[t * s.hop + i] += window[i] * window[i];
        }
    }
    let scale = T::one() / T::from_usize_lossy(n);
    let tiny = T::lit(1e-11);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); ifft.get_inplace_scratch_len()];
    let mut channels: [Vec<T>; 2] = [Vec::new(), Vec::new()];
    for (c, out_ch) in channels.iter_mut().enumerate() {
        let mut acc = vec![T::zero(); total];
        for t in 0..s.frames {
            let frame = s.frame(c, t);
            buf[..s.bins].copy_from_slice(frame);
            // Hermitian completion of the negative frequencies.
            for k in 1..n - s.bins + 1 {
                buf[n - k] = frame[k].conj();
            }
            buf[0].im = T::zero();
            buf[n / 2].im = T::zero();
            ifft.process_with_scratch(&mut buf, &mut scratch);
            for i in 0..n {
                acc[t * s.hop + i] += buf[i].re * scale * window[i];
            }
        }
        *out_ch = (0..length)
            .map(|j| {
                let k = j + pad;
                match (acc.get(k), norm.get(k)) {
                    (Some(&v), Some(&w)) if w > tiny => v / w,
                    _ => T::zero(),
                }
            })
            .collect();
    }
    let [left, right] = channels;
    AudioTrack::new(left, right, s.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> AudioTrack<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        AudioTrack::new(l, r, 44100).unwrap()
    }

    #[test]
    fn shape() {
        let s = stft(&noise(4410, 1), 256, 128).unwrap();
        assert_eq!(s.bins(), 129);
        assert_eq!(s.frames(), 1 + 4410 / 128);
    }

    #[test]
    fn round_trip_interior() {
        let x = noise(20000, 2);
        let y = istft(&stft(&x, 1024, 512).unwrap(), x.len()).unwrap();
        let (mut err, mut en) = (0.0, 0.0);
        for c in 0..2 {
            for i in 1024..x.len() - 1024 {
                err += (x.channel(c)[i] - y.channel(c)[i]).powi(2);
                en += x.channel(c)[i].powi(2);
            }
        }
        assert!((err / en).sqrt() < 1e-10);
    }

    #[test]
    fn zeros_map_to_zeros() {
        let s = stft(&AudioTrack::<f64>::silence(1000, 8000), 256, 64).unwrap();
        assert!(s.values().iter().all(|v| v.re == 0.0 && v.im == 0.0));
    }

    #[test]
    fn parameter_errors() {
        let x = noise(1000, 3);
        assert!(matches!(stft(&x, 256, 0), Err(DspError::InvalidHop { .. })));
        assert!(matches!(stft(&x, 256, 512), Err(DspError::InvalidHop { .. })));
        assert!(matches!(stft(&x, 255, 64), Err(DspError::InvalidFftSize(255))));
        assert!(matches!(
            stft(&noise(100, 4), 256, 128),
            Err(DspError::TooShort { .. })
        ));
    }

    #[test]
    fn hann_is_periodic() {
        let w = hann_periodic::<f64>(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        assert!((w[2] - 0.5).abs() < 1e-15);
    }
}
