//! Ground-truth signal engine: stereo tracks, multitracks and their mixture,
//! the effect primitives, STFT/iSTFT, MFCC, and the manipulation oracle.

mod apply;
mod filter;
mod mfcc;
mod reverb;
mod stft;
pub mod synth;
pub mod wav;

use indexmap::IndexMap;
use thiserror::Error;

use crate::aml::PanSide;
use crate::Scalar;

pub use apply::{apply_plan, apply_transform, ACCOMPANIMENT_STEM};
pub use filter::{butterworth_filter, Biquad, FilterKind, BUTTERWORTH_ORDER};
pub use mfcc::{mel_filterbank, mfcc, MfccConfig, MfccMatrix};
pub use reverb::{reverb, ReverbConfig};
pub use stft::{frame_count as stft_frame_count, hann_periodic, istft, stft, Spectrogram};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
    #[error("sample rate mismatch: {0} vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("multitrack has no stems")]
    EmptyMultiTrack,
    #[error("pan amount {0} outside (0, 1)")]
    PanOutOfRange(f64),
    #[error("gain {0} must be positive")]
    GainNotPositive(f64),
    #[error("cutoff {cutoff} Hz outside (0, {nyquist}) Hz")]
    CutoffOutOfRange { cutoff: f64, nyquist: f64 },
    #[error("reverb decay {0} s must be positive")]
    DecayNotPositive(f64),
    #[error("invalid hop {hop} for fft size {fft_size}")]
    InvalidHop { hop: usize, fft_size: usize },
    #[error("invalid fft size {0}")]
    InvalidFftSize(usize),
    #[error("signal too short: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("plan targets stem {0:?} which the multitrack does not contain")]
    UnknownTarget(String),
    #[error("removal plans are realised by swapping input and target, not applied directly")]
    RemoveDirection,
    #[error("expected {expected} Hz audio, got {got} Hz")]
    UnsupportedSampleRate { expected: u32, got: u32 },
    #[error("wav: {0}")]
    Wav(String),
}

/// Stereo audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack<T> {
    channels: [Vec<T>; 2],
    sample_rate: u32,
}

impl<T: Scalar> AudioTrack<T> {
    pub fn new(left: Vec<T>, right: Vec<T>, sample_rate: u32) -> Result<Self, DspError> {
        if left.len() != right.len() {
            return Err(DspError::LengthMismatch(left.len(), right.len()));
        }
        if sample_rate == 0 {
            return Err(DspError::ZeroSampleRate);
        }
        if let Some(i) = left
            .iter()
            .chain(right.iter())
            .position(|v| !v.is_finite())
        {
            return Err(DspError::NonFinite(i % left.len().max(1)));
        }
        Ok(AudioTrack {
            channels: [left, right],
            sample_rate,
        })
    }

    /// Same signal on both channels.
    pub fn from_mono(samples: Vec<T>, sample_rate: u32) -> Result<Self, DspError> {
        AudioTrack::new(samples.clone(), samples, sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        AudioTrack {
            channels: [vec![T::zero(); len], vec![T::zero(); len]],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn left(&self) -> &[T] {
        &self.channels[0]
    }

    pub fn right(&self) -> &[T] {
        &self.channels[1]
    }

    pub fn channel(&self, i: usize) -> &[T] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<T>; 2] {
        &self.channels
    }

    /// Applies `f` to each channel. `f` must preserve the channel length.
    pub(crate) fn map_channels(&self, mut f: impl FnMut(usize, &[T]) -> Vec<T>) -> Self {
        let left = f(0, &self.channels[0]);
        let right = f(1, &self.channels[1]);
        debug_assert_eq!(left.len(), right.len());
        AudioTrack {
            channels: [left, right],
            sample_rate: self.sample_rate,
        }
    }

    pub fn map_samples(&self, f: impl Fn(T) -> T) -> Self {
        self.map_channels(|_, ch| ch.iter().map(|&v| f(v)).collect())
    }

    /// Keeps the first `len` samples (or pads with zeros).
    pub fn resized(&self, len: usize) -> Self {
        self.map_channels(|_, ch| {
            let mut v = ch.to_vec();
            v.resize(len, T::zero());
            v
        })
    }

    pub fn segment(&self, start: usize, len: usize) -> Result<Self, DspError> {
        if start + len > self.len() {
            return Err(DspError::TooShort {
                len: self.len(),
                need: start + len,
            });
        }
        Ok(self.map_channels(|_, ch| ch[start..start + len].to_vec()))
    }

    pub fn swapped_channels(&self) -> Self {
        AudioTrack {
            channels: [self.channels[1].clone(), self.channels[0].clone()],
            sample_rate: self.sample_rate,
        }
    }

    /// Sample-wise sum. Both tracks must agree in length and rate.
    pub fn try_add(&self, other: &AudioTrack<T>) -> Result<Self, DspError> {
        self.check_compatible(other)?;
        Ok(self.map_channels(|c, ch| {
            ch.iter()
                .zip(&other.channels[c])
                .map(|(&a, &b)| a + b)
                .collect()
        }))
    }

    pub fn check_compatible(&self, other: &AudioTrack<T>) -> Result<(), DspError> {
        if self.len() != other.len() {
            return Err(DspError::LengthMismatch(self.len(), other.len()));
        }
        if self.sample_rate != other.sample_rate {
            return Err(DspError::SampleRateMismatch(
                self.sample_rate,
                other.sample_rate,
            ));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> AudioTrack<U> {
        AudioTrack {
            channels: [
                self.channels[0].iter().map(|v| U::lit(v.as_f64())).collect(),
                self.channels[1].iter().map(|v| U::lit(v.as_f64())).collect(),
            ],
            sample_rate: self.sample_rate,
        }
    }

    /// Root mean square over both channels.
    pub fn rms(&self) -> f64 {
        let n = 2 * self.len();
        if n == 0 {
            return 0.0;
        }
        let e: f64 = self
            .channels
            .iter()
            .flatten()
            .map(|v| v.as_f64() * v.as_f64())
            .sum();
        (e / n as f64).sqrt()
    }

    pub fn channel_rms(&self, c: usize) -> f64 {
        let ch = &self.channels[c];
        if ch.is_empty() {
            return 0.0;
        }
        (ch.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / ch.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }

    pub fn require_sample_rate(&self, expected: u32) -> Result<(), DspError> {
        if self.sample_rate != expected {
            return Err(DspError::UnsupportedSampleRate {
                expected,
                got: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// Named stems sharing one length and sample rate, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTrack<T> {
    stems: IndexMap<String, AudioTrack<T>>,
}

impl<T: Scalar> Default for MultiTrack<T> {
    fn default() -> Self {
        MultiTrack {
            stems: IndexMap::new(),
        }
    }
}

impl<T: Scalar> MultiTrack<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_stems<S: Into<String>>(
        stems: impl IntoIterator<Item = (S, AudioTrack<T>)>,
    ) -> Result<Self, DspError> {
        let mut mt = MultiTrack::new();
        for (name, track) in stems {
            mt.insert(name, track)?;
        }
        Ok(mt)
    }

    /// Adds or replaces a stem.
    pub fn insert(&mut self, name: impl Into<String>, track: AudioTrack<T>) -> Result<(), DspError> {
        if let Some((_, first)) = self.stems.first() {
            first.check_compatible(&track)?;
        }
        self.stems.insert(name.into(), track);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&AudioTrack<T>> {
        self.stems.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.stems.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.stems.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &AudioTrack<T>)> {
        self.stems.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    /// Length in samples of every stem.
    pub fn num_samples(&self) -> usize {
        self.stems.first().map_or(0, |(_, t)| t.len())
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.stems.first().map(|(_, t)| t.sample_rate())
    }

    /// Copy with the named stems replaced by silence.
    pub fn with_zeroed(&self, names: &[&str]) -> Self {
        let stems = self
            .stems
            .iter()
            .map(|(k, v)| {
                let v = if names.contains(&k.as_str()) {
                    AudioTrack::silence(v.len(), v.sample_rate())
                } else {
                    v.clone()
                };
                (k.clone(), v)
            })
            .collect();
        MultiTrack { stems }
    }

    pub fn cast<U: Scalar>(&self) -> MultiTrack<U> {
        MultiTrack {
            stems: self
                .stems
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Sample-wise sum of all stems, accumulated in stem order starting from silence.
pub fn mix<T: Scalar>(mt: &MultiTrack<T>) -> Result<AudioTrack<T>, DspError> {
    let (_, first) = mt.stems.first().ok_or(DspError::EmptyMultiTrack)?;
    sum_tracks(first.len(), first.sample_rate(), mt.stems.values())
}

pub(crate) fn sum_tracks<'a, T: Scalar>(
    len: usize,
    sample_rate: u32,
    tracks: impl IntoIterator<Item = &'a AudioTrack<T>>,
) -> Result<AudioTrack<T>, DspError> {
    let mut acc = AudioTrack::silence(len, sample_rate);
    for t in tracks {
        acc.check_compatible(t)?;
        for c in 0..2 {
            for (a, &b) in acc.channels[c].iter_mut().zip(&t.channels[c]) {
                *a += b;
            }
        }
    }
    Ok(acc)
}

pub fn apply_gain<T: Scalar>(a: &AudioTrack<T>, gain: f64) -> Result<AudioTrack<T>, DspError> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(DspError::GainNotPositive(gain));
    }
    let g = T::lit(gain);
    Ok(a.map_samples(|v| v * g))
}

/// Moves the image toward `side`: that channel is scaled by `1 + amount`,
/// the other by `1 - amount`, so the two gains average to one.
pub fn apply_pan<T: Scalar>(
    a: &AudioTrack<T>,
    side: PanSide,
    amount: f64,
) -> Result<AudioTrack<T>, DspError> {
    if !(amount > 0.0 && amount < 1.0) {
        return Err(DspError::PanOutOfRange(amount));
    }
    let up = T::lit(1.0 + amount);
    let down = T::lit(1.0 - amount);
    let (gl, gr) = match side {
        PanSide::Left => (up, down),
        PanSide::Right => (down, up),
    };
    Ok(a.map_channels(|c, ch| {
        let g = if c == 0 { gl } else { gr };
        ch.iter().map(|&v| v * g).collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, n: usize, sr: u32) -> AudioTrack<f64> {
        let s: Vec<f64> = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        AudioTrack::from_mono(s, sr).unwrap()
    }

    #[test]
    fn track_invariants() {
        assert_eq!(
            AudioTrack::new(vec![0.0f64; 3], vec![0.0; 2], 44100),
            Err(DspError::LengthMismatch(3, 2))
        );
        assert_eq!(
            AudioTrack::new(vec![0.0f64], vec![0.0], 0),
            Err(DspError::ZeroSampleRate)
        );
        assert!(matches!(
            AudioTrack::new(vec![0.0, f64::NAN], vec![0.0, 0.0], 8000),
            Err(DspError::NonFinite(1))
        ));
    }

    #[test]
    fn mix_superposition() {
        let x = sine(440.0, 0.5, 100, 8000);
        let neg = x.map_samples(|v| -v);
        let mt = MultiTrack::from_stems([("a", x.clone()), ("b", neg)]).unwrap();
        assert!(mix(&mt).unwrap().channels().iter().flatten().all(|&v| v == 0.0));

        let single = MultiTrack::from_stems([("a", x.clone())]).unwrap();
        assert_eq!(mix(&single).unwrap(), x);

        let impulse = |at: usize| {
            let mut v = vec![0.0f64; 16];
            v[at] = 1.0;
            AudioTrack::from_mono(v, 8000).unwrap()
        };
        let mt =
            MultiTrack::from_stems([("a", impulse(1)), ("b", impulse(5)), ("c", impulse(9))])
                .unwrap();
        let m = mix(&mt).unwrap();
        let ones: Vec<usize> = (0..16).filter(|&i| m.left()[i] == 1.0).collect();
        assert_eq!(ones, vec![1, 5, 9]);
        assert_eq!(m.left().iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn mix_rejects_mismatch() {
        let mut mt = MultiTrack::from_stems([("a", sine(1.0, 1.0, 10, 8000))]).unwrap();
        assert_eq!(
            mt.insert("b", sine(1.0, 1.0, 11, 8000)),
            Err(DspError::LengthMismatch(10, 11))
        );
        assert_eq!(mix(&MultiTrack::<f64>::new()), Err(DspError::EmptyMultiTrack));
    }

    #[test]
    fn gain_properties() {
        let x = sine(100.0, 0.3, 8000, 8000);
        assert_eq!(apply_gain(&x, 1.0).unwrap(), x);
        let back = apply_gain(&apply_gain(&x, 2.0).unwrap(), 0.5).unwrap();
        assert_eq!(back, x);
        let y = apply_gain(&x, 1.5).unwrap();
        assert!((y.peak() - 1.5 * x.peak()).abs() < 1e-9);
        assert!((y.peak() - 0.45).abs() < 1e-6);
        assert!((y.rms() / x.rms() - 1.5).abs() < 1e-12);
        assert!(apply_gain(&x, 0.0).is_err());
    }

    #[test]
    fn pan_properties() {
        let x = sine(220.0, 0.4, 4000, 8000);
        let tiny = apply_pan(&x, PanSide::Left, 1e-9).unwrap();
        for (a, b) in tiny.left().iter().zip(x.left()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let p = apply_pan(&x, PanSide::Left, 0.5).unwrap();
        assert!((p.channel_rms(0) / p.channel_rms(1) - 3.0).abs() < 1e-9);
        let both = apply_pan(&p, PanSide::Right, 0.5).unwrap();
        let expect = apply_gain(&x, 0.75).unwrap();
        for c in 0..2 {
            for (a, b) in both.channel(c).iter().zip(expect.channel(c)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(
            apply_pan(&x, PanSide::Right, 0.0),
            Err(DspError::PanOutOfRange(0.0))
        );
        assert!(apply_pan(&x, PanSide::Right, 1.0).is_err());
    }

    #[test]
    fn gain_commutes_with_mix() {
        let a = sine(110.0, 0.2, 256, 8000);
        let b = sine(330.0, 0.1, 256, 8000);
        let mt = MultiTrack::from_stems([("a", a.clone()), ("b", b.clone())]).unwrap();
        let lhs = apply_gain(&mix(&mt).unwrap(), 1.5).unwrap();
        let scaled = MultiTrack::from_stems([
            ("a", apply_gain(&a, 1.5).unwrap()),
            ("b", apply_gain(&b, 1.5).unwrap()),
        ])
        .unwrap();
        let rhs = mix(&scaled).unwrap();
        for c in 0..2 {
            for (x, y) in lhs.channel(c).iter().zip(rhs.channel(c)) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }
}
