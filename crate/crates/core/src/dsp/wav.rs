//! WAV I/O: 16-bit PCM and 32-bit float, little-endian.

use std::path::Path;

use super::{AudioTrack, DspError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn wav_err(e: hound::Error) -> DspError {
    DspError::Wav(e.to_string())
}

/// Reads a mono or stereo file. Mono is duplicated onto both channels.
pub fn read_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<AudioTrack<T>, DspError> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| DspError::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(DspError::Wav(format!(
                "{}: unsupported sample format {fmt:?} with {bits} bits",
                path.display()
            )))
        }
    };
    let to_t = |v: f32| T::lit(v as f64);
    match spec.channels {
        1 => AudioTrack::from_mono(samples.into_iter().map(to_t).collect(), spec.sample_rate),
        2 => {
            let left = samples.iter().step_by(2).map(|&v| to_t(v)).collect();
            let right = samples.iter().skip(1).step_by(2).map(|&v| to_t(v)).collect();
            AudioTrack::new(left, right, spec.sample_rate)
        }
        n => Err(DspError::Wav(format!(
            "{}: expected 1 or 2 channels, found {n}",
            path.display()
        ))),
    }
}

/// Writes an interleaved stereo file. Float output stores `f32` samples
/// exactly; PCM output is clipped to [-1, 1).
pub fn write_wav<T: Scalar>(
    path: impl AsRef<Path>,
    track: &AudioTrack<T>,
    format: WavFormat,
) -> Result<(), DspError> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: track.sample_rate(),
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(wav_err)?;
    for (l, r) in track.left().iter().zip(track.right()) {
        for v in [l, r] {
            match format {
                WavFormat::Float32 => writer.write_sample(v.as_f64() as f32),
                WavFormat::Pcm16 => {
                    let q = (v.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
            }
            .map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)
}
