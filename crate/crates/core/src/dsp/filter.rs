use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{AudioTrack, DspError};
use crate::Scalar;

pub const BUTTERWORTH_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// Second-order section, normalised so that `a0 == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Bilinear-transform design with the cutoff prewarped onto `cutoff_hz`.
    pub fn design(kind: FilterKind, cutoff_hz: f64, q: f64, sample_rate: f64) -> Biquad {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match kind {
            FilterKind::Lowpass => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
            FilterKind::Highpass => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
        };
        Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Direct form II transposed, zero initial state.
    pub fn process<T: Scalar>(&self, input: &[T]) -> Vec<T> {
        let [b0, b1, b2] = self.b.map(T::lit);
        let [a1, a2] = self.a.map(T::lit);
        let (mut z1, mut z2) = (T::zero(), T::zero());
        input
            .iter()
            .map(|&x| {
                let y = b0 * x + z1;
                z1 = b1 * x - a1 * y + z2;
                z2 = b2 * x - a2 * y;
                y
            })
            .collect()
    }
}

/// Section quality factors of an even-order Butterworth prototype.
fn butterworth_qs(order: usize) -> Vec<f64> {
    (0..order / 2)
        .map(|k| {
            let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
            1.0 / (2.0 * theta.cos())
        })
        .collect()
}

pub(crate) fn butterworth_sections(
    kind: FilterKind,
    cutoff_hz: f64,
    sample_rate: u32,
) -> Result<Vec<Biquad>, DspError> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(DspError::CutoffOutOfRange {
            cutoff: cutoff_hz,
            nyquist,
        });
    }
    Ok(butterworth_qs(BUTTERWORTH_ORDER)
        .into_iter()
        .map(|q| Biquad::design(kind, cutoff_hz, q, sample_rate as f64))
        .collect())
}

/// Causal 4th-order Butterworth filter (two cascaded biquads) per channel.
pub fn butterworth_filter<T: Scalar>(
    a: &AudioTrack<T>,
    kind: FilterKind,
    cutoff_hz: f64,
) -> Result<AudioTrack<T>, DspError> {
    let sections = butterworth_sections(kind, cutoff_hz, a.sample_rate())?;
    Ok(a.map_channels(|_, ch| {
        sections
            .iter()
            .fold(ch.to_vec(), |signal, s| s.process(&signal))
    }))
}
