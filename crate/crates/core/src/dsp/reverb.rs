use serde::{Deserialize, Serialize};

use super::{AudioTrack, DspError};
use crate::Scalar;

/// Schroeder reverberator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverbConfig {
    /// Parallel feedback comb delays.
    pub comb_delays_ms: Vec<f64>,
    /// Series allpass sections as (delay ms, gain).
    pub allpass: Vec<(f64, f64)>,
    pub dry: f64,
    pub wet: f64,
}

impl Default for ReverbConfig {
    fn default() -> Self {
        ReverbConfig {
            comb_delays_ms: vec![29.7, 37.1, 41.1, 43.7],
            allpass: vec![(5.0, 0.7), (1.7, 0.7)],
            dry: 0.7,
            wet: 0.3,
        }
    }
}

fn delay_samples(ms: f64, sample_rate: u32) -> usize {
    ((ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
}

/// `y[n] = x[n] + g * y[n - d]`
fn comb<T: Scalar>(x: &[T], d: usize, g: T) -> Vec<T> {
    let mut y = x.to_vec();
    for n in d..y.len() {
        let fb = g * y[n - d];
        y[n] += fb;
    }
    y
}

/// `y[n] = -g x[n] + x[n - d] + g y[n - d]`, unit magnitude at every frequency.
fn allpass<T: Scalar>(x: &[T], d: usize, g: T) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for n in 0..x.len() {
        let mut v = -g * x[n];
        if n >= d {
            v += x[n - d] + g * y[n - d];
        }
        y[n] = v;
    }
    y
}

/// Schroeder reverb: four parallel combs averaged, then series allpasses,
/// mixed `dry * x + wet * reverb(x)`. Each comb's feedback makes it decay by
/// 60 dB over `decay_s`. The output is longer than the input by
/// `ceil(decay_s * sample_rate)` samples to hold the tail.
pub fn reverb<T: Scalar>(
    a: &AudioTrack<T>,
    decay_s: f64,
    cfg: &ReverbConfig,
) -> Result<AudioTrack<T>, DspError> {
    if !(decay_s > 0.0 && decay_s.is_finite()) {
        return Err(DspError::DecayNotPositive(decay_s));
    }
    let sr = a.sample_rate();
    let tail = (decay_s * sr as f64).ceil() as usize;
    let extended = a.resized(a.len() + tail);
    let n_combs = T::from_usize_lossy(cfg.comb_delays_ms.len().max(1));
    Ok(extended.map_channels(|_, x| {
        let mut wet = vec![T::zero(); x.len()];
        for &ms in &cfg.comb_delays_ms {
            let d = delay_samples(ms, sr);
            let g = T::lit(10f64.powf(-3.0 * d as f64 / (decay_s * sr as f64)));
            for (w, c) in wet.iter_mut().zip(comb(x, d, g)) {
                *w += c;
            }
        }
        for w in wet.iter_mut() {
            *w /= n_combs;
        }
        for &(ms, g) in &cfg.allpass {
            wet = allpass(&wet, delay_samples(ms, sr), T::lit(g));
        }
        let (dry, wmix) = (T::lit(cfg.dry), T::lit(cfg.wet));
        x.iter().zip(wet).map(|(&d, w)| dry * d + wmix * w).collect()
    }))
}
