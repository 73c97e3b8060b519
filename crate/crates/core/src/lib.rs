//! Text-queried manipulation of individual sources in a music mixture.
//!
//! - [`aml`]: the query language (grammar, parser, generator, interpretation).
//! - [`dsp`]: stems, mixing, the editing effects, STFT and MFCC.
//! - [`triplegen`]: synthesis of (input, target, query) training triples.
//! - [`model`]: the query-conditioned network with checked gradients.
//! - [`metrics`]: SDR, RMSE-MFCC and the benchmark.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod aml;
pub mod config;
pub mod dsp;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod triplegen;

pub use config::{ConfigError, ToolConfig};
pub use scalar::Scalar;

pub type Track = dsp::AudioTrack<f64>;
pub type Track32 = dsp::AudioTrack<f32>;
pub type Stems = dsp::MultiTrack<f64>;
pub type Stems32 = dsp::MultiTrack<f32>;
pub type Triple = triplegen::AmssTriple<f64>;
pub type Triple32 = triplegen::AmssTriple<f32>;
pub type Net = model::AmssNet<f64>;
pub type Net32 = model::AmssNet<f32>;
pub type Spec = dsp::Spectrogram<f64>;
