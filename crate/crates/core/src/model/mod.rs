//! Query-conditioned spectrogram network with analytic gradients.
//!
//! Everything runs on a small tape-based autodiff ([`Graph`]); blocks are free
//! functions over graph nodes so that each one can be checked in isolation.

mod blocks;
mod encoder;
mod gradcheck;
mod graph;
mod net;
mod params;
mod tensor;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blocks::{
    aggregate_pocm, csa, decode_block, generate_condition_weights, lsc_extract, pocm, smpocm,
    tfc_tdf, AggregateParams, ConditionWeightGen, DecodeParams, LscParams, PocmVars, TfcTdfParams,
};
pub use encoder::{encode_description, load_text_embeddings, EncoderParams, Vocab, UNKNOWN_TOKEN};
pub use gradcheck::{
    check_leaves, check_leaves_with_step, check_net, check_net_with_step, grad_check,
    GradCheckReport, GradOp, TensorCheck, FD_STEP, FORWARD_CHECK_RATE, JOINT_DIRECTIONS,
};
pub use graph::{Gradients, Graph, Var};
pub use net::{spec_to_tensor, tensor_to_spec, AmssNet, Prepared};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
pub use train::{dataset_loss, train_micro, Adam, TrainConfig, TrainReport};

use crate::aml::AmlError;
use crate::dsp::DspError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{channels} channels cannot be split into {heads} heads")]
    HeadsDontDivide { channels: usize, heads: usize },
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("audio gives {frames} STFT frames; at least {need} are required")]
    AudioTooShort { frames: usize, need: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("no training examples")]
    EmptyDataset,
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Aml(#[from] AmlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Latent channels are merged back to C channels by a 1×1 convolution.
    WithoutCsa,
    /// A single conditioned pointwise convolution with tanh replaces the gated modulation.
    WithoutSmpocm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Internal channels C.
    pub channels: usize,
    /// Latent sources M per head group.
    pub latent: usize,
    /// Attention heads H.
    pub heads: usize,
    /// Word feature width E (two recurrent directions of E/2).
    pub word_dim: usize,
    pub embed_dim: usize,
    pub d_k: usize,
    /// Growth channels of the dense convolutions.
    pub growth: usize,
    /// Frequency bottleneck factor of the fully connected layer.
    pub bottleneck: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub sources: Vec<String>,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 24,
            latent: 8,
            heads: 6,
            word_dim: 64,
            embed_dim: 32,
            d_k: 32,
            growth: 12,
            bottleneck: 4,
            fft_size: 2048,
            hop: 1024,
            sources: crate::aml::DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect(),
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and micro-scale training.
    pub fn micro() -> Self {
        ModelConfig {
            channels: 8,
            latent: 4,
            heads: 2,
            word_dim: 8,
            embed_dim: 8,
            d_k: 8,
            growth: 4,
            bottleneck: 4,
            fft_size: 256,
            hop: 128,
            ..Default::default()
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frequency bins at each encoder resolution.
    pub fn level_bins(&self) -> [usize; 3] {
        let f1 = self.bins();
        let f2 = f1.div_ceil(2);
        [f1, f2, f2.div_ceil(2)]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.channels == 0 || self.latent == 0 || self.heads == 0 || self.d_k == 0 {
            return bad("channels, latent, heads and d_k must be positive".into());
        }
        if self.channels % self.heads != 0 {
            return bad(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            ));
        }
        if self.word_dim < 2 || self.word_dim % 2 != 0 {
            return bad(format!("word_dim {} must be even and ≥ 2", self.word_dim));
        }
        if self.embed_dim == 0 || self.growth == 0 || self.bottleneck == 0 {
            return bad("embed_dim, growth and bottleneck must be positive".into());
        }
        if self.fft_size < 16 || self.fft_size % 2 != 0 {
            return bad(format!("fft_size {} must be even and ≥ 16", self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return bad(format!("hop {} must be in 1..={}", self.hop, self.fft_size));
        }
        if self.sources.is_empty() {
            return bad("no sources".into());
        }
        Ok(())
    }

    /// Parameters of one gated modulation: three `M×M` matrices plus biases.
    pub fn conditioning_params_per_block(&self) -> usize {
        3 * (self.latent * self.latent + self.latent)
    }
}

/// Model in double precision, used for gradient checks and training.
pub type Net = AmssNet<f64>;
/// Single-precision model for forward throughput.
pub type Net32 = AmssNet<f32>;
