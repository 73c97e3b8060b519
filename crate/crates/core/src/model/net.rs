use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::blocks::{aggregate_pocm, decode_block, tfc_tdf};
use super::encoder::{encode_description, load_text_embeddings};
use super::{
    AggregateParams, Bound, ConditionWeightGen, DecodeParams, EncoderParams, Graph, ModelConfig,
    ModelError, ParamId, ParamStore, Tensor, TfcTdfParams, Var, Vocab,
};
use crate::dsp::{istft, stft, AudioTrack, Spectrogram};
use crate::Scalar;

/// Fewest STFT frames the network accepts.
pub const MIN_FRAMES: usize = 4;

const MAGIC: &[u8; 8] = b"AMSSNET\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
struct Layout {
    encoder: EncoderParams,
    conv_in: (ParamId, ParamId),
    enc: Vec<TfcTdfParams>,
    down: Vec<(ParamId, ParamId)>,
    up: Vec<(ParamId, ParamId)>,
    dec: Vec<DecodeParams>,
    agg: AggregateParams,
}

/// Encoder-decoder over complex stereo spectrograms, conditioned on a query.
///
/// Layout: input conv → block → down → block → down → block → up →
/// decoding block → up → decoding block → aggregate PoCM.
#[derive(Debug, Clone)]
pub struct AmssNet<T> {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamStore<T>,
    layout: Layout,
}

/// Training example in network coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
    pub tokens: Vec<usize>,
}

/// `[4, T, F]` planes ordered left re, left im, right re, right im.
pub fn spec_to_tensor<T: Scalar>(s: &Spectrogram<T>) -> Tensor<T> {
    let (frames, bins) = (s.frames(), s.bins());
    let mut data = vec![T::zero(); 4 * frames * bins];
    for c in 0..2 {
        for t in 0..frames {
            for (f, z) in s.frame(c, t).iter().enumerate() {
                data[((2 * c) * frames + t) * bins + f] = z.re;
                data[((2 * c + 1) * frames + t) * bins + f] = z.im;
            }
        }
    }
    Tensor::from_vec(&[4, frames, bins], data).expect("consistent size")
}

/// Inverse of [`spec_to_tensor`].
pub fn tensor_to_spec<T: Scalar>(
    t: &Tensor<T>,
    fft_size: usize,
    hop: usize,
    sample_rate: u32,
) -> Result<Spectrogram<T>, ModelError> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 4 || s[2] != fft_size / 2 + 1 {
        return Err(ModelError::ShapeMismatch(format!(
            "expected [4, T, {}], got {s:?}",
            fft_size / 2 + 1
        )));
    }
    let (frames, bins) = (s[1], s[2]);
    let d = t.data();
    let mut values = Vec::with_capacity(2 * frames * bins);
    for c in 0..2 {
        for tt in 0..frames {
            for f in 0..bins {
                values.push(Complex::new(
                    d[((2 * c) * frames + tt) * bins + f],
                    d[((2 * c + 1) * frames + tt) * bins + f],
                ));
            }
        }
    }
    Ok(Spectrogram::from_values(values, frames, fft_size, hop, sample_rate)?)
}

fn conv_pair<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    w_shape: [usize; 4],
    fan_in: usize,
    bias: usize,
    rng: &mut ChaCha8Rng,
) -> (ParamId, ParamId) {
    (
        store.add_uniform(format!("{name}.w"), &w_shape, fan_in, rng),
        store.add_uniform(format!("{name}.b"), &[bias], fan_in, rng),
    )
}

impl<T: Scalar> AmssNet<T> {
    /// Randomly initialised network; parameters depend only on `config` and `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let vocab = Vocab::for_sources(&config.sources);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.channels;
        let bins = config.level_bins();
        let encoder = EncoderParams::register(&mut store, vocab.len(), config.embed_dim, config.word_dim, &mut rng);
        let conv_in = conv_pair(&mut store, "conv_in", [c, 4, 3, 3], 4 * 9, c, &mut rng);
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for (k, &f) in bins.iter().enumerate() {
            enc.push(TfcTdfParams::register(
                &mut store,
                &format!("enc{}", k + 1),
                c,
                c,
                config.growth,
                f,
                config.bottleneck,
                &mut rng,
            ));
            if k < 2 {
                down.push(conv_pair(&mut store, &format!("down{}", k + 1), [c, c, 3, 3], c * 9, c, &mut rng));
            }
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for k in 0..2 {
            up.push(conv_pair(&mut store, &format!("up{}", k + 1), [c, c, 3, 3], c * 9, c, &mut rng));
            dec.push(DecodeParams::register(
                &mut store,
                &format!("dec{}", k + 1),
                &config,
                bins[1 - k],
                &mut rng,
            ));
        }
        let agg = AggregateParams {
            gen: ConditionWeightGen::register(&mut store, "aggregate", &[(4, c)], config.word_dim, config.d_k, &mut rng),
        };
        Ok(AmssNet {
            config,
            vocab,
            params: store,
            layout: Layout {
                encoder,
                conv_in,
                enc,
                down,
                up,
                dec,
                agg,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Conditioning parameters generated per decoding block.
    pub fn generated_params_per_block(&self) -> usize {
        self.layout.dec[0]
            .gen
            .shapes
            .iter()
            .map(|&(co, ci)| co * ci + co)
            .sum()
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.layout.encoder
    }

    pub fn decode_params(&self, k: usize) -> &DecodeParams {
        &self.layout.dec[k]
    }

    pub fn aggregate_params(&self) -> &AggregateParams {
        &self.layout.agg
    }

    /// Appends the network to `g`: `input` is `[4, T, F]`, the result has the same shape.
    pub fn build(&self, g: &mut Graph<T>, b: &Bound, input: Var, tokens: &[usize]) -> Result<Var, ModelError> {
        let s = g.shape(input).to_vec();
        if s.len() != 3 || s[0] != 4 || s[2] != self.config.bins() {
            return Err(ModelError::ShapeMismatch(format!(
                "network input must be [4, T, {}], got {s:?}",
                self.config.bins()
            )));
        }
        if s[1] < MIN_FRAMES {
            return Err(ModelError::AudioTooShort {
                frames: s[1],
                need: MIN_FRAMES,
            });
        }
        let l = &self.layout;
        let words = encode_description(g, b, &l.encoder, tokens)?;
        let x = g.conv2d(input, b.get(l.conv_in.0), Some(b.get(l.conv_in.1)), (1, 1), (1, 1))?;
        let e1 = tfc_tdf(g, b, &l.enc[0], x)?;
        let d1 = g.conv2d(e1, b.get(l.down[0].0), Some(b.get(l.down[0].1)), (2, 2), (1, 1))?;
        let e2 = tfc_tdf(g, b, &l.enc[1], d1)?;
        let d2 = g.conv2d(e2, b.get(l.down[1].0), Some(b.get(l.down[1].1)), (2, 2), (1, 1))?;
        let e3 = tfc_tdf(g, b, &l.enc[2], d2)?;
        let hw = |g: &Graph<T>, v: Var| (g.shape(v)[1], g.shape(v)[2]);
        let target = hw(g, e2);
        let u1 = g.conv_transpose2d(e3, b.get(l.up[0].0), Some(b.get(l.up[0].1)), (2, 2), (1, 1), target)?;
        let y1 = decode_block(g, b, &l.dec[0], u1, e2, words)?;
        let target = hw(g, e1);
        let u2 = g.conv_transpose2d(y1, b.get(l.up[1].0), Some(b.get(l.up[1].1)), (2, 2), (1, 1), target)?;
        let y2 = decode_block(g, b, &l.dec[1], u2, e1, words)?;
        aggregate_pocm(g, b, &l.agg, y2, words)
    }

    /// Network input for an audio track.
    pub fn prepare_audio(&self, a: &AudioTrack<T>) -> Result<Tensor<T>, ModelError> {
        let frames = crate::dsp::stft_frame_count(a.len(), self.config.hop);
        if frames < MIN_FRAMES || a.len() <= self.config.fft_size / 2 {
            return Err(ModelError::AudioTooShort {
                frames,
                need: MIN_FRAMES,
            });
        }
        Ok(spec_to_tensor(&stft(a, self.config.fft_size, self.config.hop)?))
    }

    pub fn prepare(&self, input: &AudioTrack<T>, target: &AudioTrack<T>, query: &str) -> Result<Prepared<T>, ModelError> {
        Ok(Prepared {
            input: self.prepare_audio(input)?,
            target: self.prepare_audio(target)?,
            tokens: self.vocab.encode(query)?,
        })
    }

    /// Estimated spectrogram planes for a spectrogram tensor.
    pub fn forward_spec(&self, spec: &Tensor<T>, query: &str) -> Result<Tensor<T>, ModelError> {
        let tokens = self.vocab.encode(query)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.constant(spec.clone());
        let y = self.build(&mut g, &b, x, &tokens)?;
        Ok(g.value(y).clone())
    }

    /// STFT → network → inverse STFT, trimmed to the input length.
    pub fn forward(&self, a: &AudioTrack<T>, query: &str) -> Result<AudioTrack<T>, ModelError> {
        let spec = self.prepare_audio(a)?;
        let out = self.forward_spec(&spec, query)?;
        let s = tensor_to_spec(&out, self.config.fft_size, self.config.hop, a.sample_rate())?;
        Ok(istft(&s, a.len())?)
    }

    /// Spectrogram L2 loss and its gradient for every parameter tensor.
    pub fn loss_and_grads(&self, ex: &Prepared<T>) -> Result<(T, Vec<Tensor<T>>), ModelError> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, true);
        let x = g.constant(ex.input.clone());
        let y = self.build(&mut g, &b, x, &ex.tokens)?;
        let target = g.constant(ex.target.clone());
        let loss = g.mse(y, target)?;
        let mut grads = g.backward(loss);
        let gs = b
            .vars()
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((g.value(loss).data()[0], gs))
    }

    pub fn loss(&self, ex: &Prepared<T>) -> Result<T, ModelError> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.constant(ex.input.clone());
        let y = self.build(&mut g, &b, x, &ex.tokens)?;
        let target = g.constant(ex.target.clone());
        let loss = g.mse(y, target)?;
        Ok(g.value(loss).data()[0])
    }

    /// Copies pretrained word vectors into the embedding table.
    pub fn load_embeddings(&mut self, text: &str) -> Result<usize, ModelError> {
        let dim = self.config.embed_dim;
        let rows = load_text_embeddings(text, &self.vocab, dim)?;
        let table = self.params.get_mut(self.layout.encoder.embedding);
        for (id, vals) in &rows {
            for (k, v) in vals.iter().enumerate() {
                table.data_mut()[id * dim + k] = T::lit(*v);
            }
        }
        Ok(rows.len())
    }

    pub fn cast<U: Scalar>(&self) -> AmssNet<U> {
        AmssNet {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Checkpoint: magic, version, config JSON, shape table, then every
    /// parameter as little-endian `f64` in declaration order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        buf.extend_from_slice(&cfg);
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for t in self.params.tensors() {
            for v in t.data() {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let config: ModelConfig =
            serde_json::from_slice(r.take(n)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut net = AmssNet::<T>::new(config, 0)?;
        let count = r.u64()? as usize;
        if count != net.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "{count} tensors, model has {}",
                net.params.len()
            )));
        }
        let mut shapes = Vec::with_capacity(count);
        for i in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8_lossy(r.take(len)?).into_owned();
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
            if name != net.params.names()[i] || shape != net.params.tensors()[i].shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {i} is {name} {shape:?}, expected {} {:?}",
                    net.params.names()[i],
                    net.params.tensors()[i].shape()
                )));
            }
            shapes.push(shape);
        }
        let mut values = Vec::with_capacity(count);
        for shape in shapes {
            let len: usize = shape.iter().product();
            let data = (0..len)
                .map(|_| r.f64().map(T::lit))
                .collect::<Result<Vec<T>, _>>()?;
            values.push(Tensor::from_vec(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        net.params.set_all(values)?;
        Ok(net)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
