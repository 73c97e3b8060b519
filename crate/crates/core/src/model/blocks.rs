//! Network blocks as functions over graph nodes.

use rand::Rng;

use super::{Bound, Graph, ModelError, ParamId, ParamStore, Var, Variant};
#[cfg(test)]
use super::Tensor;
use crate::Scalar;

/// Generated weights of one pointwise channel-mixing convolution.
#[derive(Debug, Clone, Copy)]
pub struct PocmVars {
    /// `[c_out, c_in]`
    pub w: Var,
    /// `[c_out]`
    pub b: Var,
}

/// `Y[c] = Σ w[c, c′] X[c′] + b[c]`, applied per group of input channels.
pub fn pocm<T: Scalar>(g: &mut Graph<T>, x: Var, theta: &PocmVars, groups: usize) -> Result<Var, ModelError> {
    g.channel_mix(x, theta.w, Some(theta.b), groups)
}

/// Gated modulation `i ⊙ tanh(PoCM(s ⊙ X, θm)) + (1 − s) ⊙ X` with
/// `s = σ(PoCM(X, θs))` and `i = σ(PoCM(X, θi))`; `theta` is `[θs, θm, θi]`.
pub fn smpocm<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    theta: &[PocmVars; 3],
    groups: usize,
) -> Result<Var, ModelError> {
    let s_pre = pocm(g, x, &theta[0], groups)?;
    let s = g.sigmoid(s_pre);
    let sx = g.mul(s, x)?;
    let m_pre = pocm(g, sx, &theta[1], groups)?;
    let m = g.tanh(m_pre);
    let i_pre = pocm(g, x, &theta[2], groups)?;
    let i = g.sigmoid(i_pre);
    let edited = g.mul(i, m)?;
    let keep_gate = g.affine(s, -T::one(), T::one());
    let kept = g.mul(keep_gate, x)?;
    g.add(edited, kept)
}

/// Attention-pooled weight generator: learnable queries `Θ` attend over the
/// word features, and one linear head per query emits a PoCM's weights.
#[derive(Debug, Clone)]
pub struct ConditionWeightGen {
    pub theta: ParamId,
    pub key_w: ParamId,
    pub key_b: ParamId,
    pub value_w: ParamId,
    pub value_b: ParamId,
    /// Linear head per query row.
    pub heads: Vec<(ParamId, ParamId)>,
    /// `(c_out, c_in)` of the PoCM each head produces.
    pub shapes: Vec<(usize, usize)>,
    pub d_k: usize,
}

impl ConditionWeightGen {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        shapes: &[(usize, usize)],
        word_dim: usize,
        d_k: usize,
        rng: &mut R,
    ) -> Self {
        let theta = store.add_uniform(format!("{prefix}.theta"), &[shapes.len(), d_k], d_k, rng);
        let key_w = store.add_uniform(format!("{prefix}.key.w"), &[d_k, word_dim], word_dim, rng);
        let key_b = store.add_uniform(format!("{prefix}.key.b"), &[d_k], word_dim, rng);
        let value_w = store.add_uniform(format!("{prefix}.value.w"), &[d_k, word_dim], word_dim, rng);
        let value_b = store.add_uniform(format!("{prefix}.value.b"), &[d_k], word_dim, rng);
        let heads = shapes
            .iter()
            .enumerate()
            .map(|(r, &(co, ci))| {
                let out = co * ci + co;
                (
                    store.add_uniform(format!("{prefix}.head{r}.w"), &[out, d_k], d_k, rng),
                    store.add_uniform(format!("{prefix}.head{r}.b"), &[out], d_k, rng),
                )
            })
            .collect();
        ConditionWeightGen {
            theta,
            key_w,
            key_b,
            value_w,
            value_b,
            heads,
            shapes: shapes.to_vec(),
            d_k,
        }
    }
}

/// `α = softmax(Θ · keysᵀ / √d_k) · values`, then row `r` of `α` goes through
/// head `r` and is split into a weight matrix and a bias.
pub fn generate_condition_weights<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &ConditionWeightGen,
    words: Var,
) -> Result<Vec<PocmVars>, ModelError> {
    if g.shape(words).len() != 2 || g.shape(words)[0] == 0 {
        return Err(ModelError::ShapeMismatch(format!(
            "word features {:?}",
            g.shape(words)
        )));
    }
    let keys = g.linear(words, b.get(p.key_w), Some(b.get(p.key_b)))?;
    let values = g.linear(words, b.get(p.value_w), Some(b.get(p.value_b)))?;
    let logits = g.matmul(b.get(p.theta), keys, true)?;
    let scale = T::one() / T::from_usize_lossy(p.d_k).sqrt();
    let logits = g.affine(logits, scale, T::zero());
    let att = g.softmax_rows(logits);
    let alpha = g.matmul(att, values, false)?;
    let mut out = Vec::with_capacity(p.heads.len());
    for (r, (&(hw, hb), &(co, ci))) in p.heads.iter().zip(&p.shapes).enumerate() {
        let row = g.slice(alpha, 0, r, 1)?;
        let flat = g.linear(row, b.get(hw), Some(b.get(hb)))?;
        let w = g.slice(flat, 1, 0, co * ci)?;
        let w = g.reshape(w, &[co, ci])?;
        let bias = g.slice(flat, 1, co * ci, co)?;
        let bias = g.reshape(bias, &[co])?;
        out.push(PocmVars { w, b: bias });
    }
    Ok(out)
}

/// Dense convolutions followed by a frequency-axis bottleneck.
#[derive(Debug, Clone)]
pub struct TfcTdfParams {
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub proj: (ParamId, ParamId),
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
    pub c_in: usize,
    pub c_out: usize,
    pub bins: usize,
}

impl TfcTdfParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        growth: usize,
        bins: usize,
        bottleneck: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = (bins / bottleneck).max(1);
        let mut pair = |name: &str, w_shape: &[usize], b_len: usize, fan_in: usize| {
            (
                store.add_uniform(format!("{prefix}.{name}.w"), w_shape, fan_in, rng),
                store.add_uniform(format!("{prefix}.{name}.b"), &[b_len], fan_in, rng),
            )
        };
        let conv1 = pair("conv1", &[growth, c_in, 3, 3], growth, c_in * 9);
        let conv2 = pair("conv2", &[growth, c_in + growth, 3, 3], growth, (c_in + growth) * 9);
        let proj = pair("proj", &[c_out, c_in + 2 * growth], c_out, c_in + 2 * growth);
        let fc1 = pair("fc1", &[hidden, bins], hidden, bins);
        let fc2 = pair("fc2", &[bins, hidden], bins, hidden);
        TfcTdfParams {
            conv1,
            conv2,
            proj,
            fc1,
            fc2,
            c_in,
            c_out,
            bins,
        }
    }
}

/// Two densely connected 3×3 convolutions with ReLU, a 1×1 projection to
/// `c_out` with ReLU (`P`), then `P + relu(fc2(relu(fc1(P))))` with the fully
/// connected layers acting along frequency.
pub fn tfc_tdf<T: Scalar>(g: &mut Graph<T>, b: &Bound, p: &TfcTdfParams, x: Var) -> Result<Var, ModelError> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[0] != p.c_in || s[2] != p.bins {
        return Err(ModelError::ShapeMismatch(format!(
            "block expects [{}, T, {}], got {s:?}",
            p.c_in, p.bins
        )));
    }
    let h1 = g.conv2d(x, b.get(p.conv1.0), Some(b.get(p.conv1.1)), (1, 1), (1, 1))?;
    let h1 = g.relu(h1);
    let cat1 = g.concat(&[x, h1], 0)?;
    let h2 = g.conv2d(cat1, b.get(p.conv2.0), Some(b.get(p.conv2.1)), (1, 1), (1, 1))?;
    let h2 = g.relu(h2);
    let cat2 = g.concat(&[x, h1, h2], 0)?;
    let proj = g.channel_mix(cat2, b.get(p.proj.0), Some(b.get(p.proj.1)), 1)?;
    let proj = g.relu(proj);
    let rows = g.reshape(proj, &[p.c_out * s[1], p.bins])?;
    let f1 = g.linear(rows, b.get(p.fc1.0), Some(b.get(p.fc1.1)))?;
    let f1 = g.relu(f1);
    let f2 = g.linear(f1, b.get(p.fc2.0), Some(b.get(p.fc2.1)))?;
    let f2 = g.relu(f2);
    let tdf = g.reshape(f2, &[p.c_out, s[1], p.bins])?;
    g.add(proj, tdf)
}

/// Latent-source extractor: block over `[X_E; X_D]`, then 1×1 convolutions
/// to `H·M` value and key channels.
#[derive(Debug, Clone)]
pub struct LscParams {
    pub block: TfcTdfParams,
    pub value: (ParamId, ParamId),
    pub key: (ParamId, ParamId),
    pub heads: usize,
    pub latent: usize,
}

pub fn lsc_extract<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &LscParams,
    x_e: Var,
    x_d: Var,
) -> Result<(Var, Var), ModelError> {
    if g.shape(x_e) != g.shape(x_d) {
        return Err(ModelError::ShapeMismatch(format!(
            "encoder {:?} vs decoder {:?}",
            g.shape(x_e),
            g.shape(x_d)
        )));
    }
    let cat = g.concat(&[x_e, x_d], 0)?;
    let x = tfc_tdf(g, b, &p.block, cat)?;
    let v = g.channel_mix(x, b.get(p.value.0), Some(b.get(p.value.1)), 1)?;
    let k = g.channel_mix(x, b.get(p.key.0), Some(b.get(p.key.1)), 1)?;
    Ok((v, k))
}

/// Channel-wise skip attention, see [`Graph::csa`].
pub fn csa<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, ModelError> {
    g.csa(q, k, v, heads)
}

#[derive(Debug, Clone)]
pub struct DecodeParams {
    pub lsc: LscParams,
    pub gen: ConditionWeightGen,
    pub query: (ParamId, ParamId),
    /// 1×1 merge from `H·M` to `C` channels, used instead of attention.
    pub merge: Option<(ParamId, ParamId)>,
    pub variant: Variant,
}

impl DecodeParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &super::ModelConfig,
        bins: usize,
        rng: &mut R,
    ) -> Self {
        let (c, hm, m) = (cfg.channels, cfg.heads * cfg.latent, cfg.latent);
        let block = TfcTdfParams::register(
            store,
            &format!("{prefix}.lsc.block"),
            2 * c,
            c,
            cfg.growth,
            bins,
            cfg.bottleneck,
            rng,
        );
        let value = (
            store.add_uniform(format!("{prefix}.lsc.value.w"), &[hm, c], c, rng),
            store.add_uniform(format!("{prefix}.lsc.value.b"), &[hm], c, rng),
        );
        let key = (
            store.add_uniform(format!("{prefix}.lsc.key.w"), &[hm, c], c, rng),
            store.add_uniform(format!("{prefix}.lsc.key.b"), &[hm], c, rng),
        );
        let rows: &[(usize, usize)] = match cfg.variant {
            Variant::WithoutSmpocm => &[(m, m)],
            _ => &[(m, m), (m, m), (m, m)],
        };
        let gen = ConditionWeightGen::register(
            store,
            &format!("{prefix}.gen"),
            rows,
            cfg.word_dim,
            cfg.d_k,
            rng,
        );
        let query = (
            store.add_uniform(format!("{prefix}.query.w"), &[c, c], c, rng),
            store.add_uniform(format!("{prefix}.query.b"), &[c], c, rng),
        );
        let merge = (cfg.variant == Variant::WithoutCsa).then(|| {
            (
                store.add_uniform(format!("{prefix}.merge.w"), &[c, hm], hm, rng),
                store.add_uniform(format!("{prefix}.merge.b"), &[c], hm, rng),
            )
        });
        DecodeParams {
            lsc: LscParams {
                block,
                value,
                key,
                heads: cfg.heads,
                latent: m,
            },
            gen,
            query,
            merge,
            variant: cfg.variant,
        }
    }
}

/// Extract latent sources, modulate them with query-generated weights shared
/// across head groups, and attend from the encoder features.
pub fn decode_block<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &DecodeParams,
    x_d: Var,
    x_e: Var,
    words: Var,
) -> Result<Var, ModelError> {
    let heads = p.lsc.heads;
    let (v, k) = lsc_extract(g, b, &p.lsc, x_e, x_d)?;
    let theta = generate_condition_weights(g, b, &p.gen, words)?;
    let v_mod = match p.variant {
        Variant::WithoutSmpocm => {
            let y = pocm(g, v, &theta[0], heads)?;
            g.tanh(y)
        }
        _ => smpocm(g, v, &[theta[0], theta[1], theta[2]], heads)?,
    };
    match p.merge {
        Some((mw, mb)) => g.channel_mix(v_mod, b.get(mw), Some(b.get(mb)), 1),
        None => {
            let q = g.channel_mix(x_e, b.get(p.query.0), Some(b.get(p.query.1)), 1)?;
            g.csa(q, k, v_mod, heads)
        }
    }
}

#[derive(Debug, Clone)]
pub struct AggregateParams {
    pub gen: ConditionWeightGen,
}

/// Conditioned pointwise convolution from `C` channels to the four
/// `(left re, left im, right re, right im)` planes, without activation.
pub fn aggregate_pocm<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &AggregateParams,
    x: Var,
    words: Var,
) -> Result<Var, ModelError> {
    let theta = generate_condition_weights(g, b, &p.gen, words)?;
    pocm(g, x, &theta[0], 1)
}

/// Brute-force helpers shared by unit tests.
#[cfg(test)]
pub(crate) fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::SeedableRng;
    Tensor::uniform(shape, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
}
