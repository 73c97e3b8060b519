//! Word embedding plus bidirectional gated recurrent encoder.

use std::collections::HashMap;

use rand::Rng;

use super::{Bound, Graph, ModelError, ParamId, ParamStore, Tensor, Var};
use crate::aml::{tokenize, Grammar};
use crate::Scalar;

/// Reserved token for words outside the vocabulary; always index 0.
pub const UNKNOWN_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
        for w in words {
            let w = w.as_ref();
            if !tokens.iter().any(|t| t == w) {
                tokens.push(w.to_string());
            }
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// Terminals of the full query grammar over `sources`.
    pub fn for_sources<S: AsRef<str>>(sources: &[S]) -> Self {
        Self::new(Grammar::full(sources).terminals())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Token ids of a query; unknown words map to [`UNKNOWN_TOKEN`].
    pub fn encode(&self, query: &str) -> Result<Vec<usize>, ModelError> {
        let toks = tokenize(query)?;
        if toks.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        Ok(toks.iter().map(|t| self.id(t)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruParams {
    fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        GruParams {
            w_ih: store.add_uniform(format!("{prefix}.w_ih"), &[3 * hidden, input], hidden, rng),
            w_hh: store.add_uniform(format!("{prefix}.w_hh"), &[3 * hidden, hidden], hidden, rng),
            b_ih: store.add_uniform(format!("{prefix}.b_ih"), &[3 * hidden], hidden, rng),
            b_hh: store.add_uniform(format!("{prefix}.b_hh"), &[3 * hidden], hidden, rng),
            hidden,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub forward: GruParams,
    pub backward: GruParams,
}

impl EncoderParams {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        vocab_len: usize,
        embed_dim: usize,
        word_dim: usize,
        rng: &mut R,
    ) -> Self {
        let embedding = store.add("encoder.embedding", Tensor::uniform(&[vocab_len, embed_dim], 0.1, rng));
        let hidden = word_dim / 2;
        EncoderParams {
            embedding,
            forward: GruParams::register(store, "encoder.fwd", embed_dim, hidden, rng),
            backward: GruParams::register(store, "encoder.bwd", embed_dim, hidden, rng),
        }
    }
}

/// Runs one direction over `order`, returning the state after each step in
/// the order visited.
fn gru_pass<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &GruParams,
    gates_in: Var,
    order: &[usize],
) -> Result<Vec<Var>, ModelError> {
    let h = p.hidden;
    let mut state = g.constant(Tensor::zeros(&[1, h]));
    let mut out = Vec::with_capacity(order.len());
    for &t in order {
        let gi = g.slice(gates_in, 0, t, 1)?;
        let gh = g.linear(state, b.get(p.w_hh), Some(b.get(p.b_hh)))?;
        let (ri, rh) = (g.slice(gi, 1, 0, h)?, g.slice(gh, 1, 0, h)?);
        let r_pre = g.add(ri, rh)?;
        let r = g.sigmoid(r_pre);
        let (zi, zh) = (g.slice(gi, 1, h, h)?, g.slice(gh, 1, h, h)?);
        let z_pre = g.add(zi, zh)?;
        let z = g.sigmoid(z_pre);
        let (ni, nh) = (g.slice(gi, 1, 2 * h, h)?, g.slice(gh, 1, 2 * h, h)?);
        let gated = g.mul(r, nh)?;
        let n_pre = g.add(ni, gated)?;
        let n = g.tanh(n_pre);
        // h' = (1 − z) ⊙ n + z ⊙ h
        let diff = g.sub(state, n)?;
        let step = g.mul(z, diff)?;
        state = g.add(n, step)?;
        out.push(state);
    }
    Ok(out)
}

/// Word features `[L, E]`; row `ℓ` is the forward state after token `ℓ`
/// followed by the backward state after token `ℓ`.
pub fn encode_description<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &EncoderParams,
    tokens: &[usize],
) -> Result<Var, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptyQuery);
    }
    let emb = g.embedding(b.get(p.embedding), tokens)?;
    let fwd_in = g.linear(emb, b.get(p.forward.w_ih), Some(b.get(p.forward.b_ih)))?;
    let bwd_in = g.linear(emb, b.get(p.backward.w_ih), Some(b.get(p.backward.b_ih)))?;
    let n = tokens.len();
    let order: Vec<usize> = (0..n).collect();
    let rev: Vec<usize> = (0..n).rev().collect();
    let fwd = gru_pass(g, b, &p.forward, fwd_in, &order)?;
    let mut bwd = gru_pass(g, b, &p.backward, bwd_in, &rev)?;
    bwd.reverse();
    let f = g.concat(&fwd, 0)?;
    let r = g.concat(&bwd, 0)?;
    g.concat(&[f, r], 1)
}

/// Parses whitespace-separated `token v1 … vD` lines and returns the vectors
/// of tokens present in `vocab`. Lines of a different width are rejected.
pub fn load_text_embeddings(
    text: &str,
    vocab: &Vocab,
    dim: usize,
) -> Result<Vec<(usize, Vec<f64>)>, ModelError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(tok) = parts.next() else { continue };
        let vals: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ModelError::InvalidConfig(format!("embedding line {}: {e}", n + 1)))?;
        if vals.len() != dim {
            return Err(ModelError::InvalidConfig(format!(
                "embedding line {} has {} values, expected {dim}",
                n + 1,
                vals.len()
            )));
        }
        let id = vocab.id(tok);
        if id != 0 || tok == UNKNOWN_TOKEN {
            out.push((id, vals));
        }
    }
    Ok(out)
}
