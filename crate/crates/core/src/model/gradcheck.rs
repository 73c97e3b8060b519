//! Analytic gradients against central finite differences.
//!
//! Each leaf tensor gets a random direction `d`; the analytic directional
//! derivative `⟨∇L, d⟩` is compared with `(L(x + h·d) − L(x − h·d)) / 2h`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{
    aggregate_pocm, csa, generate_condition_weights, pocm, smpocm, tfc_tdf, AggregateParams,
    ConditionWeightGen, PocmVars, TfcTdfParams,
};
use super::encoder::{encode_description, EncoderParams};
use super::{AmssNet, Graph, ModelConfig, ModelError, ParamStore, Prepared, Tensor, Var};
use crate::dsp::synth::three_stem_multitrack;
use crate::dsp::mix;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradOp {
    Pocm,
    Smpocm,
    GenerateConditionWeights,
    TfcTdf,
    Csa,
    AggregatePocm,
    EncodeDescription,
    ForwardMicro,
}

impl GradOp {
    pub const ALL: [GradOp; 8] = [
        GradOp::Pocm,
        GradOp::Smpocm,
        GradOp::GenerateConditionWeights,
        GradOp::TfcTdf,
        GradOp::Csa,
        GradOp::AggregatePocm,
        GradOp::EncodeDescription,
        GradOp::ForwardMicro,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Pocm => "pocm",
            GradOp::Smpocm => "smpocm",
            GradOp::GenerateConditionWeights => "generate-condition-weights",
            GradOp::TfcTdf => "tfc-tdf",
            GradOp::Csa => "csa",
            GradOp::AggregatePocm => "aggregate-pocm",
            GradOp::EncodeDescription => "encode-description",
            GradOp::ForwardMicro => "forward-micro",
        }
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradOp {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        GradOp::ALL
            .into_iter()
            .find(|op| op.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = GradOp::ALL.iter().map(|o| o.name()).collect();
                ModelError::InvalidConfig(format!("unknown op {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub analytic: f64,
    /// Central difference with the activation pattern held at the point.
    pub numeric: f64,
    pub rel_error: f64,
    /// Plain central difference.
    pub numeric_raw: f64,
    pub raw_rel_error: f64,
    /// ReLU inputs that change sign inside the difference interval; each one
    /// adds a truncation term to the plain difference.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub op: GradOp,
    /// Worst error over the joint directions.
    pub max_rel_error: f64,
    /// One random direction through every leaf at once.
    pub joint: Vec<TensorCheck>,
    /// Per-leaf directions. Diagnostic only: for leaves with a tiny influence
    /// on the loss the central difference hits the rounding floor of the loss
    /// value itself.
    pub checks: Vec<TensorCheck>,
}

impl GradCheckReport {
    /// Worst error over the per-leaf directions.
    pub fn max_leaf_error(&self) -> f64 {
        self.checks.iter().fold(0.0f64, |m, c| m.max(c.rel_error))
    }

    /// Worst plain-difference error over the joint directions.
    pub fn max_raw_error(&self) -> f64 {
        self.joint.iter().fold(0.0f64, |m, c| m.max(c.raw_rel_error))
    }
}

/// Number of joint directions drawn per check.
pub const JOINT_DIRECTIONS: usize = 3;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

type BuildFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, ModelError> + 'a;

/// Checks the gradient of `build` with respect to every leaf. A non-scalar
/// output is reduced with a fixed random weighting.
pub fn check_leaves(
    op: GradOp,
    leaves: &[(String, Tensor<f64>)],
    build: &BuildFn<'_>,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    check_leaves_with_step(op, leaves, build, seed, FD_STEP)
}

/// [`check_leaves`] with an explicit finite-difference step.
pub fn check_leaves_with_step(
    op: GradOp,
    leaves: &[(String, Tensor<f64>)],
    build: &BuildFn<'_>,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let eval = |values: &[Tensor<f64>], weights: Option<&Tensor<f64>>, grads: bool, frozen: Option<&Vec<bool>>| {
        let mut g = match frozen {
            Some(p) => Graph::with_relu_pattern(p.clone()),
            None => Graph::new(),
        };
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let loss = match weights {
            Some(c) if g.shape(out) != [1] => g.dot_const(out, c.clone())?,
            _ => out,
        };
        let value = g.value(loss).data()[0];
        let gs = if grads {
            let mut gr = g.backward(loss);
            vars.iter()
                .zip(values)
                .map(|(&v, t)| gr.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect()
        } else {
            Vec::new()
        };
        Ok::<_, ModelError>((value, gs, g.shape(out).to_vec(), g.relu_pattern()))
    };
    let base: Vec<Tensor<f64>> = leaves.iter().map(|(_, t)| t.clone()).collect();
    let (_, _, out_shape, pattern) = eval(&base, None, false, None)?;
    let weights = Tensor::uniform(&out_shape, 1.0, &mut rng);
    let (_, grads, _, _) = eval(&base, Some(&weights), true, None)?;
    let directional = |name: String, dirs: &[Option<Tensor<f64>>]| {
        let mut analytic = 0.0;
        let (mut plus, mut minus) = (base.clone(), base.clone());
        for (i, d) in dirs.iter().enumerate() {
            if let Some(d) = d {
                analytic += grads[i].dot(d);
                plus[i].axpy(step, d);
                minus[i].axpy(-step, d);
            }
        }
        let (lp, _, _, pp) = eval(&plus, Some(&weights), false, None)?;
        let (lm, _, _, pm) = eval(&minus, Some(&weights), false, None)?;
        let numeric_raw = (lp - lm) / (2.0 * step);
        let (fp, _, _, _) = eval(&plus, Some(&weights), false, Some(&pattern))?;
        let (fm, _, _, _) = eval(&minus, Some(&weights), false, Some(&pattern))?;
        let numeric = (fp - fm) / (2.0 * step);
        let kinks = (0..pattern.len())
            .filter(|&j| pp[j] != pattern[j] || pm[j] != pattern[j])
            .count();
        Ok::<_, ModelError>(TensorCheck {
            name,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
            numeric_raw,
            raw_rel_error: rel_error(analytic, numeric_raw),
            kinks,
        })
    };
    let mut joint = Vec::with_capacity(JOINT_DIRECTIONS);
    for k in 0..JOINT_DIRECTIONS {
        let dirs: Vec<_> = base
            .iter()
            .map(|t| Some(Tensor::uniform(t.shape(), 1.0, &mut rng)))
            .collect();
        joint.push(directional(format!("joint-{k}"), &dirs)?);
    }
    let mut checks = Vec::with_capacity(leaves.len());
    for (i, (name, t)) in leaves.iter().enumerate() {
        let mut dirs = vec![None; leaves.len()];
        dirs[i] = Some(Tensor::uniform(t.shape(), 1.0, &mut rng));
        checks.push(directional(name.clone(), &dirs)?);
    }
    let max_rel_error = joint.iter().fold(0.0f64, |m, c| m.max(c.rel_error));
    Ok(GradCheckReport {
        op,
        max_rel_error,
        joint,
        checks,
    })
}

/// Parameter and input gradients of the spectrogram loss of `net` on `ex`.
pub fn check_net(net: &AmssNet<f64>, ex: &Prepared<f64>, seed: u64) -> Result<GradCheckReport, ModelError> {
    check_net_with_step(net, ex, seed, FD_STEP)
}

pub fn check_net_with_step(
    net: &AmssNet<f64>,
    ex: &Prepared<f64>,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport, ModelError> {
    let mut leaves: Vec<(String, Tensor<f64>)> = net
        .params()
        .names()
        .iter()
        .cloned()
        .zip(net.params().tensors().iter().cloned())
        .collect();
    leaves.push(("input".into(), ex.input.clone()));
    let n = net.params().len();
    let build = |g: &mut Graph<f64>, vars: &[Var]| {
        let b = super::Bound(vars[..n].to_vec());
        let y = net.build(g, &b, vars[n], &ex.tokens)?;
        let target = g.constant(ex.target.clone());
        g.mse(y, target)
    };
    check_leaves_with_step(GradOp::ForwardMicro, &leaves, &build, seed, step)
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

fn store_leaves(store: &ParamStore<f64>) -> Vec<(String, Tensor<f64>)> {
    store
        .names()
        .iter()
        .cloned()
        .zip(store.tensors().iter().cloned())
        .collect()
}

/// Flattens generated PoCM weights into one `[1, n]` row.
fn flatten(g: &mut Graph<f64>, thetas: &[PocmVars]) -> Result<Var, ModelError> {
    let mut parts = Vec::new();
    for t in thetas {
        for v in [t.w, t.b] {
            let n = g.value(v).len();
            parts.push(g.reshape(v, &[1, n])?);
        }
    }
    g.concat(&parts, 1)
}

/// Sample rate of the forward-pass check (1 s of audio).
pub const FORWARD_CHECK_RATE: u32 = 8000;

/// Runs the check for one operation at a random point drawn from `seed`.
pub fn grad_check(op: GradOp, seed: u64) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, h, t, f) = (4, 2, 3, 5);
    match op {
        GradOp::Pocm => {
            let leaves = vec![
                ("x".to_string(), rand_t(&[m, t, f], &mut rng)),
                ("w".to_string(), rand_t(&[m, m], &mut rng)),
                ("b".to_string(), rand_t(&[m], &mut rng)),
            ];
            check_leaves(op, &leaves, &|g, v| pocm(g, v[0], &PocmVars { w: v[1], b: v[2] }, 1), seed)
        }
        GradOp::Smpocm => {
            let mut leaves = vec![("x".to_string(), rand_t(&[h * m, t, f], &mut rng))];
            for name in ["s", "m", "i"] {
                leaves.push((format!("theta_{name}.w"), rand_t(&[m, m], &mut rng)));
                leaves.push((format!("theta_{name}.b"), rand_t(&[m], &mut rng)));
            }
            check_leaves(
                op,
                &leaves,
                &|g, v| {
                    let th = [
                        PocmVars { w: v[1], b: v[2] },
                        PocmVars { w: v[3], b: v[4] },
                        PocmVars { w: v[5], b: v[6] },
                    ];
                    smpocm(g, v[0], &th, h)
                },
                seed,
            )
        }
        GradOp::GenerateConditionWeights => {
            let mut store = ParamStore::new();
            let gen = ConditionWeightGen::register(&mut store, "gen", &[(m, m); 3], 8, 6, &mut rng);
            let mut leaves = store_leaves(&store);
            leaves.push(("words".into(), rand_t(&[3, 8], &mut rng)));
            let n = store.len();
            check_leaves(
                op,
                &leaves,
                &|g, v| {
                    let b = super::Bound(v[..n].to_vec());
                    let th = generate_condition_weights(g, &b, &gen, v[n])?;
                    flatten(g, &th)
                },
                seed,
            )
        }
        GradOp::TfcTdf => {
            let mut store = ParamStore::new();
            let p = TfcTdfParams::register(&mut store, "block", 3, 4, 2, 8, 4, &mut rng);
            let mut leaves = store_leaves(&store);
            leaves.push(("x".into(), rand_t(&[3, 5, 8], &mut rng)));
            let n = store.len();
            check_leaves(
                op,
                &leaves,
                &|g, v| tfc_tdf(g, &super::Bound(v[..n].to_vec()), &p, v[n]),
                seed,
            )
        }
        GradOp::Csa => {
            let leaves = vec![
                ("q".to_string(), rand_t(&[4, t, f], &mut rng)),
                ("k".to_string(), rand_t(&[h * 3, t, f], &mut rng)),
                ("v".to_string(), rand_t(&[h * 3, t, f], &mut rng)),
            ];
            check_leaves(op, &leaves, &|g, v| csa(g, v[0], v[1], v[2], h), seed)
        }
        GradOp::AggregatePocm => {
            let mut store = ParamStore::new();
            let p = AggregateParams {
                gen: ConditionWeightGen::register(&mut store, "agg", &[(4, 6)], 8, 6, &mut rng),
            };
            let mut leaves = store_leaves(&store);
            leaves.push(("x".into(), rand_t(&[6, t, f], &mut rng)));
            leaves.push(("words".into(), rand_t(&[2, 8], &mut rng)));
            let n = store.len();
            check_leaves(
                op,
                &leaves,
                &|g, v| aggregate_pocm(g, &super::Bound(v[..n].to_vec()), &p, v[n], v[n + 1]),
                seed,
            )
        }
        GradOp::EncodeDescription => {
            let mut store = ParamStore::new();
            let p = EncoderParams::register(&mut store, 10, 5, 6, &mut rng);
            let leaves = store_leaves(&store);
            let tokens = [3usize, 1, 4, 1, 5];
            check_leaves(
                op,
                &leaves,
                &|g, v| encode_description(g, &super::Bound(v.to_vec()), &p, &tokens),
                seed,
            )
        }
        GradOp::ForwardMicro => {
            let net = AmssNet::<f64>::new(ModelConfig::micro(), seed)?;
            let mt = three_stem_multitrack::<f64>(1.0, FORWARD_CHECK_RATE, rng.gen());
            let a = mix(&mt)?;
            let target = a.map_samples(|v| 0.5 * v);
            let ex = net.prepare(&a, &target, "decrease the volume of drums")?;
            check_net(&net, &ex, seed)
        }
    }
}
