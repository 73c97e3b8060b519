use amss_core::dsp::synth::three_stem_multitrack;
use amss_core::dsp::{mix, AudioTrack};
use amss_core::model::{
    encode_description, generate_condition_weights, grad_check, pocm, smpocm, train_micro,
    AmssNet, ConditionWeightGen, EncoderParams, GradOp, Graph, ModelConfig, ModelError, ParamStore,
    PocmVars, Tensor, TrainConfig, Variant, Vocab,
};
use amss_core::{Net, Stems};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y[g·co + o, t, f] = b[o] + Σ_c w[o, c] x[g·ci + c, t, f]`
fn naive_pocm(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, groups: usize) -> Tensor<f64> {
    let (co, ci) = (w.dim(0), w.dim(1));
    let (t_len, f_len) = (x.dim(1), x.dim(2));
    let mut y = Tensor::zeros(&[groups * co, t_len, f_len]);
    for g in 0..groups {
        for o in 0..co {
            for t in 0..t_len {
                for f in 0..f_len {
                    let mut acc = b.get(&[o]);
                    for c in 0..ci {
                        acc += w.get(&[o, c]) * x.get(&[g * ci + c, t, f]);
                    }
                    y.set(&[g * co + o, t, f], acc);
                }
            }
        }
    }
    y
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn pocm_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (groups, m) = (3, 4);
    let x = rand_t(&[groups * m, 5, 7], &mut rng);
    let w = rand_t(&[m, m], &mut rng);
    let b = rand_t(&[m], &mut rng);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
    let y = pocm(&mut g, xv, &PocmVars { w: wv, b: bv }, groups).unwrap();
    assert!(max_diff(g.value(y), &naive_pocm(&x, &w, &b, groups)) <= 1e-12);
}

#[test]
fn smpocm_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (groups, m) = (2, 3);
    let x = rand_t(&[groups * m, 4, 6], &mut rng);
    let th: Vec<(Tensor<f64>, Tensor<f64>)> =
        (0..3).map(|_| (rand_t(&[m, m], &mut rng), rand_t(&[m], &mut rng))).collect();
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let vars: Vec<PocmVars> = th
        .iter()
        .map(|(w, b)| PocmVars { w: g.leaf(w.clone()), b: g.leaf(b.clone()) })
        .collect();
    let y = smpocm(&mut g, xv, &[vars[0], vars[1], vars[2]], groups).unwrap();

    let s = naive_pocm(&x, &th[0].0, &th[0].1, groups).map(sigmoid);
    let mut sx = x.clone();
    for (v, sv) in sx.data_mut().iter_mut().zip(s.data()) {
        *v *= sv;
    }
    let m_t = naive_pocm(&sx, &th[1].0, &th[1].1, groups).map(f64::tanh);
    let i_t = naive_pocm(&x, &th[2].0, &th[2].1, groups).map(sigmoid);
    let want: Vec<f64> = (0..x.len())
        .map(|k| i_t.data()[k] * m_t.data()[k] + (1.0 - s.data()[k]) * x.data()[k])
        .collect();
    let want = Tensor::from_vec(x.shape(), want).unwrap();
    assert!(max_diff(g.value(y), &want) <= 1e-12);
}

#[test]
fn csa_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (heads, ch, m, t_len, f_len) = (2, 3, 4, 5, 6);
    let q = rand_t(&[heads * ch, t_len, f_len], &mut rng);
    let k = rand_t(&[heads * m, t_len, f_len], &mut rng);
    let v = rand_t(&[heads * m, t_len, f_len], &mut rng);
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
    let y = amss_core::model::csa(&mut g, qv, kv, vv, heads).unwrap();

    let mut want = Tensor::zeros(&[heads * ch, t_len, f_len]);
    for h in 0..heads {
        for t in 0..t_len {
            for a in 0..ch {
                let logits: Vec<f64> = (0..m)
                    .map(|j| {
                        (0..f_len)
                            .map(|p| q.get(&[h * ch + a, t, p]) * k.get(&[h * m + j, t, p]))
                            .sum::<f64>()
                            / (f_len as f64).sqrt()
                    })
                    .collect();
                let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for p in 0..f_len {
                    let acc: f64 = (0..m).map(|j| e[j] / z * v.get(&[h * m + j, t, p])).sum();
                    want.set(&[h * ch + a, t, p], acc);
                }
            }
        }
    }
    assert!(max_diff(g.value(y), &want) <= 1e-12);
    assert!(matches!(
        amss_core::model::csa(&mut g, qv, kv, vv, 4),
        Err(ModelError::HeadsDontDivide { .. }) | Err(ModelError::ShapeMismatch(_))
    ));
}

#[test]
fn condition_weights_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (l, e, dk) = (5, 6, 4);
    let shapes = [(3, 3), (3, 3), (2, 3)];
    let mut store = ParamStore::<f64>::new();
    let p = ConditionWeightGen::register(&mut store, "gen", &shapes, e, dk, &mut rng);
    let words = rand_t(&[l, e], &mut rng);
    let mut g = Graph::new();
    let b = store.bind(&mut g, false);
    let wv = g.constant(words.clone());
    let out = generate_condition_weights(&mut g, &b, &p, wv).unwrap();

    let lin = |x: &Tensor<f64>, w: &Tensor<f64>, bias: &Tensor<f64>| -> Vec<Vec<f64>> {
        (0..x.dim(0))
            .map(|r| {
                (0..w.dim(0))
                    .map(|o| bias.get(&[o]) + (0..w.dim(1)).map(|c| w.get(&[o, c]) * x.get(&[r, c])).sum::<f64>())
                    .collect()
            })
            .collect()
    };
    let keys = lin(&words, store.get(p.key_w), store.get(p.key_b));
    let values = lin(&words, store.get(p.value_w), store.get(p.value_b));
    let theta = store.get(p.theta);
    for (r, &(co, ci)) in shapes.iter().enumerate() {
        let logits: Vec<f64> = (0..l)
            .map(|j| (0..dk).map(|d| theta.get(&[r, d]) * keys[j][d]).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let ex: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
        let z: f64 = ex.iter().sum();
        let att: Vec<f64> = ex.iter().map(|v| v / z).collect();
        assert!((att.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let alpha: Vec<f64> = (0..dk).map(|d| (0..l).map(|j| att[j] * values[j][d]).sum()).collect();
        let (hw, hb) = p.heads[r];
        let row = Tensor::from_vec(&[1, dk], alpha).unwrap();
        let flat = &lin(&row, store.get(hw), store.get(hb))[0];
        let (w, bias) = (g.value(out[r].w), g.value(out[r].b));
        assert_eq!(w.shape(), &[co, ci]);
        assert_eq!(bias.shape(), &[co]);
        for k in 0..co * ci {
            assert!((w.data()[k] - flat[k]).abs() <= 1e-12);
        }
        for k in 0..co {
            assert!((bias.data()[k] - flat[co * ci + k]).abs() <= 1e-12);
        }
    }
}

#[test]
fn encoder_is_direction_symmetric() {
    // With identical forward and backward weights, reversing the query
    // reverses the rows and swaps the two halves of every word feature.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab = Vocab::for_sources(&["vocals", "drums", "bass"]);
    let mut store = ParamStore::<f64>::new();
    let p = EncoderParams::register(&mut store, vocab.len(), 6, 8, &mut rng);
    for (f, b) in [
        (p.forward.w_ih, p.backward.w_ih),
        (p.forward.w_hh, p.backward.w_hh),
        (p.forward.b_ih, p.backward.b_ih),
        (p.forward.b_hh, p.backward.b_hh),
    ] {
        *store.get_mut(b) = store.get(f).clone();
    }
    let tokens = vocab.encode("apply heavy lowpass to vocals, drums").unwrap();
    let rev: Vec<usize> = tokens.iter().rev().copied().collect();
    let run = |toks: &[usize]| {
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let y = encode_description(&mut g, &b, &p, toks).unwrap();
        g.value(y).clone()
    };
    let (a, r) = (run(&tokens), run(&rev));
    let (n, h) = (tokens.len(), 4);
    assert_eq!(a.shape(), &[n, 2 * h]);
    for l in 0..n {
        for j in 0..h {
            assert!((r.get(&[l, j]) - a.get(&[n - 1 - l, h + j])).abs() < 1e-14);
            assert!((r.get(&[l, h + j]) - a.get(&[n - 1 - l, j])).abs() < 1e-14);
        }
    }
    let mut g = Graph::new();
    let b = store.bind(&mut g, false);
    assert!(matches!(
        encode_description(&mut g, &b, &p, &[]),
        Err(ModelError::EmptyQuery)
    ));
}

#[test]
fn unknown_words_map_to_reserved_token() {
    let vocab = Vocab::for_sources(&["vocals"]);
    assert_eq!(vocab.encode("mute piano").unwrap()[1], 0);
    assert!(matches!(vocab.encode("   "), Err(ModelError::EmptyQuery)));
}

fn micro_input() -> AudioTrack<f64> {
    let mt: Stems = three_stem_multitrack(0.25, 8000, 1);
    mix(&mt).unwrap()
}

#[test]
fn generated_parameter_count() {
    let net = Net::new(ModelConfig::micro(), 1).unwrap();
    let m = net.config().latent;
    assert_eq!(net.generated_params_per_block(), 3 * (m * m + m));
    assert_eq!(net.config().conditioning_params_per_block(), 3 * (m * m + m));
    let total: usize = net.params().tensors().iter().map(|t| t.len()).sum();
    assert_eq!(net.num_params(), total);
}

#[test]
fn init_is_deterministic() {
    let a = Net::new(ModelConfig::micro(), 7).unwrap();
    let b = Net::new(ModelConfig::micro(), 7).unwrap();
    let c = Net::new(ModelConfig::micro(), 8).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    let x = micro_input();
    assert_eq!(a.forward(&x, "mute drums").unwrap(), b.forward(&x, "mute drums").unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let net = Net::new(ModelConfig::micro(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("net.json");
    net.save(&p).unwrap();
    let back = Net::load(&p).unwrap();
    assert_eq!(back.config(), net.config());
    assert_eq!(back.params(), net.params());
    let x = micro_input();
    assert_eq!(
        back.forward(&x, "separate vocals").unwrap(),
        net.forward(&x, "separate vocals").unwrap()
    );
    std::fs::write(&p, "{").unwrap();
    assert!(Net::load(&p).is_err());
}

#[test]
fn variants_preserve_shape() {
    let x = micro_input();
    for variant in [Variant::Full, Variant::WithoutCsa, Variant::WithoutSmpocm] {
        let cfg = ModelConfig { variant, ..ModelConfig::micro() };
        let net = Net::new(cfg, 2).unwrap();
        let y = net.forward(&x, "apply lowpass to bass").unwrap();
        assert_eq!(y.len(), x.len());
        assert!(y.channels().iter().flatten().all(|v| v.is_finite()));
    }
}

#[test]
fn single_precision_tracks_double() {
    let net = Net::new(ModelConfig::micro(), 4).unwrap();
    let net32: AmssNet<f32> = net.cast();
    let x = micro_input();
    let y = net.forward(&x, "mute bass").unwrap();
    let y32 = net32.forward(&x.cast(), "mute bass").unwrap();
    let scale = y.peak().max(1e-9);
    for c in 0..2 {
        for (a, b) in y.channel(c).iter().zip(y32.channel(c)) {
            assert!((a - *b as f64).abs() / scale < 1e-3);
        }
    }
}

#[test]
fn invalid_configs_and_short_audio() {
    let bad = ModelConfig { channels: 9, heads: 2, ..ModelConfig::micro() };
    assert!(matches!(Net::new(bad, 0), Err(ModelError::InvalidConfig(_))));
    let net = Net::new(ModelConfig::micro(), 0).unwrap();
    let short = AudioTrack::<f64>::silence(200, 8000);
    assert!(matches!(
        net.forward(&short, "mute bass"),
        Err(ModelError::AudioTooShort { .. })
    ));
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let net0 = Net::new(ModelConfig::micro(), 5).unwrap();
    let mut net = net0.clone();
    let mt: Stems = three_stem_multitrack(0.2, 8000, 2);
    let x = mix(&mt).unwrap();
    let target = mix(&mt.with_zeroed(&["drums"])).unwrap();
    let ex = net.prepare(&x, &target, "mute drums").unwrap();
    let cfg = TrainConfig { steps: 3, lr: 0.0, ..TrainConfig::default() };
    let report = train_micro(&mut net, &[ex], &cfg).unwrap();
    assert_eq!(report.losses.len(), 3);
    assert!(report.losses.iter().all(|&l| l == report.losses[0]));
    assert_eq!(report.final_loss, report.losses[0]);
    assert_eq!(net.params(), net0.params());
    assert!(matches!(train_micro(&mut net, &[], &cfg), Err(ModelError::EmptyDataset)));
}

#[test]
fn a_few_steps_reduce_the_loss() {
    let mut net = Net::new(ModelConfig::micro(), 6).unwrap();
    let mt: Stems = three_stem_multitrack(0.2, 8000, 3);
    let x = mix(&mt).unwrap();
    let target = mix(&mt.with_zeroed(&["vocals", "drums"])).unwrap();
    let ex = net.prepare(&x, &target, "separate bass").unwrap();
    let cfg = TrainConfig { steps: 20, lr: 1e-2, ..TrainConfig::default() };
    let report = train_micro(&mut net, &[ex], &cfg).unwrap();
    assert!(report.final_loss < report.losses[0], "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn block_gradients_agree_with_finite_differences(seed in 0u64..1000) {
        for op in [GradOp::Pocm, GradOp::Smpocm, GradOp::Csa, GradOp::GenerateConditionWeights] {
            let r = grad_check(op, seed).unwrap();
            prop_assert!(r.max_rel_error <= 1e-4, "{:?} seed {}: {}", op, seed, r.max_rel_error);
        }
    }
}
