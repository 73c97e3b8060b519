use amss_core::aml::{parse, Aml, Task, DEFAULT_SOURCES};
use amss_core::dsp::synth::{three_stem_multitrack, tone_with_bursts};
use amss_core::dsp::{apply_gain, AudioTrack, MfccConfig};
use amss_core::metrics::{
    evaluate_benchmark, mean, median, rmse_mfcc, sdr, std_dev, BenchConfig, BenchItem, BucketKey,
    FnSystem, Identity, Metric, MetricsError, Oracle, Silence, SDR_CAP_DB,
};
use amss_core::triplegen::{synthesize_triples, TripleGenerator, TripleSettings};
use amss_core::{Stems, Track};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(len: usize, sr: u32, seed: u64) -> Track {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let r = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
    AudioTrack::new(l, r, sr).unwrap()
}

fn item(query: &str, input: Track, target: Track) -> BenchItem<f64> {
    BenchItem {
        input,
        target,
        query: query.to_string(),
        description: parse(query).unwrap(),
        stems: None,
    }
}

#[test]
fn rmse_mfcc_gain_closed_form() {
    // A gain g shifts every log-mel energy by 2 ln g; the orthonormal DCT maps
    // that to C0 only, by 2 ln g · sqrt(n_mels).
    let cfg = MfccConfig::default();
    let x = noise(44100, 44100, 1);
    for g in [0.5, 2.0, 3.0] {
        let y = apply_gain(&x, g).unwrap();
        let want = (2.0 * f64::ln(g)).abs() * (cfg.n_mels as f64).sqrt() / (cfg.n_mfcc as f64).sqrt();
        let got = rmse_mfcc(&x, &y, &cfg).unwrap();
        assert!((got - want).abs() < 1e-6, "g={g}: {got} vs {want}");
    }
}

#[test]
fn sdr_of_scaled_estimate() {
    let r = noise(1000, 8000, 2);
    for eps in [0.1, 0.5, -0.25] {
        let e = r.map_samples(|v| v * (1.0 + eps));
        let want = -20.0 * f64::abs(eps).log10();
        assert!((sdr(&r, &e).unwrap() - want).abs() < 1e-9);
    }
    assert_eq!(sdr(&r, &r).unwrap(), SDR_CAP_DB);
    assert!(matches!(
        sdr(&r, &noise(999, 8000, 2)),
        Err(MetricsError::Dsp(_))
    ));
}

#[test]
fn metric_assignment() {
    for task in Task::ALL {
        let want = if matches!(task, Task::Separate | Task::Mute) {
            Metric::Sdr
        } else {
            Metric::RmseMfcc
        };
        assert_eq!(Metric::for_task(task), want);
    }
    assert_eq!("rmse-mfcc".parse::<Metric>().unwrap(), Metric::RmseMfcc);
    assert!("psnr".parse::<Metric>().is_err());
}

#[test]
fn sdr_bucket_is_median_over_tracks() {
    let t = noise(2000, 8000, 3);
    let ks = [1.1, 1.5, 1.01, 2.0];
    let items: Vec<_> = ks
        .iter()
        .map(|&k| item("separate vocals", t.map_samples(|v| v * k), t.clone()))
        .collect();
    let cfg = BenchConfig { seeds: vec![1], ..BenchConfig::default() };
    let rep = evaluate_benchmark(&Identity, &items, &cfg).unwrap();
    assert_eq!(rep.rows.len(), 1);
    let scores: Vec<f64> = ks.iter().map(|k| -20.0 * f64::log10(k - 1.0)).collect();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let want = 0.5 * (sorted[1] + sorted[2]);
    assert!((rep.rows[0].mean - want).abs() < 1e-9);
    assert_eq!(rep.rows[0].metric, Metric::Sdr);
    assert_eq!(rep.rows[0].tracks, 4);
}

#[test]
fn mfcc_bucket_is_mean_over_tracks() {
    let cfg = MfccConfig::default();
    let t = noise(22050, 44100, 4);
    let gains = [0.5, 2.0, 4.0];
    let items: Vec<_> = gains
        .iter()
        .map(|&g| item("apply lowpass to bass", apply_gain(&t, g).unwrap(), t.clone()))
        .collect();
    let bc = BenchConfig { seeds: vec![7], ..BenchConfig::default() };
    let rep = evaluate_benchmark(&Identity, &items, &bc).unwrap();
    let per: Vec<f64> = gains
        .iter()
        .map(|g| (2.0 * f64::ln(*g)).abs() * (cfg.n_mels as f64 / cfg.n_mfcc as f64).sqrt())
        .collect();
    let want = per.iter().sum::<f64>() / 3.0;
    assert!((rep.rows[0].mean - want).abs() < 1e-6);
    assert_eq!(rep.rows[0].mean, rep.rows[0].reference_loss);
}

#[test]
fn run_statistics_follow_seeds() {
    let t = noise(2000, 8000, 5);
    let items = vec![item("mute drums", t.map_samples(|v| 2.0 * v), t.clone())];
    // The estimate error is seed-dependent: est = target · (1 + 1/seed).
    let sys = FnSystem {
        name: "scaled".into(),
        f: |x: &Track, _q: &str, seed: u64| -> Result<Track, String> {
            Ok(x.map_samples(|v| v * 0.5 * (1.0 + 1.0 / seed as f64)))
        },
    };
    let cfg = BenchConfig { seeds: vec![1, 2, 4], ..BenchConfig::default() };
    let rep = evaluate_benchmark(&sys, &items, &cfg).unwrap();
    let runs: Vec<f64> = [1.0f64, 2.0, 4.0].iter().map(|s| 20.0 * s.log10()).collect();
    let row = &rep.rows[0];
    for (a, b) in row.runs.iter().zip(&runs) {
        assert!((a - b).abs() < 1e-9);
    }
    let m = runs.iter().sum::<f64>() / 3.0;
    let sd = (runs.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!((row.mean - m).abs() < 1e-9);
    assert!((row.std - sd).abs() < 1e-9);
    assert_eq!(rep.meta.n_runs, 3);
    assert_eq!(rep.meta.system, "scaled");
}

#[test]
fn buckets_ignore_target_order_and_skip_silent_targets() {
    let t = noise(2000, 8000, 6);
    let silent = AudioTrack::silence(2000, 8000);
    let items = vec![
        item("separate vocals, drums", t.map_samples(|v| 2.0 * v), t.clone()),
        item("separate drums, vocals", t.map_samples(|v| 3.0 * v), t.clone()),
        item("mute vocals, drums, bass", t.clone(), silent.clone()),
        item("mute bass", t.clone(), t.clone()),
    ];
    let cfg = BenchConfig { seeds: vec![1], ..BenchConfig::default() };
    let rep = evaluate_benchmark(&Identity, &items, &cfg).unwrap();
    let keys: Vec<(Task, &str)> = rep.rows.iter().map(|r| (r.task, r.source.as_str())).collect();
    assert_eq!(keys, vec![(Task::Separate, "drums+vocals"), (Task::Mute, "bass")]);
    assert_eq!(rep.rows[0].tracks, 2);

    let wanted = BenchConfig {
        buckets: Some(vec![BucketKey { task: Task::Mute, source: "bass+drums+vocals".into() }]),
        ..cfg.clone()
    };
    assert!(matches!(
        evaluate_benchmark(&Identity, &items, &wanted),
        Err(MetricsError::EmptyTaskBucket { task: Task::Mute, .. })
    ));
    let missing = BenchConfig {
        buckets: Some(vec![BucketKey { task: Task::Lowpass, source: "bass".into() }]),
        ..cfg.clone()
    };
    assert!(matches!(
        evaluate_benchmark(&Identity, &items, &missing),
        Err(MetricsError::EmptyTaskBucket { task: Task::Lowpass, .. })
    ));
    let only_mfcc = BenchConfig { metric: Some(Metric::RmseMfcc), ..cfg.clone() };
    assert!(matches!(
        evaluate_benchmark(&Identity, &items, &only_mfcc),
        Err(MetricsError::EmptyDataset)
    ));
    let no_runs = BenchConfig { seeds: vec![], ..cfg };
    assert!(matches!(
        evaluate_benchmark(&Identity, &items, &no_runs),
        Err(MetricsError::NoRuns)
    ));
}

#[test]
fn system_errors_propagate() {
    let t = noise(2000, 8000, 7);
    let items = vec![item("separate bass", t.clone(), t)];
    let sys = FnSystem {
        name: "broken".into(),
        f: |_: &Track, _: &str, _: u64| -> Result<Track, String> { Err("no".into()) },
    };
    assert!(matches!(
        evaluate_benchmark(&sys, &items, &BenchConfig::default()),
        Err(MetricsError::System { system, .. }) if system == "broken"
    ));
}

fn bench_items(tasks: &[Task]) -> Vec<BenchItem<f64>> {
    let lang = Aml::default();
    let data: Vec<Stems> = (0..2).map(|s| three_stem_multitrack(0.5, 16000, 3 * s)).collect();
    let gens = TripleGenerator::for_tasks(tasks, &DEFAULT_SOURCES);
    let mut items = Vec::new();
    for (i, mt) in data.iter().enumerate() {
        for t in synthesize_triples(&[mt.clone()], &gens, 6, i as u64, None, &TripleSettings::default())
            .unwrap()
        {
            items.push(BenchItem::from_triple(&t, &lang).unwrap().with_stems(mt.clone()));
        }
    }
    items
}

#[test]
fn reference_systems() {
    let items = bench_items(&[Task::Separate, Task::Lowpass, Task::Dereverb, Task::PanLeft]);
    let cfg = BenchConfig { seeds: vec![1, 2], ..BenchConfig::default() };
    let id = evaluate_benchmark(&Identity, &items, &cfg).unwrap();
    let oracle = evaluate_benchmark(&Oracle::default(), &items, &cfg).unwrap();
    let silence = evaluate_benchmark(&Silence, &items, &cfg).unwrap();
    for ((a, b), c) in id.rows.iter().zip(&oracle.rows).zip(&silence.rows) {
        assert_eq!(a.mean, a.reference_loss);
        assert_eq!(a.std, 0.0);
        assert_eq!(a.reference_loss, b.reference_loss);
        assert_eq!(a.reference_loss, c.reference_loss);
        match b.metric {
            Metric::Sdr => {
                assert_eq!(b.mean, SDR_CAP_DB);
                assert_eq!(c.mean, 0.0);
            }
            Metric::RmseMfcc => assert_eq!(b.mean, 0.0),
        }
        if a.task == Task::Lowpass {
            assert!(a.reference_loss > 0.0);
        }
    }
    let table = id.to_table();
    assert!(table.contains("reference loss"));
    assert!(table.contains("identity"));
}

#[test]
fn median_mean_std_by_hand() {
    assert_eq!(median(&[5.0]), 5.0);
    assert_eq!(median(&[4.0, 1.0, 3.0]), 3.0);
    assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
    assert!((std_dev(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sdr_is_sign_and_scale_invariant(seed in any::<u64>(), a in 0.1f64..10.0) {
        let r = noise(300, 8000, seed);
        let e = r.try_add(&noise(300, 8000, seed ^ 1).map_samples(|v| 0.1 * v)).unwrap();
        let base = sdr(&r, &e).unwrap();
        let neg = sdr(&r.map_samples(|v| -v), &e.map_samples(|v| -v)).unwrap();
        let scaled = sdr(&r.map_samples(|v| a * v), &e.map_samples(|v| a * v)).unwrap();
        prop_assert_eq!(base, neg);
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn mean_of_constant_is_exact(x in -1e6f64..1e6, n in 1usize..20) {
        let v = vec![x; n];
        prop_assert_eq!(mean(&v), x);
        prop_assert_eq!(std_dev(&v), 0.0);
        prop_assert_eq!(median(&v), x);
    }

    #[test]
    fn median_within_range(v in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let m = median(&v);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
        prop_assert!(std_dev(&v) >= 0.0);
    }

    #[test]
    fn rmse_mfcc_is_symmetric(seed in any::<u64>(), g in 0.2f64..5.0) {
        let cfg = MfccConfig { fft_size: 256, hop: 128, ..MfccConfig::default() };
        let x = tone_with_bursts::<f64>(440.0, 0.5, 0.1, 8000, seed);
        let y = apply_gain(&x, g).unwrap();
        prop_assert_eq!(rmse_mfcc(&x, &y, &cfg).unwrap(), rmse_mfcc(&y, &x, &cfg).unwrap());
        prop_assert_eq!(rmse_mfcc(&x, &x, &cfg).unwrap(), 0.0);
    }
}
