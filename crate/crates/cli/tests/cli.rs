use std::path::Path;
use std::process::{Command, Output};

use amss_core::dsp::mix;
use amss_core::dsp::wav::read_wav;
use amss_core::dsp::{AudioTrack, MultiTrack};
use amss_core::Stems;

fn amss(args: &[&str]) -> Output {
    amss_env(args, &[])
}

fn amss_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_amss"));
    cmd.args(args).env_remove("AMSS_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sidecar(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(format!("{}.json", path.display())).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(amss(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(amss(&["aml"]).status.code(), Some(2));
    assert_eq!(amss(&["aml", "enum", "--task", "nope"]).status.code(), Some(2));
    assert_eq!(amss(&["--help"]).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_1() {
    let o = amss(&["aml", "parse", "apply loudpass to drums"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("syntax error"), "{err}");
    let o = amss(&["--config", "/nonexistent/amss.json", "aml", "enum"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn enumerate_and_parse() {
    let o = amss(&["aml", "enum"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 450);
    let o = amss(&["aml", "enum", "--task", "lowpass"]);
    assert_eq!(stdout(&o).lines().count(), 60);

    let o = amss(&["aml", "parse", "--plan", "apply lowpass to vocals, drums"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["description"]["level"], "medium");
    assert_eq!(v["description"]["targets"], serde_json::json!(["vocals", "drums"]));

    let o = amss(&["aml", "render", "apply lowpass to drums"]);
    assert_eq!(stdout(&o).trim(), "apply medium lowpass to drums");
}

#[test]
fn generation_depends_on_seed_only() {
    let a = amss(&["--seed", "5", "aml", "gen", "--count", "20"]);
    let b = amss(&["--seed", "5", "aml", "gen", "--count", "20"]);
    let c = amss(&["--seed", "6", "aml", "gen", "--count", "20"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
    assert_eq!(stdout(&a).lines().count(), 20);
}

#[test]
fn mute_is_sample_exact() {
    let dir = tempfile::tempdir().unwrap();
    let stems = dir.path().join("stems");
    let out = dir.path().join("out.wav");
    assert!(amss(&["dsp", "synth", "--out", p(&stems), "--seconds", "0.5"]).status.success());
    let o = amss(&["dsp", "apply", "--stems", p(&stems), "--query", "mute drums", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut mt: Stems = MultiTrack::new();
    for name in ["bass", "drums", "vocals"] {
        mt.insert(name, read_wav(stems.join(format!("{name}.wav"))).unwrap()).unwrap();
    }
    let want: AudioTrack<f32> = mix(&mt.with_zeroed(&["drums"])).unwrap().cast();
    let got: AudioTrack<f32> = read_wav(&out).unwrap();
    assert_eq!(got, want);
    let side = sidecar(&out);
    assert_eq!(side["query"], "mute drums");
    assert_eq!(side["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn sample_rate_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("amss.json");
    std::fs::write(&cfg, r#"{"sample_rate": 16000}"#).unwrap();
    let stems = dir.path().join("stems");
    let out = dir.path().join("out.wav");
    assert!(amss(&["dsp", "synth", "--out", p(&stems), "--seconds", "0.2"]).status.success());
    let args = ["dsp", "apply", "--stems", p(&stems), "--query", "mute bass", "--out", p(&out)];
    let o = amss_env(&args, &[("AMSS_CONFIG", p(&cfg))]);
    assert_eq!(o.status.code(), Some(1));
    let mut lenient = vec!["--allow-any-rate"];
    lenient.extend(args);
    assert!(amss_env(&lenient, &[("AMSS_CONFIG", p(&cfg))]).status.success());
}

#[test]
fn config_precedence_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let env_cfg = dir.path().join("env.json");
    let flag_cfg = dir.path().join("flag.json");
    std::fs::write(&env_cfg, r#"{"seed": 11}"#).unwrap();
    std::fs::write(&flag_cfg, r#"{"seed": 12}"#).unwrap();
    let synth = |extra: &[&str], env: &[(&str, &str)]| {
        let out = dir.path().join(format!("s{}", extra.len() + env.len()));
        let mut args: Vec<&str> = extra.to_vec();
        args.extend(["dsp", "synth", "--out", p(&out), "--seconds", "0.1"]);
        assert!(amss_env(&args, env).status.success());
        sidecar(&out.join("bass.wav"))
    };
    let default = synth(&[], &[]);
    assert_eq!(default["seed"], 0);
    let from_env = synth(&[], &[("AMSS_CONFIG", p(&env_cfg))]);
    assert_eq!(from_env["seed"], 11);
    assert_ne!(from_env["config_hash"], default["config_hash"]);
    let from_flag = synth(&["--config", p(&flag_cfg)], &[("AMSS_CONFIG", p(&env_cfg))]);
    assert_eq!(from_flag["seed"], 12);
    let overridden = synth(&["--seed", "3", "--config", p(&flag_cfg), "--jobs", "2"], &[]);
    assert_eq!(overridden["seed"], 3);
}

#[test]
fn triples_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let stems = dir.path().join("stems");
    let data = dir.path().join("data");
    let report = dir.path().join("report.json");
    assert!(amss(&["dsp", "synth", "--out", p(&stems), "--seconds", "0.5"]).status.success());
    let o = amss(&[
        "--jobs", "2", "triples", "gen", "--stems", p(&stems), "--out", p(&data), "--count", "6",
        "--tasks", "separate,lowpass",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("manifest.json").is_file());

    let o = amss(&["bench", "run", "--data", p(&data), "--out", p(&report), "--table", "--runs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("reference loss"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["meta"]["n_runs"], 2);
    for row in v["rows"].as_array().unwrap() {
        assert_eq!(row["mean"], row["reference_loss"]);
    }

    let o = amss(&["bench", "run", "--data", p(&data), "--runs", "2", "--seeds", "1,2,3"]);
    assert_eq!(o.status.code(), Some(1));
    let o = amss(&["bench", "run", "--data", p(&data), "--system", "magic"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn model_init_and_forward() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("amss.json");
    std::fs::write(&cfg, r#"{"sample_rate": 8000}"#).unwrap();
    let ckpt = dir.path().join("net.json");
    let stems = dir.path().join("stems");
    let out = dir.path().join("y.wav");
    let c = ["--config", p(&cfg)];
    let run = |args: &[&str]| {
        let mut v: Vec<&str> = c.to_vec();
        v.extend(args);
        amss(&v)
    };
    assert!(run(&["model", "init", "--micro", "--out", p(&ckpt)]).status.success());
    assert!(run(&["dsp", "synth", "--out", p(&stems), "--seconds", "0.3"]).status.success());
    let input = stems.join("vocals.wav");
    let o = run(&[
        "model", "forward", "--ckpt", p(&ckpt), "--in", p(&input), "--query", "mute vocals", "--out",
        p(&out), "--times", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let y: AudioTrack<f32> = read_wav(&out).unwrap();
    assert_eq!(y.len(), 2400);
    assert_eq!(sidecar(&out)["times"], 2);
}

#[test]
fn gradcheck_single_op() {
    let o = amss(&["model", "gradcheck", "--op", "pocm"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("PASS"));
}
