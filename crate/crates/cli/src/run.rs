use std::fs;
use std::path::{Path, PathBuf};

use amss_core::aml::{interpret, render, Aml, Direction, Grammar, Task};
use amss_core::dsp::synth::{three_stem_multitrack, two_stem_multitrack};
use amss_core::dsp::wav::{read_wav, write_wav, WavFormat};
use amss_core::dsp::{apply_plan, mix, AudioTrack, MultiTrack};
use amss_core::metrics::{evaluate_benchmark, BenchConfig, BenchItem, FnSystem, Identity, Oracle, Silence, System};
use amss_core::model::{grad_check, train_micro, GradOp, ModelConfig, Prepared, TrainConfig};
use amss_core::triplegen::{
    read_dataset, synthesize_triples, write_dataset, AugmentConfig, TripleGenerator, TripleSettings,
};
use amss_core::{Net, Stems, ToolConfig, Track};
use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{AmlCmd, BenchCmd, BenchRun, Cli, Command, DspCmd, Global, ModelCmd, SynthKind, TriplesCmd};

/// Largest gradient-check error that counts as a pass.
const GRAD_TOLERANCE: f64 = 1e-4;

struct Ctx {
    cfg: ToolConfig,
    hash: String,
    seed: u64,
    allow_any_rate: bool,
}

impl Ctx {
    fn new(g: &Global) -> Result<Self> {
        let mut cfg = match &g.config {
            Some(p) => ToolConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => ToolConfig::default(),
        };
        if let Some(s) = g.seed {
            cfg.seed = s;
        }
        let hash = cfg.hash()?;
        Ok(Ctx {
            seed: cfg.seed,
            cfg,
            hash,
            allow_any_rate: g.allow_any_rate,
        })
    }

    fn lang(&self) -> Result<Aml> {
        Ok(Aml::new(self.cfg.grammar()?, &self.cfg.sources))
    }

    fn check_rate(&self, path: &Path, track: &Track) -> Result<()> {
        if !self.allow_any_rate {
            track
                .require_sample_rate(self.cfg.sample_rate)
                .with_context(|| format!("{} (pass --allow-any-rate to accept it)", path.display()))?;
        }
        Ok(())
    }

    fn read(&self, path: &Path) -> Result<Track> {
        let t = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
        self.check_rate(path, &t)?;
        Ok(t)
    }

    /// Every `*.wav` in `dir`, named by file stem, in file-name order.
    fn stems(&self, dir: &Path) -> Result<Stems> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            bail!("no .wav stems in {}", dir.display());
        }
        let mut mt = MultiTrack::new();
        for p in paths {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            mt.insert(name, self.read(&p)?)?;
        }
        Ok(mt)
    }

    /// Metadata written next to every artifact.
    fn sidecar(&self, artifact: &Path, extra: Value) -> Result<()> {
        let mut v = json!({ "config_hash": self.hash, "seed": self.seed });
        if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
            m.extend(e);
        }
        let path = PathBuf::from(format!("{}.json", artifact.display()));
        fs::write(&path, serde_json::to_string_pretty(&v)?)
            .with_context(|| format!("writing {}", path.display()))
    }

    fn write_track(&self, path: &Path, t: &Track, extra: Value) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_wav(path, t, WavFormat::Float32).with_context(|| format!("writing {}", path.display()))?;
        self.sidecar(path, extra)
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs.max(1))
        .build()?;
    pool.install(|| match cli.command {
        Command::Aml(c) => aml(&ctx, c),
        Command::Dsp(c) => dsp(&ctx, c),
        Command::Triples(c) => triples(&ctx, c),
        Command::Model(c) => model(&ctx, c),
        Command::Bench(BenchCmd::Run(r)) => bench(&ctx, r),
    })
}

fn aml(ctx: &Ctx, cmd: AmlCmd) -> Result<()> {
    let lang = ctx.lang()?;
    match cmd {
        AmlCmd::Parse { query, plan } => {
            let desc = lang.parse(&query)?;
            let mut out = json!({ "description": desc });
            if plan {
                out["plan"] = serde_json::to_value(interpret(&desc, &ctx.cfg.level_table()?)?)?;
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        AmlCmd::Render { query } => println!("{}", render(&lang.parse(&query)?)),
        AmlCmd::Gen { count, task } => {
            let grammar = match task {
                Some(t) => Grammar::for_task(t, &ctx.cfg.sources),
                None => lang.grammar().clone(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            for _ in 0..count {
                println!("{}", amss_core::aml::generate_random(&grammar, &mut rng)?.0);
            }
        }
        AmlCmd::Enum { task } => {
            let queries = match task {
                Some(t) => Grammar::for_task(t, &ctx.cfg.sources).enumerate()?,
                None => lang.enumerate_queries()?,
            };
            for q in queries {
                println!("{q}");
            }
        }
    }
    Ok(())
}

fn dsp(ctx: &Ctx, cmd: DspCmd) -> Result<()> {
    match cmd {
        DspCmd::Apply { stems, query, out } => {
            let mt = ctx.stems(&stems)?;
            let desc = ctx.lang()?.parse(&query)?;
            let plan = interpret(&desc, &ctx.cfg.level_table()?)?;
            // Clean stems are already the answer to a removal query.
            let y = match plan.direction {
                Direction::Remove => mix(&mt)?,
                Direction::Apply => apply_plan(&mt, &plan, &ctx.cfg.reverb)?,
            };
            ctx.write_track(&out, &y, json!({ "query": query, "plan": plan }))?;
        }
        DspCmd::Synth { out, kind, seconds } => {
            let sr = ctx.cfg.sample_rate;
            let mt: Stems = match kind {
                SynthKind::Three => three_stem_multitrack(seconds, sr, ctx.seed),
                SynthKind::Two => two_stem_multitrack(seconds, sr, ctx.seed)?,
            };
            fs::create_dir_all(&out)?;
            for (name, t) in mt.iter() {
                ctx.write_track(&out.join(format!("{name}.wav")), t, json!({ "stem": name }))?;
            }
        }
    }
    Ok(())
}

fn triples(ctx: &Ctx, cmd: TriplesCmd) -> Result<()> {
    let TriplesCmd::Gen {
        stems,
        out,
        count,
        tasks,
        augment,
    } = cmd;
    let dataset: Vec<Stems> = stems.iter().map(|d| ctx.stems(d)).collect::<Result<_>>()?;
    let tasks = if tasks.is_empty() { Task::ALL.to_vec() } else { tasks };
    let gens = TripleGenerator::for_tasks(&tasks, &ctx.cfg.sources);
    let settings = TripleSettings {
        levels: ctx.cfg.level_table()?,
        reverb: ctx.cfg.reverb.clone(),
    };
    let aug = AugmentConfig {
        segment_s: ctx.cfg.segment_s,
        ..AugmentConfig::default()
    };
    let triples = synthesize_triples(&dataset, &gens, count, ctx.seed, augment.then_some(&aug), &settings)?;
    write_dataset(&triples, &out, Some(&ctx.hash), Some(ctx.seed))?;
    eprintln!("wrote {} triples to {}", triples.len(), out.display());
    Ok(())
}

fn load_net(path: &Path) -> Result<Net> {
    Net::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn model(ctx: &Ctx, cmd: ModelCmd) -> Result<()> {
    match cmd {
        ModelCmd::Init { out, micro } => {
            let mut mc = if micro { ModelConfig::micro() } else { ctx.cfg.model.clone() };
            mc.sources = ctx.cfg.sources.clone();
            let net = Net::new(mc, ctx.seed)?;
            net.save(&out)?;
            ctx.sidecar(&out, json!({ "parameters": net.num_params() }))?;
            println!("{} parameters", net.num_params());
        }
        ModelCmd::Forward {
            ckpt,
            input,
            query,
            out,
            times,
        } => {
            let net = load_net(&ckpt)?;
            let mut y = ctx.read(&input)?;
            for _ in 0..times.max(1) {
                y = net.forward(&y, &query)?;
            }
            ctx.write_track(
                &out,
                &y,
                json!({ "query": query, "times": times.max(1), "checkpoint": ckpt }),
            )?;
        }
        ModelCmd::Gradcheck { op, out } => {
            let ops: Vec<GradOp> = op.map_or_else(|| GradOp::ALL.to_vec(), |o| vec![o]);
            let mut reports = Vec::new();
            let mut failed = Vec::new();
            for op in ops {
                let r = grad_check(op, ctx.seed)?;
                let pass = r.max_rel_error <= GRAD_TOLERANCE;
                let kinks: usize = r.joint.iter().map(|c| c.kinks).sum();
                println!(
                    "{:<28} {:.3e}  {}  (plain difference {:.3e}, {} kink crossings)",
                    op.name(),
                    r.max_rel_error,
                    if pass { "PASS" } else { "FAIL" },
                    r.max_raw_error(),
                    kinks
                );
                if !pass {
                    failed.push(op.name());
                }
                reports.push(r);
            }
            if let Some(path) = out {
                let v = json!({ "config_hash": ctx.hash, "seed": ctx.seed, "reports": reports });
                fs::write(&path, serde_json::to_string_pretty(&v)?)?;
            }
            if !failed.is_empty() {
                bail!("gradient check above {GRAD_TOLERANCE:e} for {}", failed.join(", "));
            }
        }
        ModelCmd::TrainMicro {
            data,
            steps,
            lr,
            ckpt,
            batch,
            halve_restart,
            out,
        } => {
            let mut net = match &ckpt {
                Some(p) => load_net(p)?,
                None => {
                    let mut mc = ModelConfig::micro();
                    mc.sources = ctx.cfg.sources.clone();
                    Net::new(mc, ctx.seed)?
                }
            };
            let triples = read_dataset::<f64>(&data)?;
            let mut prepared: Vec<Prepared<f64>> = Vec::with_capacity(triples.len());
            for (i, t) in triples.iter().enumerate() {
                ctx.check_rate(&data.join(format!("triple {i}")), &t.input)?;
                prepared.push(net.prepare(&t.input, &t.target, &t.description)?);
            }
            let tc = TrainConfig {
                steps,
                lr,
                batch_size: batch,
                seed: ctx.seed,
                halve_and_restart: halve_restart,
                ..TrainConfig::default()
            };
            let report = train_micro(&mut net, &prepared, &tc)?;
            let first = report.losses.first().copied().unwrap_or(report.final_loss);
            println!(
                "steps {}  initial loss {:.6}  final loss {:.6}  ratio {:.4}  restarts {}",
                report.losses.len(),
                first,
                report.final_loss,
                report.final_loss / first,
                report.restarts
            );
            if let Some(p) = out {
                net.save(&p)?;
                ctx.sidecar(&p, json!({ "data": data, "train": tc, "report": report }))?;
            }
        }
    }
    Ok(())
}

fn bench(ctx: &Ctx, r: BenchRun) -> Result<()> {
    let lang = ctx.lang()?;
    let triples = read_dataset::<f64>(&r.data)?;
    let items: Vec<BenchItem<f64>> = triples
        .iter()
        .map(|t| BenchItem::from_triple(t, &lang))
        .collect::<Result<_, _>>()?;
    for (i, it) in items.iter().enumerate() {
        ctx.check_rate(&r.data.join(format!("triple {i}")), &it.input)?;
    }
    let seeds = if r.seeds.is_empty() {
        (0..r.runs.unwrap_or(3) as u64).map(|k| ctx.seed + k).collect()
    } else {
        if r.runs.is_some_and(|n| n != r.seeds.len()) {
            bail!("--runs {} disagrees with {} --seeds", r.runs.unwrap_or(0), r.seeds.len());
        }
        r.seeds.clone()
    };
    let cfg = BenchConfig {
        seeds,
        metric: r.metric,
        buckets: None,
        mfcc: ctx.cfg.mfcc.clone(),
        config_hash: Some(ctx.hash.clone()),
    };
    let net;
    let model_sys;
    let oracle = Oracle {
        levels: ctx.cfg.level_table()?,
        reverb: ctx.cfg.reverb.clone(),
    };
    let system: &dyn System<f64> = match r.system.as_str() {
        "identity" => &Identity,
        "silence" => &Silence,
        "oracle" => &oracle,
        s => match s.strip_prefix("model:") {
            Some(path) => {
                net = load_net(Path::new(path))?;
                model_sys = FnSystem {
                    name: s.to_string(),
                    f: |a: &AudioTrack<f64>, q: &str, _seed: u64| net.forward(a, q).map_err(|e| e.to_string()),
                };
                &model_sys
            }
            None => bail!("unknown system {s:?}; expected identity, silence, oracle or model:<checkpoint>"),
        },
    };
    let report = evaluate_benchmark(system, &items, &cfg)?;
    if let Some(p) = &r.out {
        fs::write(p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    if r.table || r.out.is_none() {
        print!("{}", report.to_table());
    }
    Ok(())
}
