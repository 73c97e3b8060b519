//! Training-triple synthesis: a random query drawn from a task-specific
//! generator, the mixture, and its DSP-edited counterpart.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aml::{generate_random, interpret, AmlError, Grammar, LevelTable, Task};
use crate::dsp::wav::{read_wav, write_wav, WavFormat};
use crate::dsp::{apply_plan, mix, AudioTrack, DspError, MultiTrack, ReverbConfig};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TripleError {
    #[error(transparent)]
    Aml(#[from] AmlError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("no generators given")]
    NoGenerators,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("segment of {need} samples is longer than the {have} samples of stem {stem:?}")]
    SegmentTooLong {
        stem: String,
        need: usize,
        have: usize,
    },
    #[error("multitrack has no stem {0:?} required by the generator")]
    MissingSource(String),
    #[error("manifest mismatch at triple {index}: {reason}")]
    ManifestMismatch { index: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// A query generator restricted to one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGenerator {
    pub grammar: Grammar,
    pub task: Task,
    /// Set for effect-removal tasks: input and target are swapped.
    pub removal: bool,
}

impl TripleGenerator {
    pub fn new(grammar: Grammar, task: Task) -> Self {
        TripleGenerator {
            grammar,
            task,
            removal: task.is_removal(),
        }
    }

    pub fn for_task<S: AsRef<str>>(task: Task, sources: &[S]) -> Self {
        Self::new(Grammar::for_task(task, sources), task)
    }

    /// One generator per task.
    pub fn for_tasks<S: AsRef<str>>(tasks: &[Task], sources: &[S]) -> Vec<Self> {
        tasks.iter().map(|&t| Self::for_task(t, sources)).collect()
    }
}

/// `(A, A′, S)` plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct AmssTriple<T> {
    pub input: AudioTrack<T>,
    pub target: AudioTrack<T>,
    pub description: String,
    pub task: Task,
    /// Seed the triple was synthesised from, when known.
    pub seed: Option<u64>,
}

/// DSP parameters used to render targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TripleSettings {
    pub levels: LevelTable,
    pub reverb: ReverbConfig,
}

/// Draws one triple with default levels and reverb.
pub fn generate_triple<T: Scalar, R: Rng + ?Sized>(
    mt: &MultiTrack<T>,
    gens: &[TripleGenerator],
    rng: &mut R,
) -> Result<AmssTriple<T>, TripleError> {
    generate_triple_with(mt, gens, rng, &TripleSettings::default())
}

/// Samples a generator uniformly, a query from its grammar, and renders the
/// target with the DSP oracle. Removal tasks return the edited mixture as
/// input and the clean mixture as target.
pub fn generate_triple_with<T: Scalar, R: Rng + ?Sized>(
    mt: &MultiTrack<T>,
    gens: &[TripleGenerator],
    rng: &mut R,
    settings: &TripleSettings,
) -> Result<AmssTriple<T>, TripleError> {
    if gens.is_empty() {
        return Err(TripleError::NoGenerators);
    }
    let g = &gens[rng.gen_range(0..gens.len())];
    let (description, desc) = generate_random(&g.grammar, rng)?;
    for t in &desc.targets {
        if !mt.contains(t) {
            return Err(TripleError::MissingSource(t.clone()));
        }
    }
    let plan = interpret(&desc, &settings.levels)?;
    let mixture = mix(mt)?;
    let (input, target) = if g.removal {
        (apply_plan(mt, &plan.forward(), &settings.reverb)?, mixture)
    } else {
        let edited = apply_plan(mt, &plan, &settings.reverb)?;
        (mixture, edited)
    };
    Ok(AmssTriple {
        input,
        target,
        description,
        task: g.task,
        seed: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub segment_s: f64,
    /// Inclusive gain range.
    pub gain_range: (f64, f64),
    pub swap_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            segment_s: 6.0,
            gain_range: (0.25, 1.25),
            swap_probability: 0.5,
        }
    }
}

/// Builds a random multitrack: for each source name, a random track that has
/// it, a random offset, a random gain and a random channel swap.
pub fn augment_multitrack<T: Scalar, R: Rng + ?Sized>(
    dataset: &[MultiTrack<T>],
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<MultiTrack<T>, TripleError> {
    let first = dataset.first().ok_or(TripleError::EmptyDataset)?;
    let sr = first.sample_rate().ok_or(TripleError::EmptyDataset)?;
    let need = (cfg.segment_s * sr as f64).round() as usize;
    let mut names: Vec<&str> = Vec::new();
    for mt in dataset {
        for n in mt.names() {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    let mut out = MultiTrack::new();
    for name in names {
        let holders: Vec<&AudioTrack<T>> = dataset.iter().filter_map(|mt| mt.get(name)).collect();
        let track = holders[rng.gen_range(0..holders.len())];
        if track.len() < need {
            return Err(TripleError::SegmentTooLong {
                stem: name.to_string(),
                need,
                have: track.len(),
            });
        }
        let offset = rng.gen_range(0..=track.len() - need);
        let gain = T::lit(rng.gen_range(cfg.gain_range.0..=cfg.gain_range.1));
        let swap = rng.gen_bool(cfg.swap_probability);
        let mut seg = track.segment(offset, need)?.map_samples(|v| v * gain);
        if swap {
            seg = seg.swapped_channels();
        }
        out.insert(name, seg)?;
    }
    Ok(out)
}

/// Seed for the `index`-th triple of a run, independent of worker count.
pub fn triple_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

/// Synthesises `count` triples; triple `i` depends only on `(base_seed, i)`.
pub fn synthesize_triples<T: Scalar>(
    dataset: &[MultiTrack<T>],
    gens: &[TripleGenerator],
    count: usize,
    base_seed: u64,
    augment: Option<&AugmentConfig>,
    settings: &TripleSettings,
) -> Result<Vec<AmssTriple<T>>, TripleError> {
    if dataset.is_empty() {
        return Err(TripleError::EmptyDataset);
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = triple_seed(base_seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mt = match augment {
                Some(cfg) => augment_multitrack(dataset, &mut rng, cfg)?,
                None => dataset[rng.gen_range(0..dataset.len())].clone(),
            };
            let mut triple = generate_triple_with(&mt, gens, &mut rng, settings)?;
            triple.seed = Some(seed);
            Ok(triple)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub description: String,
    pub task: Task,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    pub triples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn input_name(i: usize) -> String {
    format!("{i:04}_input.wav")
}

fn target_name(i: usize) -> String {
    format!("{i:04}_target.wav")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TripleError + '_ {
    move |source| TripleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes float WAV pairs and the manifest.
pub fn write_dataset<T: Scalar>(
    triples: &[AmssTriple<T>],
    dir: impl AsRef<Path>,
    config_hash: Option<&str>,
    base_seed: Option<u64>,
) -> Result<Manifest, TripleError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(triples.len());
    for (i, t) in triples.iter().enumerate() {
        write_wav(dir.join(input_name(i)), &t.input, WavFormat::Float32)?;
        write_wav(dir.join(target_name(i)), &t.target, WavFormat::Float32)?;
        entries.push(ManifestEntry {
            index: i,
            description: t.description.clone(),
            task: t.task,
            seed: t.seed,
        });
    }
    let manifest = Manifest {
        config_hash: config_hash.map(str::to_string),
        base_seed,
        triples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest, TripleError> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Inverse of [`write_dataset`].
pub fn read_dataset<T: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<AmssTriple<T>>, TripleError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut out = Vec::with_capacity(manifest.triples.len());
    for (pos, e) in manifest.triples.iter().enumerate() {
        if e.index != pos {
            return Err(TripleError::ManifestMismatch {
                index: e.index,
                reason: format!("listed at position {pos}"),
            });
        }
        let load = |name: String| -> Result<AudioTrack<T>, TripleError> {
            let p = dir.join(&name);
            if !p.is_file() {
                return Err(TripleError::ManifestMismatch {
                    index: e.index,
                    reason: format!("missing {name}"),
                });
            }
            Ok(read_wav(p)?)
        };
        let input = load(input_name(e.index))?;
        let target = load(target_name(e.index))?;
        if input.len() != target.len() || input.sample_rate() != target.sample_rate() {
            return Err(TripleError::ManifestMismatch {
                index: e.index,
                reason: "input and target differ in shape".into(),
            });
        }
        out.push(AmssTriple {
            input,
            target,
            description: e.description.clone(),
            task: e.task,
            seed: e.seed,
        });
    }
    let extra = input_name(out.len());
    if dir.join(&extra).exists() {
        return Err(TripleError::ManifestMismatch {
            index: out.len(),
            reason: format!("{extra} is not listed in the manifest"),
        });
    }
    Ok(out)
}
