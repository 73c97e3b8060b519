//! SDR, RMSE-MFCC and the per-task benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aml::{interpret, Aml, AmlError, AmssDescription, Direction, LevelTable, Task};
use crate::dsp::{apply_plan, mfcc, mix, AudioTrack, DspError, MfccConfig, MultiTrack, ReverbConfig};
use crate::triplegen::AmssTriple;
use crate::Scalar;

/// Reported in place of +∞ when the estimate is exact.
pub const SDR_CAP_DB: f64 = 300.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference signal is all zero")]
    ZeroReference,
    #[error("signal too short for MFCC: {len} samples, need {need}")]
    TooShort { len: usize, need: usize },
    #[error("no triples for task {task} on {source_key}")]
    EmptyTaskBucket { task: Task, source_key: String },
    #[error("nothing to evaluate")]
    EmptyDataset,
    #[error("at least one run seed is required")]
    NoRuns,
    #[error("system {system} failed: {message}")]
    System { system: String, message: String },
    #[error(transparent)]
    Dsp(DspError),
    #[error(transparent)]
    Aml(#[from] AmlError),
}

impl From<DspError> for MetricsError {
    fn from(e: DspError) -> Self {
        match e {
            DspError::TooShort { len, need } => MetricsError::TooShort { len, need },
            other => MetricsError::Dsp(other),
        }
    }
}

/// Energy-ratio SDR over both channels, in dB, capped at [`SDR_CAP_DB`].
pub fn sdr<T: Scalar>(reference: &AudioTrack<T>, estimate: &AudioTrack<T>) -> Result<f64, MetricsError> {
    reference.check_compatible(estimate)?;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for c in 0..2 {
        for (r, e) in reference.channel(c).iter().zip(estimate.channel(c)) {
            let (r, e) = (r.as_f64(), e.as_f64());
            num += r * r;
            den += (r - e) * (r - e);
        }
    }
    if num == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    if den == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (num / den).log10()).min(SDR_CAP_DB))
}

/// Root mean square difference of the two MFCC matrices.
pub fn rmse_mfcc<T: Scalar>(
    reference: &AudioTrack<T>,
    estimate: &AudioTrack<T>,
    cfg: &MfccConfig,
) -> Result<f64, MetricsError> {
    reference.check_compatible(estimate)?;
    let a = mfcc(reference, cfg)?;
    let b = mfcc(estimate, cfg)?;
    let sq: f64 = a
        .coefficients
        .iter()
        .zip(&b.coefficients)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok((sq / a.coefficients.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Sdr,
    RmseMfcc,
}

impl Metric {
    /// SDR for the masking tasks, RMSE-MFCC for everything else.
    pub fn for_task(task: Task) -> Metric {
        match task {
            Task::Separate | Task::Mute => Metric::Sdr,
            _ => Metric::RmseMfcc,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Sdr => "sdr",
            Metric::RmseMfcc => "rmse-mfcc",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "sdr" => Ok(Metric::Sdr),
            "rmse-mfcc" | "rmse" | "mfcc" => Ok(Metric::RmseMfcc),
            _ => Err(format!("unknown metric {s:?}; expected sdr or rmse-mfcc")),
        }
    }
}

/// One test example.
#[derive(Debug, Clone)]
pub struct BenchItem<T> {
    pub input: AudioTrack<T>,
    pub target: AudioTrack<T>,
    pub query: String,
    pub description: AmssDescription,
    /// Stems the triple was rendered from, when available.
    pub stems: Option<MultiTrack<T>>,
}

impl<T: Scalar> BenchItem<T> {
    pub fn from_triple(t: &AmssTriple<T>, lang: &Aml) -> Result<Self, MetricsError> {
        Ok(BenchItem {
            input: t.input.clone(),
            target: t.target.clone(),
            query: t.description.clone(),
            description: lang.parse(&t.description)?,
            stems: None,
        })
    }

    pub fn with_stems(mut self, stems: MultiTrack<T>) -> Self {
        self.stems = Some(stems);
        self
    }
}

/// Something that edits audio according to a query.
pub trait System<T>: Sync {
    fn name(&self) -> String;
    fn run(&self, item: &BenchItem<T>, seed: u64) -> Result<AudioTrack<T>, MetricsError>;
}

/// Returns the input unchanged.
pub struct Identity;

impl<T: Scalar> System<T> for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn run(&self, item: &BenchItem<T>, _seed: u64) -> Result<AudioTrack<T>, MetricsError> {
        Ok(item.input.clone())
    }
}

/// Returns silence.
pub struct Silence;

impl<T: Scalar> System<T> for Silence {
    fn name(&self) -> String {
        "silence".into()
    }

    fn run(&self, item: &BenchItem<T>, _seed: u64) -> Result<AudioTrack<T>, MetricsError> {
        Ok(AudioTrack::silence(item.input.len(), item.input.sample_rate()))
    }
}

/// The DSP ground truth: re-renders the edit from the stems, or passes the
/// stored target through when no stems are attached.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    pub levels: LevelTable,
    pub reverb: ReverbConfig,
}

impl<T: Scalar> System<T> for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn run(&self, item: &BenchItem<T>, _seed: u64) -> Result<AudioTrack<T>, MetricsError> {
        let Some(stems) = &item.stems else {
            return Ok(item.target.clone());
        };
        let plan = interpret(&item.description, &self.levels)?;
        Ok(match plan.direction {
            // The clean mixture is what a removal edit should recover.
            Direction::Remove => mix(stems)?,
            Direction::Apply => apply_plan(stems, &plan, &self.reverb)?,
        })
    }
}

/// Wraps a closure over `(input, query, seed)`.
pub struct FnSystem<F> {
    pub name: String,
    pub f: F,
}

impl<T, F> System<T> for FnSystem<F>
where
    T: Scalar,
    F: Fn(&AudioTrack<T>, &str, u64) -> Result<AudioTrack<T>, String> + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn run(&self, item: &BenchItem<T>, seed: u64) -> Result<AudioTrack<T>, MetricsError> {
        (self.f)(&item.input, &item.query, seed).map_err(|message| MetricsError::System {
            system: self.name.clone(),
            message,
        })
    }
}

/// A row of the benchmark: one task on one target set (sorted sources joined
/// by `+`, so query order does not split buckets).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketKey {
    pub task: Task,
    pub source: String,
}

impl BucketKey {
    pub fn of(desc: &AmssDescription) -> Self {
        let mut targets = desc.targets.clone();
        targets.sort();
        BucketKey {
            task: desc.task,
            source: targets.join("+"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// One run per seed.
    pub seeds: Vec<u64>,
    /// Restricts the benchmark to tasks scored with this metric.
    pub metric: Option<Metric>,
    /// Buckets that must be present; `None` takes whatever the data holds.
    pub buckets: Option<Vec<BucketKey>>,
    pub mfcc: MfccConfig,
    pub config_hash: Option<String>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seeds: vec![1, 2, 3],
            metric: None,
            buckets: None,
            mfcc: MfccConfig::default(),
            config_hash: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub task: Task,
    pub source: String,
    pub metric: Metric,
    pub tracks: usize,
    /// Triples left out because the metric is undefined for them.
    pub excluded: usize,
    /// Mean over runs of the per-run aggregate.
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    /// Score of the unedited input against the target.
    pub reference_loss: f64,
    pub runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMeta {
    pub system: String,
    pub metrics: Vec<Metric>,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BucketScore>,
    pub meta: BenchmarkMeta,
}

/// Median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean computed around the first value, so equal inputs give that value back
/// exactly.
pub fn mean(values: &[f64]) -> f64 {
    let x0 = values[0];
    x0 + values.iter().map(|v| v - x0).sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

fn aggregate(metric: Metric, scores: &[f64]) -> f64 {
    match metric {
        Metric::Sdr => median(scores),
        Metric::RmseMfcc => mean(scores),
    }
}

fn score<T: Scalar>(
    metric: Metric,
    target: &AudioTrack<T>,
    est: &AudioTrack<T>,
    mfcc_cfg: &MfccConfig,
) -> Result<f64, MetricsError> {
    match metric {
        Metric::Sdr => sdr(target, est),
        Metric::RmseMfcc => rmse_mfcc(target, est, mfcc_cfg),
    }
}

/// Scores `system` on every bucket: SDR buckets take the median over tracks,
/// RMSE-MFCC buckets the mean; both are then averaged over runs.
pub fn evaluate_benchmark<T: Scalar, S: System<T> + ?Sized>(
    system: &S,
    items: &[BenchItem<T>],
    cfg: &BenchConfig,
) -> Result<BenchmarkReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    if cfg.seeds.is_empty() {
        return Err(MetricsError::NoRuns);
    }
    let mut groups: BTreeMap<BucketKey, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(BucketKey::of(&it.description)).or_default().push(i);
    }
    let keys: Vec<BucketKey> = match &cfg.buckets {
        Some(wanted) => {
            for k in wanted {
                if !groups.contains_key(k) {
                    return Err(MetricsError::EmptyTaskBucket {
                        task: k.task,
                        source_key: k.source.clone(),
                    });
                }
            }
            wanted.clone()
        }
        None => groups.keys().cloned().collect(),
    };
    let keys: Vec<BucketKey> = keys
        .into_iter()
        .filter(|k| cfg.metric.is_none_or(|m| Metric::for_task(k.task) == m))
        .collect();
    if keys.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    // SDR is undefined against a silent target (e.g. every source muted).
    let scorable = |i: &usize| {
        Metric::for_task(items[*i].description.task) != Metric::Sdr || items[*i].target.peak() > 0.0
    };
    let mut members: Vec<Vec<usize>> = Vec::with_capacity(keys.len());
    let mut kept = Vec::with_capacity(keys.len());
    for k in keys {
        let m: Vec<usize> = groups[&k].iter().copied().filter(scorable).collect();
        if m.is_empty() {
            // Requested buckets must be scorable; discovered ones are dropped.
            if cfg.buckets.is_some() {
                return Err(MetricsError::EmptyTaskBucket {
                    task: k.task,
                    source_key: k.source,
                });
            }
            continue;
        }
        members.push(m);
        kept.push(k);
    }
    let keys = kept;
    if keys.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let used: Vec<usize> = members.iter().flatten().copied().collect();
    let metric_of = |i: usize| Metric::for_task(items[i].description.task);

    let reference: Vec<f64> = used
        .par_iter()
        .map(|&i| score(metric_of(i), &items[i].target, &items[i].input, &cfg.mfcc))
        .collect::<Result<_, _>>()?;
    let mut per_run = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let scores: Vec<f64> = used
            .par_iter()
            .map(|&i| {
                let est = system.run(&items[i], seed)?;
                score(metric_of(i), &items[i].target, &est, &cfg.mfcc)
            })
            .collect::<Result<_, _>>()?;
        per_run.push(scores);
    }

    let mut rows = Vec::with_capacity(keys.len());
    let mut offset = 0;
    for (k, m) in keys.iter().zip(&members) {
        let n = m.len();
        let metric = Metric::for_task(k.task);
        let span = offset..offset + n;
        let runs: Vec<f64> = per_run.iter().map(|s| aggregate(metric, &s[span.clone()])).collect();
        rows.push(BucketScore {
            task: k.task,
            source: k.source.clone(),
            metric,
            tracks: n,
            excluded: groups[k].len() - n,
            mean: mean(&runs),
            std: std_dev(&runs),
            reference_loss: aggregate(metric, &reference[span]),
            runs,
        });
        offset += n;
    }
    let mut metrics: Vec<Metric> = rows.iter().map(|r| r.metric).collect();
    metrics.sort();
    metrics.dedup();
    Ok(BenchmarkReport {
        rows,
        meta: BenchmarkMeta {
            system: system.name(),
            metrics,
            n_runs: cfg.seeds.len(),
            seeds: cfg.seeds.clone(),
            config_hash: cfg.config_hash.clone(),
        },
    })
}

impl BenchmarkReport {
    /// Aligned text table: one line per task with `mean ± std` under each
    /// source column, followed by the reference loss of that task.
    pub fn to_table(&self) -> String {
        let mut sources: Vec<&str> = Vec::new();
        let mut tasks: Vec<Task> = Vec::new();
        for r in &self.rows {
            if !sources.contains(&r.source.as_str()) {
                sources.push(&r.source);
            }
            if !tasks.contains(&r.task) {
                tasks.push(r.task);
            }
        }
        let cell = |task: Task, src: &str, reference: bool| {
            self.rows
                .iter()
                .find(|r| r.task == task && r.source == src)
                .map(|r| {
                    if reference {
                        format!("{:.3}", r.reference_loss)
                    } else {
                        format!("{:.3} ± {:.3}", r.mean, r.std)
                    }
                })
                .unwrap_or_else(|| "-".into())
        };
        let mut lines: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["task".to_string(), "metric".to_string()];
        header.extend(sources.iter().map(|s| s.to_string()));
        lines.push(header);
        for &t in &tasks {
            let metric = Metric::for_task(t).name().to_string();
            let mut row = vec![t.name().to_string(), metric.clone()];
            row.extend(sources.iter().map(|s| cell(t, s, false)));
            lines.push(row);
            let mut row = vec!["  reference loss".to_string(), metric];
            row.extend(sources.iter().map(|s| cell(t, s, true)));
            lines.push(row);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "system: {}  runs: {}  seeds: {:?}",
            self.meta.system, self.meta.n_runs, self.meta.seeds
        );
        if let Some(h) = &self.meta.config_hash {
            let _ = writeln!(out, "config: {h}");
        }
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::apply_gain;
    use crate::dsp::synth::tone_with_bursts;

    fn tone() -> AudioTrack<f64> {
        tone_with_bursts(440.0, 0.5, 0.5, 8000, 3)
    }

    #[test]
    fn sdr_closed_forms() {
        let a = tone();
        assert_eq!(sdr(&a, &a).unwrap(), SDR_CAP_DB);
        let half = a.map_samples(|v| 0.5 * v);
        assert!((sdr(&a, &half).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-6);
        let zero = AudioTrack::silence(a.len(), 8000);
        assert_eq!(sdr(&a, &zero).unwrap(), 0.0);
        assert!(matches!(sdr(&zero, &a), Err(MetricsError::ZeroReference)));
    }

    #[test]
    fn rmse_is_zero_on_equal_and_symmetric() {
        let a = tone();
        let b = apply_gain(&a, 0.7).unwrap();
        let cfg = MfccConfig::default();
        assert_eq!(rmse_mfcc(&a, &a, &cfg).unwrap(), 0.0);
        assert_eq!(rmse_mfcc(&a, &b, &cfg).unwrap(), rmse_mfcc(&b, &a, &cfg).unwrap());
        let short = a.segment(0, 100).unwrap();
        assert!(matches!(
            rmse_mfcc(&short, &short, &cfg),
            Err(MetricsError::TooShort { .. })
        ));
    }

    #[test]
    fn shifted_mean_is_exact_on_constants() {
        assert_eq!(mean(&[0.1, 0.1, 0.1]), 0.1);
        assert_eq!(std_dev(&[0.1, 0.1, 0.1]), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
