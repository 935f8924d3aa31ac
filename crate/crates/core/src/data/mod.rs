//! Dataset format, baseline normalisation, window sampling and consensus
//! relabelling.
//!
//! Signals are stored channel-major (`channels × samples`); batches handed to
//! the model are time-major (`[B, T, C]`).

mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::files::write_atomic;
use crate::tensor::{Tensor, TensorError};

pub use synth::{bandpower_features, synth_dataset, synth_generate, SynthSpec};

pub const SIGNAL_MAGIC: &[u8; 4] = b"HSTN";
pub const SIGNAL_FORMAT: u32 = 1;
const HEADER_LEN: usize = 16;

/// Label dimensions carried by every trial.
pub const DIMENSIONS: [&str; 2] = ["valence", "arousal"];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot load {what}: {reason}")]
    Load { what: String, reason: String },
    #[error("normalisation failed for trial {trial} of subject {subject}: channel {channel} has a constant baseline")]
    Normalization {
        subject: String,
        trial: u32,
        channel: String,
    },
    #[error("window [{start}, {end}) outside a signal of {samples} samples")]
    Range {
        start: usize,
        end: usize,
        samples: usize,
    },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("no windows available for label {0}")]
    Coverage(usize),
    #[error("invalid dataset specification: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Dense `channels × samples` signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub channels: usize,
    pub samples: usize,
    pub data: Vec<f64>,
}

impl Signal {
    pub fn new(channels: usize, samples: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * samples {
            return Err(DataError::Parameter(format!(
                "{} values for a {channels}x{samples} signal",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            samples,
            data,
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        out.extend_from_slice(SIGNAL_MAGIC);
        out.extend_from_slice(&SIGNAL_FORMAT.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("file has {} bytes, shorter than the header", bytes.len()));
        }
        if &bytes[..4] != SIGNAL_MAGIC {
            return Err("bad magic".into());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        if word(4) != SIGNAL_FORMAT {
            return Err(format!("unsupported signal format {}", word(4)));
        }
        let (channels, samples) = (word(8) as usize, word(12) as usize);
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * channels * samples {
            return Err(format!(
                "header declares {channels}x{samples} samples but the payload holds {} bytes",
                body.len()
            ));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            channels,
            samples,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub subject_id: String,
    pub trial_id: u32,
    pub signal: Signal,
    pub baseline: Signal,
    pub sample_rate_hz: u32,
    pub labels: BTreeMap<String, usize>,
}

impl TrialRecord {
    pub fn label(&self, dimension: &str) -> Result<usize> {
        self.labels.get(dimension).copied().ok_or_else(|| {
            DataError::Parameter(format!(
                "trial {} of subject {} has no {dimension:?} label",
                self.trial_id, self.subject_id
            ))
        })
    }

    pub fn seconds(&self) -> f64 {
        self.signal.samples as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub subject: String,
    pub trial: u32,
    pub labels: BTreeMap<String, usize>,
    pub signal: String,
    pub baseline: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub channels: Vec<String>,
    pub sample_rate_hz: u32,
    pub trials: Vec<TrialEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Trials with their shared channel list and sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: Vec<String>,
    pub sample_rate_hz: u32,
    pub trials: Vec<TrialRecord>,
}

impl Dataset {
    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.trials {
            if !out.contains(&t.subject_id) {
                out.push(t.subject_id.clone());
            }
        }
        out
    }

    pub fn subject_trials(&self, subject: &str) -> Vec<&TrialRecord> {
        self.trials.iter().filter(|t| t.subject_id == subject).collect()
    }

    /// Baseline-normalises every trial.
    pub fn normalized(&self) -> Result<Dataset> {
        Ok(Dataset {
            channels: self.channels.clone(),
            sample_rate_hz: self.sample_rate_hz,
            trials: self
                .trials
                .iter()
                .map(|t| baseline_normalize(t, &self.channels))
                .collect::<Result<_>>()?,
        })
    }
}

fn load_error(what: impl Into<String>, reason: impl std::fmt::Display) -> DataError {
    DataError::Load {
        what: what.into(),
        reason: reason.to_string(),
    }
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let path = manifest_path(path);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| load_error(format!("manifest {}", path.display()), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| load_error(format!("manifest {}", path.display()), e))?;
    if manifest.sample_rate_hz == 0 || manifest.channels.is_empty() {
        return Err(load_error(
            format!("manifest {}", path.display()),
            "sample rate and channel list must be non-empty",
        ));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let c = manifest.channels.len();
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for entry in &manifest.trials {
        let what = |kind: &str| format!("{kind} of subject {} trial {}", entry.subject, entry.trial);
        let read = |file: &str, kind: &str| -> Result<Signal> {
            let bytes = std::fs::read(dir.join(file))
                .map_err(|e| load_error(what(kind), format!("{file}: {e}")))?;
            let s = Signal::from_bytes(&bytes).map_err(|e| load_error(what(kind), format!("{file}: {e}")))?;
            if s.channels != c {
                return Err(load_error(
                    what(kind),
                    format!("{file} has {} channels, manifest lists {c}", s.channels),
                ));
            }
            Ok(s)
        };
        let signal = read(&entry.signal, "signal")?;
        let baseline = read(&entry.baseline, "baseline")?;
        for (dim, &score) in &entry.labels {
            if !(1..=5).contains(&score) {
                return Err(load_error(what("labels"), format!("{dim} score {score} outside 1..=5")));
            }
        }
        trials.push(TrialRecord {
            subject_id: entry.subject.clone(),
            trial_id: entry.trial,
            signal,
            baseline,
            sample_rate_hz: manifest.sample_rate_hz,
            labels: entry.labels.clone(),
        });
    }
    Ok(Dataset {
        channels: manifest.channels,
        sample_rate_hz: manifest.sample_rate_hz,
        trials,
    })
}

fn file_stem(subject: &str, trial: u32) -> String {
    format!("{subject}_T{trial:02}")
}

/// Writes signal files and `manifest.json` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.trials.len());
    for t in &dataset.trials {
        let stem = file_stem(&t.subject_id, t.trial_id);
        let signal = format!("{stem}.f64");
        let baseline = format!("{stem}_base.f64");
        write_atomic(&dir.join(&signal), &t.signal.to_bytes())?;
        write_atomic(&dir.join(&baseline), &t.baseline.to_bytes())?;
        entries.push(TrialEntry {
            subject: t.subject_id.clone(),
            trial: t.trial_id,
            labels: t.labels.clone(),
            signal,
            baseline,
        });
    }
    let manifest = DatasetManifest {
        channels: dataset.channels.clone(),
        sample_rate_hz: dataset.sample_rate_hz,
        trials: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DataError::Parameter(format!("cannot encode manifest: {e}")))?;
    write_atomic(&dir.join(MANIFEST_NAME), text.as_bytes())?;
    Ok(())
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-channel z-score of the stimulus signal against the baseline's mean and
/// (population) standard deviation.
pub fn baseline_normalize(trial: &TrialRecord, channel_names: &[String]) -> Result<TrialRecord> {
    let (s, b) = (&trial.signal, &trial.baseline);
    if b.channels != s.channels || b.samples == 0 {
        return Err(DataError::Parameter(format!(
            "baseline of trial {} has shape {}x{}, signal has {} channels",
            trial.trial_id, b.channels, b.samples, s.channels
        )));
    }
    let mut data = Vec::with_capacity(s.data.len());
    for c in 0..s.channels {
        let (mean, std) = mean_std(b.channel(c));
        if std <= 1e-12 {
            return Err(DataError::Normalization {
                subject: trial.subject_id.clone(),
                trial: trial.trial_id,
                channel: channel_names
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| format!("#{c}")),
            });
        }
        data.extend(s.channel(c).iter().map(|v| (v - mean) / std));
    }
    Ok(TrialRecord {
        signal: Signal::new(s.channels, s.samples, data)?,
        ..trial.clone()
    })
}

/// Window length in samples for `seconds` at `rate`.
pub fn window_len(rate: u32, seconds: f64) -> Result<usize> {
    let n = rate as f64 * seconds;
    if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
        return Err(DataError::Parameter(format!(
            "{seconds} s at {rate} Hz is not a whole positive number of samples"
        )));
    }
    Ok(n.round() as usize)
}

/// A borrowed window of one trial.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub trial: &'a TrialRecord,
    pub start: usize,
    pub len: usize,
    pub label: usize,
}

impl<'a> Segment<'a> {
    pub fn subject_id(&self) -> &'a str {
        &self.trial.subject_id
    }

    /// Samples of channel `c`, borrowed from the trial.
    pub fn channel(&self, c: usize) -> &'a [f64] {
        &self.trial.signal.channel(c)[self.start..self.start + self.len]
    }
}

pub fn window_sample<'a>(
    trial: &'a TrialRecord,
    start: usize,
    seconds: f64,
    label: usize,
) -> Result<Segment<'a>> {
    let len = window_len(trial.sample_rate_hz, seconds)?;
    let samples = trial.signal.samples;
    if start + len > samples {
        return Err(DataError::Range {
            start,
            end: start + len,
            samples,
        });
    }
    Ok(Segment {
        trial,
        start,
        len,
        label,
    })
}

/// Consecutive non-overlapping windows of `len` samples covering a trial; a
/// trailing remainder is dropped.
pub fn tiled_segments(trial: &TrialRecord, len: usize, label: usize) -> Vec<Segment<'_>> {
    if len == 0 {
        return Vec::new();
    }
    (0..trial.signal.samples / len)
        .map(|i| Segment {
            trial,
            start: i * len,
            len,
            label,
        })
        .collect()
}

/// A trial, the label it carries for sampling, and the sample ranges windows
/// may be drawn from (each window must fit inside one range).
#[derive(Debug, Clone)]
pub struct WindowSource<'a> {
    pub trial: &'a TrialRecord,
    pub label: usize,
    pub ranges: Vec<(usize, usize)>,
}

impl<'a> WindowSource<'a> {
    pub fn whole(trial: &'a TrialRecord, label: usize) -> Self {
        Self {
            trial,
            label,
            ranges: vec![(0, trial.signal.samples)],
        }
    }
}

#[derive(Debug, Clone)]
struct Span {
    source: usize,
    first: usize,
    count: usize,
}

#[derive(Debug, Clone)]
struct LabelPool {
    label: usize,
    spans: Vec<Span>,
    total: usize,
}

/// Uniform sampler over every admissible `(trial, offset)` pair, grouped by
/// label.
#[derive(Debug, Clone)]
pub struct WindowPool<'a> {
    sources: Vec<WindowSource<'a>>,
    len: usize,
    pools: Vec<LabelPool>,
}

impl<'a> WindowPool<'a> {
    pub fn new(sources: Vec<WindowSource<'a>>, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(DataError::Parameter("window length must be positive".into()));
        }
        let mut by_label: BTreeMap<usize, LabelPool> = BTreeMap::new();
        for (i, s) in sources.iter().enumerate() {
            let pool = by_label.entry(s.label).or_insert(LabelPool {
                label: s.label,
                spans: Vec::new(),
                total: 0,
            });
            for &(a, b) in &s.ranges {
                if b > s.trial.signal.samples || a > b {
                    return Err(DataError::Range {
                        start: a,
                        end: b,
                        samples: s.trial.signal.samples,
                    });
                }
                if b - a >= len {
                    let count = b - a - len + 1;
                    pool.spans.push(Span {
                        source: i,
                        first: a,
                        count,
                    });
                    pool.total += count;
                }
            }
        }
        if let Some(p) = by_label.values().find(|p| p.total == 0) {
            return Err(DataError::Coverage(p.label));
        }
        Ok(Self {
            sources,
            len,
            pools: by_label.into_values().collect(),
        })
    }

    /// Distinct labels, ascending.
    pub fn labels(&self) -> Vec<usize> {
        self.pools.iter().map(|p| p.label).collect()
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    fn draw_from<R: Rng + ?Sized>(&self, pool: &LabelPool, rng: &mut R) -> Segment<'a> {
        let mut k = rng.random_range(0..pool.total);
        for span in &pool.spans {
            if k < span.count {
                let src = &self.sources[span.source];
                return Segment {
                    trial: src.trial,
                    start: span.first + k,
                    len: self.len,
                    label: pool.label,
                };
            }
            k -= span.count;
        }
        unreachable!("draw index within pool total")
    }

    /// `batch_size / L` windows per distinct label, label-major order.
    pub fn balanced_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<Segment<'a>>> {
        let l = self.pools.len();
        if l == 0 || batch_size == 0 || batch_size % l != 0 {
            return Err(DataError::Parameter(format!(
                "batch size {batch_size} is not a positive multiple of the {l} labels present"
            )));
        }
        let per = batch_size / l;
        let mut out = Vec::with_capacity(batch_size);
        for pool in &self.pools {
            for _ in 0..per {
                out.push(self.draw_from(pool, rng));
            }
        }
        Ok(out)
    }

    /// Largest multiple of the label count not exceeding `n`.
    pub fn balanced_size(&self, n: usize) -> usize {
        let l = self.pools.len().max(1);
        (n / l) * l
    }
}

/// Draws a label-balanced batch from whole trials labelled on `dimension`.
pub fn balanced_batch<'a, R: Rng + ?Sized>(
    trials: &'a [TrialRecord],
    dimension: &str,
    batch_size: usize,
    window_s: f64,
    rng: &mut R,
) -> Result<Vec<Segment<'a>>> {
    let first = trials
        .first()
        .ok_or_else(|| DataError::Parameter("no trials to sample from".into()))?;
    let len = window_len(first.sample_rate_hz, window_s)?;
    let sources = trials
        .iter()
        .map(|t| Ok(WindowSource::whole(t, t.label(dimension)?)))
        .collect::<Result<Vec<_>>>()?;
    WindowPool::new(sources, len)?.balanced_batch(batch_size, rng)
}

/// Stacks segments into a time-major `[B, T, C]` tensor plus their labels.
pub fn assemble_batch(segments: &[Segment<'_>]) -> Result<(Tensor, Vec<usize>)> {
    let first = segments
        .first()
        .ok_or_else(|| DataError::Parameter("empty batch".into()))?;
    let (t, c) = (first.len, first.trial.signal.channels);
    let mut data = vec![0.0; segments.len() * t * c];
    for (b, seg) in segments.iter().enumerate() {
        if seg.len != t || seg.trial.signal.channels != c {
            return Err(DataError::Parameter("segments differ in shape".into()));
        }
        let block = &mut data[b * t * c..(b + 1) * t * c];
        for ch in 0..c {
            for (ti, v) in seg.channel(ch).iter().enumerate() {
                block[ti * c + ch] = *v;
            }
        }
    }
    let labels = segments.iter().map(|s| s.label).collect();
    Ok((Tensor::new(&[segments.len(), t, c], data)?, labels))
}

/// Mode of the ratings; ties go to the score closest to the mean rating, then
/// to the smaller score.
pub fn consensus_score(ratings: &[usize]) -> Option<usize> {
    if ratings.is_empty() {
        return None;
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in ratings {
        *counts.entry(r).or_default() += 1;
    }
    let best = *counts.values().max()?;
    let mean = ratings.iter().sum::<usize>() as f64 / ratings.len() as f64;
    counts
        .into_iter()
        .filter(|&(_, n)| n == best)
        .map(|(s, _)| s)
        .min_by(|a, b| {
            let (da, db) = ((*a as f64 - mean).abs(), (*b as f64 - mean).abs());
            da.total_cmp(&db).then(a.cmp(b))
        })
}

/// Consensus score per `(trial_id, dimension)` across all subjects.
pub fn consensus_scores(trials: &[&TrialRecord]) -> BTreeMap<(u32, String), usize> {
    let mut ratings: BTreeMap<(u32, String), Vec<usize>> = BTreeMap::new();
    for t in trials {
        for (dim, &score) in &t.labels {
            ratings.entry((t.trial_id, dim.clone())).or_default().push(score);
        }
    }
    ratings
        .into_iter()
        .filter_map(|(k, v)| consensus_score(&v).map(|s| (k, s)))
        .collect()
}

/// Replaces each subject's rating with the consensus rating of its trial.
pub fn consensus_relabel(trials: &[TrialRecord]) -> Vec<TrialRecord> {
    let refs: Vec<&TrialRecord> = trials.iter().collect();
    let consensus = consensus_scores(&refs);
    trials
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for (dim, score) in t.labels.iter_mut() {
                *score = consensus[&(t.trial_id, dim.clone())];
            }
            t
        })
        .collect()
}
