//! Subject-dependent trunk cross-validation and two-stage leave-one-subject-out
//! evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    evaluate, fine_tune, train, unit_rng, EvalSet, Result, RunRecord, StageConfig, TrainingError,
};
use crate::data::{consensus_scores, window_len, Dataset, TrialRecord, WindowPool, WindowSource};
use crate::metrics::{EvalReport, METRIC_KEYS};
use crate::model::{build_model, HistnModel, ModelConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SubjectDependentCv,
    LoocvTwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    /// Label dimension to classify.
    pub dimension: String,
    pub folds: usize,
    /// Leading stimulus duration used by both protocols.
    pub stimulus_seconds: f64,
    pub window_seconds: f64,
    pub test_draws: usize,
    pub val_draws: usize,
    /// Restricts the evaluated subjects (cross-validation) or held-out
    /// subjects (leave-one-out); all subjects when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subjects: Option<Vec<String>>,
    pub cv: StageConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage2_variant_c: StageConfig,
    pub finetune_seconds: f64,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::SubjectDependentCv,
            dimension: "valence".into(),
            folds: 10,
            stimulus_seconds: 60.0,
            window_seconds: 1.0,
            test_draws: 1000,
            val_draws: 250,
            subjects: None,
            cv: StageConfig::new(256, 0.001, 50),
            stage1: StageConfig::new(120, 0.01, 100),
            stage2: StageConfig::new(100, 0.001, 400),
            stage2_variant_c: StageConfig::new(100, 0.005, 500),
            finetune_seconds: 10.0,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        for s in [&self.cv, &self.stage1, &self.stage2, &self.stage2_variant_c] {
            s.validate()?;
        }
        if self.folds < 3 {
            return Err(TrainingError::Config(format!(
                "{} folds leave no training trunk; at least 3 are needed",
                self.folds
            )));
        }
        if self.test_draws == 0 || self.val_draws == 0 {
            return Err(TrainingError::Config("test and validation draws must be positive".into()));
        }
        if !(self.window_seconds > 0.0)
            || !(self.stimulus_seconds > 0.0)
            || !(self.finetune_seconds > 0.0 && self.finetune_seconds < self.stimulus_seconds)
        {
            return Err(TrainingError::Config(
                "window, stimulus and fine-tuning durations must be positive with fine-tuning shorter than the stimulus".into(),
            ));
        }
        Ok(())
    }
}

/// Sample ranges of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub test: (usize, usize),
    pub val: (usize, usize),
    /// Remaining trunks, adjacent ones merged.
    pub train: Vec<(usize, usize)>,
}

/// Fold `k` of `folds` consecutive trunks over `samples`: trunk `k` tests,
/// trunk `k - 1` (wrapping) validates, the rest train.
pub fn fold_split(samples: usize, folds: usize, k: usize) -> Result<FoldSplit> {
    if folds < 3 || k >= folds || samples % folds != 0 {
        return Err(TrainingError::Protocol(format!(
            "cannot take fold {k} of {folds} over {samples} samples"
        )));
    }
    let trunk = samples / folds;
    let range = |i: usize| (i * trunk, (i + 1) * trunk);
    let val_idx = (k + folds - 1) % folds;
    let mut train: Vec<(usize, usize)> = Vec::new();
    for i in (0..folds).filter(|&i| i != k && i != val_idx) {
        let (a, b) = range(i);
        match train.last_mut() {
            Some(last) if last.1 == a => last.1 = b,
            _ => train.push((a, b)),
        }
    }
    Ok(FoldSplit {
        test: range(k),
        val: range(val_idx),
        train,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

pub type Aggregate = BTreeMap<String, MetricSummary>;

/// Mean and sample standard deviation over units; values are sorted first
/// so the result does not depend on unit order.
pub fn aggregate(reports: &[&EvalReport]) -> Aggregate {
    METRIC_KEYS
        .iter()
        .map(|&key| {
            let mut v: Vec<f64> = reports.iter().filter_map(|r| r.metric(key)).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (key.to_string(), MetricSummary { mean, std })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub unit: String,
    #[serde(flatten)]
    pub report: EvalReport,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigEcho {
    pub model: ModelConfig,
    pub protocol: ProtocolConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: Protocol,
    pub variant: Variant,
    pub per_unit: Vec<UnitReport>,
    pub aggregate: Aggregate,
    pub seed: u64,
    pub config: RunConfigEcho,
}

impl ProtocolReport {
    fn new(model: &ModelConfig, cfg: &ProtocolConfig, per_unit: Vec<UnitReport>) -> Self {
        let reports: Vec<&EvalReport> = per_unit.iter().map(|u| &u.report).collect();
        Self {
            protocol: cfg.protocol,
            variant: model.variant,
            aggregate: aggregate(&reports),
            per_unit,
            seed: cfg.seed,
            config: RunConfigEcho {
                model: model.clone(),
                protocol: cfg.clone(),
            },
        }
    }

    /// Per-unit values of one metric, in unit order.
    pub fn metric_values(&self, key: &str) -> Vec<f64> {
        self.per_unit.iter().filter_map(|u| u.report.metric(key)).collect()
    }
}

fn stimulus_samples(ds: &Dataset, cfg: &ProtocolConfig, trials: &[&TrialRecord]) -> Result<usize> {
    let n = window_len(ds.sample_rate_hz, cfg.stimulus_seconds)?;
    if let Some(t) = trials.iter().find(|t| t.signal.samples < n) {
        return Err(TrainingError::Protocol(format!(
            "trial {} of subject {} lasts {:.2} s, the protocol needs {} s",
            t.trial_id,
            t.subject_id,
            t.seconds(),
            cfg.stimulus_seconds
        )));
    }
    Ok(n)
}

fn windows_in(sources: &[WindowSource<'_>], len: usize) -> usize {
    sources
        .iter()
        .flat_map(|s| s.ranges.iter().map(|(a, b)| (b - a) / len))
        .sum()
}

fn sources_for<'a>(
    trials: &[&'a TrialRecord],
    ranges: &[(usize, usize)],
    label: impl Fn(&TrialRecord) -> Result<usize>,
) -> Result<Vec<WindowSource<'a>>> {
    trials
        .iter()
        .map(|t| {
            Ok(WindowSource {
                trial: t,
                label: label(t)?,
                ranges: ranges.to_vec(),
            })
        })
        .collect()
}

fn selected(all: Vec<String>, only: &Option<Vec<String>>) -> Result<Vec<(usize, String)>> {
    let indexed: Vec<(usize, String)> = all.into_iter().enumerate().collect();
    match only {
        None => Ok(indexed),
        Some(list) => {
            if let Some(missing) = list.iter().find(|s| !indexed.iter().any(|(_, x)| x == *s)) {
                return Err(TrainingError::Config(format!("unknown subject {missing}")));
            }
            Ok(indexed.into_iter().filter(|(_, s)| list.contains(s)).collect())
        }
    }
}

/// Result of one cross-validation fold.
#[derive(Debug, Clone)]
pub struct CvUnit {
    pub model: HistnModel,
    pub report: EvalReport,
    pub run: RunRecord,
}

/// Trains and tests fold `k` for one subject's (normalised) trials.
pub fn cv_unit(
    ds: &Dataset,
    subject: &str,
    unit_index: u64,
    k: usize,
    model_cfg: &ModelConfig,
    cfg: &ProtocolConfig,
) -> Result<CvUnit> {
    let trials = ds.subject_trials(subject);
    let n = stimulus_samples(ds, cfg, &trials)?;
    let split = fold_split(n, cfg.folds, k)?;
    let len = window_len(ds.sample_rate_hz, cfg.window_seconds)?;
    let dim = cfg.dimension.as_str();
    let own = |t: &TrialRecord| Ok(t.label(dim)?);
    let mut rng = unit_rng(cfg.seed, unit_index);
    let mut model = build_model(model_cfg, &mut rng)?;

    let train_sources = sources_for(&trials, &split.train, own)?;
    let windows = windows_in(&train_sources, len);
    let train_pool = WindowPool::new(train_sources, len)?;
    let val_pool = WindowPool::new(sources_for(&trials, &[split.val], own)?, len)?;
    let test_pool = WindowPool::new(sources_for(&trials, &[split.test], own)?, len)?;
    let val = EvalSet::balanced(&val_pool, cfg.val_draws, &mut rng)?;
    let test = EvalSet::balanced(&test_pool, cfg.test_draws, &mut rng)?;

    let run = train(&mut model, &train_pool, Some(&val), &cfg.cv, windows, &mut rng)?;
    let report = evaluate(&model, &test)?;
    Ok(CvUnit { model, report, run })
}

/// Runs every fold for every selected subject; `ds` should already be
/// baseline-normalised.
pub fn run_subject_dependent_cv(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &ProtocolConfig,
) -> Result<ProtocolReport> {
    cfg.validate()?;
    let mut per_unit = Vec::new();
    for (si, subject) in selected(ds.subjects(), &cfg.subjects)? {
        for k in 0..cfg.folds {
            let unit = (si * cfg.folds + k) as u64;
            let r = cv_unit(ds, &subject, unit, k, model_cfg, cfg)?;
            per_unit.push(UnitReport {
                unit: format!("{subject}/fold{k}"),
                report: r.report,
                runs: vec![r.run],
            });
        }
    }
    Ok(ProtocolReport::new(model_cfg, cfg, per_unit))
}

/// Consensus labels used in stage 1 when `target` is held out, keyed by
/// `(subject, trial)`.
pub fn loocv_stage1_labels(
    ds: &Dataset,
    target: &str,
    dimension: &str,
) -> Result<BTreeMap<(String, u32), usize>> {
    let others: Vec<&TrialRecord> = ds.trials.iter().filter(|t| t.subject_id != target).collect();
    let consensus = consensus_scores(&others);
    others
        .iter()
        .map(|t| {
            let key = (t.trial_id, dimension.to_string());
            let label = consensus.get(&key).copied().ok_or_else(|| {
                TrainingError::Protocol(format!("trial {} has no {dimension} rating", t.trial_id))
            })?;
            Ok(((t.subject_id.clone(), t.trial_id), label))
        })
        .collect()
}

/// Result of one held-out subject.
#[derive(Debug, Clone)]
pub struct LoocvUnit {
    pub stage1_model: HistnModel,
    pub model: HistnModel,
    pub report: EvalReport,
    pub runs: Vec<RunRecord>,
}

pub fn loocv_unit(
    ds: &Dataset,
    target: &str,
    unit_index: u64,
    model_cfg: &ModelConfig,
    cfg: &ProtocolConfig,
) -> Result<LoocvUnit> {
    let dim = cfg.dimension.as_str();
    let len = window_len(ds.sample_rate_hz, cfg.window_seconds)?;
    let others: Vec<&TrialRecord> = ds.trials.iter().filter(|t| t.subject_id != target).collect();
    let own_trials = ds.subject_trials(target);
    if others.is_empty() || own_trials.is_empty() {
        return Err(TrainingError::Protocol(format!(
            "leave-one-out needs the held-out subject {target} and at least one other"
        )));
    }
    let n = stimulus_samples(ds, cfg, &ds.trials.iter().collect::<Vec<_>>())?;
    let ft = window_len(ds.sample_rate_hz, cfg.finetune_seconds)?;
    let mut rng = unit_rng(cfg.seed, unit_index);
    let mut model = build_model(model_cfg, &mut rng)?;

    let labels = loocv_stage1_labels(ds, target, dim)?;
    let stage1_sources = sources_for(&others, &[(0, n)], |t| {
        Ok(labels[&(t.subject_id.clone(), t.trial_id)])
    })?;
    let windows = windows_in(&stage1_sources, len);
    let pool = WindowPool::new(stage1_sources, len)?;
    let run1 = train(&mut model, &pool, None, &cfg.stage1, windows, &mut rng)?;
    let stage1_model = model.clone();

    let stage2 = if model_cfg.variant == Variant::C {
        &cfg.stage2_variant_c
    } else {
        &cfg.stage2
    };
    let own = |t: &TrialRecord| Ok(t.label(dim)?);
    let ft_sources = sources_for(&own_trials, &[(0, ft)], own)?;
    let windows = windows_in(&ft_sources, len);
    let ft_pool = WindowPool::new(ft_sources, len)?;
    let run2 = fine_tune(&mut model, &["head"], &ft_pool, None, stage2, windows, &mut rng)?;

    let test_pool = WindowPool::new(sources_for(&own_trials, &[(ft, n)], own)?, len)?;
    let test = EvalSet::balanced(&test_pool, cfg.test_draws, &mut rng)?;
    let report = evaluate(&model, &test)?;
    Ok(LoocvUnit {
        stage1_model,
        model,
        report,
        runs: vec![run1, run2],
    })
}

pub fn run_loocv(ds: &Dataset, model_cfg: &ModelConfig, cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    cfg.validate()?;
    let subjects = ds.subjects();
    if subjects.len() < 2 {
        return Err(TrainingError::Protocol(format!(
            "leave-one-out needs at least two subjects, found {}",
            subjects.len()
        )));
    }
    let mut per_unit = Vec::new();
    for (si, subject) in selected(subjects, &cfg.subjects)? {
        let r = loocv_unit(ds, &subject, si as u64, model_cfg, cfg)?;
        per_unit.push(UnitReport {
            unit: subject,
            report: r.report,
            runs: r.runs,
        });
    }
    Ok(ProtocolReport::new(model_cfg, cfg, per_unit))
}
