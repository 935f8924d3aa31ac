//! Optimisation, the training loop and the two evaluation protocols.

mod adam;
mod protocol;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{assemble_batch, DataError, Segment, WindowPool};
use crate::metrics::{EvalReport, MetricsError};
use crate::model::{HistnModel, ModelError, ParamGroup};
use crate::tensor::Tensor;

pub use adam::{adam_update, Moments, OptimState, BETA1, BETA2, EPS};
pub use protocol::{
    aggregate, cv_unit, fold_split, loocv_stage1_labels, loocv_unit, run_loocv,
    run_subject_dependent_cv, Aggregate, CvUnit, FoldSplit, LoocvUnit, MetricSummary, Protocol,
    ProtocolConfig, ProtocolReport, RunConfigEcho, UnitReport,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainingError>;

/// Hyperparameters of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Overrides the windows-per-epoch convention when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_epoch: Option<usize>,
}

impl StageConfig {
    pub fn new(batch_size: usize, lr: f64, epochs: usize) -> Self {
        Self {
            batch_size,
            lr,
            epochs,
            steps_per_epoch: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.steps_per_epoch == Some(0) {
            return Err(TrainingError::Config(format!(
                "batch size, learning rate and steps per epoch must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `⌈windows / batch⌉` unless overridden, where `windows` counts the
    /// non-overlapping training windows.
    pub fn steps(&self, windows: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| windows.div_ceil(self.batch_size).max(1))
    }
}

/// A fixed evaluation set.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl EvalSet {
    pub fn from_segments(segments: &[Segment<'_>]) -> Result<Self> {
        let (inputs, labels) = assemble_batch(segments)?;
        Ok(Self { inputs, labels })
    }

    /// Draws `n` windows, balanced over the pool's labels (rounded down to a
    /// multiple of the label count).
    pub fn balanced(pool: &WindowPool<'_>, n: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let size = pool.balanced_size(n);
        Self::from_segments(&pool.balanced_batch(size, rng)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-epoch history of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub steps_per_epoch: usize,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

/// Evaluation-mode loss over a set, averaged per sample.
pub fn evaluate_loss(model: &HistnModel, set: &EvalSet) -> Result<f64> {
    let out = model.forward(&set.inputs, None)?;
    Ok(model.loss(&out, &set.labels)?.item().map_err(ModelError::from)?)
}

pub fn evaluate(model: &HistnModel, set: &EvalSet) -> Result<EvalReport> {
    let out = model.forward(&set.inputs, None)?;
    let rankings = model.rankings(&out);
    Ok(EvalReport::from_rankings(
        &rankings,
        &set.labels,
        model.config().num_classes,
    )?)
}

/// Trains on balanced batches from `pool`. With a validation set the model
/// ends with the lowest-validation-loss weights; otherwise with the final
/// weights.
pub fn train(
    model: &mut HistnModel,
    pool: &WindowPool<'_>,
    val: Option<&EvalSet>,
    cfg: &StageConfig,
    windows_per_epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RunRecord> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let batch = pool.balanced_size(cfg.batch_size);
    if batch == 0 {
        return Err(TrainingError::Config(format!(
            "batch size {} is smaller than the {} labels present",
            cfg.batch_size,
            pool.labels().len()
        )));
    }
    let steps = cfg.steps(windows_per_epoch);
    let mut optim = OptimState::new(model, cfg.lr);
    let mut record = RunRecord {
        train_losses: Vec::with_capacity(cfg.epochs),
        val_losses: Vec::new(),
        best_epoch: None,
        best_val_loss: None,
        steps_per_epoch: steps,
        wall_clock_s: 0.0,
    };
    let mut best: Option<HistnModel> = None;
    for epoch in 0..cfg.epochs {
        let diverged = |e: &dyn std::fmt::Display| TrainingError::Diverged {
            epoch,
            reason: e.to_string(),
        };
        let mut total = 0.0;
        for _ in 0..steps {
            let segments = pool.balanced_batch(batch, rng)?;
            let (x, labels) = assemble_batch(&segments)?;
            let out = model
                .forward(&x, Some(&mut *rng as &mut dyn RngCore))
                .map_err(|e| diverged(&e))?;
            let loss = model.loss(&out, &labels).map_err(|e| diverged(&e))?;
            let value = loss.item().map_err(|e| diverged(&e))?;
            if !value.is_finite() {
                return Err(diverged(&"loss is not finite"));
            }
            loss.backward().map_err(|e| diverged(&e))?;
            optim.step(model).map_err(|e| match e {
                TrainingError::NonFiniteGradient(_) => diverged(&e),
                other => other,
            })?;
            total += value;
        }
        record.train_losses.push(total / steps as f64);
        if let Some(set) = val {
            let loss = evaluate_loss(model, set).map_err(|e| diverged(&e))?;
            record.val_losses.push(loss);
            if record.best_val_loss.is_none_or(|b| loss < b) {
                record.best_val_loss = Some(loss);
                record.best_epoch = Some(epoch);
                best = Some(model.clone());
            }
        }
    }
    if let Some(b) = best {
        *model = b;
    }
    record.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Trains with the listed groups frozen; Adam state is allocated only for the
/// remaining parameters.
pub fn fine_tune(
    model: &mut HistnModel,
    freeze: &[&str],
    pool: &WindowPool<'_>,
    val: Option<&EvalSet>,
    cfg: &StageConfig,
    windows_per_epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RunRecord> {
    let groups = freeze
        .iter()
        .map(|g| g.parse::<ParamGroup>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    model.set_frozen(&groups)?;
    let out = train(model, pool, val, cfg, windows_per_epoch, rng);
    model.set_frozen(&[])?;
    out
}

/// Independent generator for a numbered unit (fold, subject) of a run.
pub fn unit_rng(seed: u64, unit: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit + 1);
    rng
}
