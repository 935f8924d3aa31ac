//! Run configuration files and command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use histn::data::{window_len, Dataset};
use histn::graph::GraphChoice;
use histn::training::{Protocol, ProtocolConfig, StageConfig};
use histn::{Activation, GraphHierarchy, ModelConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Model settings as written in a config file; the hierarchy is resolved
/// against the dataset's channel list and the window length against its
/// sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_views: usize,
    pub head_kernel: usize,
    pub head_pool: usize,
    pub sep_kernel: usize,
    pub graph: GraphChoice,
    pub variant: Variant,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub smoothing_s: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            num_views: m.num_views,
            head_kernel: m.head_kernel,
            head_pool: m.head_pool,
            sep_kernel: m.sep_kernel,
            graph: GraphChoice::default(),
            variant: m.variant,
            num_classes: m.num_classes,
            dropout_rate: m.dropout_rate,
            activation: m.activation,
            smoothing_s: m.smoothing_s,
        }
    }
}

impl ModelSection {
    pub fn build(&self, channels: &[String], input_len: usize) -> Result<ModelConfig, CliError> {
        let hierarchy = GraphHierarchy::from_choice(&self.graph, channels)
            .map_err(|e| CliError::Config(format!("graph: {e}")))?;
        let cfg = ModelConfig {
            num_views: self.num_views,
            head_kernel: self.head_kernel,
            head_pool: self.head_pool,
            sep_kernel: self.sep_kernel,
            input_len,
            hierarchy,
            variant: self.variant,
            num_classes: self.num_classes,
            dropout_rate: self.dropout_rate,
            activation: self.activation,
            smoothing_s: self.smoothing_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub protocol: ProtocolConfig,
    /// Replaces `protocol.seed` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// `cv` or `loocv`.
    #[arg(long, value_parser = parse_protocol)]
    pub protocol: Option<Protocol>,
    #[arg(long)]
    pub dimension: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated subject ids.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Option<Vec<String>>,
    /// Applied to every training stage.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Applied to every training stage.
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Applied to every training stage.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Applied to every training stage.
    #[arg(long)]
    pub lr: Option<f64>,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s {
        "cv" | "subject_dependent_cv" => Ok(Protocol::SubjectDependentCv),
        "loocv" | "loocv_two_stage" => Ok(Protocol::LoocvTwoStage),
        other => Err(format!("unknown protocol {other:?}; expected cv or loocv")),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(seed) = self.seed {
            self.protocol.seed = seed;
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(p) = o.protocol {
            self.protocol.protocol = p;
        }
        if let Some(d) = &o.dimension {
            self.protocol.dimension = d.clone();
        }
        if let Some(f) = o.folds {
            self.protocol.folds = f;
        }
        if let Some(s) = &o.subjects {
            self.protocol.subjects = Some(s.clone());
        }
        let p = &mut self.protocol;
        for stage in [&mut p.cv, &mut p.stage1, &mut p.stage2, &mut p.stage2_variant_c] {
            apply_stage(stage, o);
        }
    }

    /// Resolves the model against a dataset and validates both halves.
    pub fn resolve(&self, ds: &Dataset) -> Result<(ModelConfig, ProtocolConfig), CliError> {
        self.protocol.validate()?;
        let input_len = window_len(ds.sample_rate_hz, self.protocol.window_seconds)?;
        let model = self.model.build(&ds.channels, input_len)?;
        let dim = &self.protocol.dimension;
        for t in &ds.trials {
            let label = t.label(dim)?;
            if label > model.num_classes {
                return Err(CliError::Config(format!(
                    "trial {} of subject {} has {dim} score {label} above num_classes {}",
                    t.trial_id, t.subject_id, model.num_classes
                )));
            }
        }
        Ok((model, self.protocol.clone()))
    }
}

fn apply_stage(s: &mut StageConfig, o: &Overrides) {
    if let Some(e) = o.epochs {
        s.epochs = e;
    }
    if let Some(n) = o.steps_per_epoch {
        s.steps_per_epoch = Some(n);
    }
    if let Some(b) = o.batch_size {
        s.batch_size = b;
    }
    if let Some(lr) = o.lr {
        s.lr = lr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"model": {"varient": "A"}}"#).unwrap_err();
        assert!(err.to_string().contains("varient"), "{err}");
        assert!(serde_json::from_str::<RunConfig>(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn flags_win_over_the_file() {
        let mut cfg: RunConfig = serde_json::from_str(
            r#"{"seed": 3, "model": {"variant": "A"}, "protocol": {"folds": 5, "cv": {"batch_size": 8, "lr": 0.1, "epochs": 4}}}"#,
        )
        .unwrap();
        cfg.apply(&Overrides::default());
        assert_eq!((cfg.protocol.seed, cfg.protocol.folds, cfg.protocol.cv.epochs), (3, 5, 4));
        cfg.apply(&Overrides {
            seed: Some(9),
            variant: Some(Variant::D),
            epochs: Some(2),
            ..Overrides::default()
        });
        assert_eq!(cfg.protocol.seed, 9);
        assert_eq!(cfg.model.variant, Variant::D);
        assert!([&cfg.protocol.cv, &cfg.protocol.stage1, &cfg.protocol.stage2].iter().all(|s| s.epochs == 2));
        assert_eq!(cfg.protocol.cv.batch_size, 8);
    }

    #[test]
    fn default_model_resolves_to_the_library_default() {
        let channels: Vec<String> = histn::graph::DREAMER_CHANNELS.iter().map(|c| c.to_string()).collect();
        let built = ModelSection::default().build(&channels, 128).unwrap();
        assert_eq!(built, ModelConfig::default());
        assert!(parse_protocol("loocv").is_ok() && parse_protocol("x").is_err());
    }
}
