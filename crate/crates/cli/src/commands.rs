use std::path::{Path, PathBuf};

use histn::data::{
    load_dataset, synth_generate, tiled_segments, window_len, Dataset, Segment, SynthSpec,
    TrialRecord, WindowPool, WindowSource,
};
use histn::files::write_atomic;
use histn::metrics::{paired_t_test, EvalReport};
use histn::model::{build_model, load_checkpoint, save_checkpoint};
use histn::training::{
    run_loocv, run_subject_dependent_cv, train, unit_rng, EvalSet, Protocol, ProtocolReport,
};
use histn::verify::{run_all, VerifyOptions};
use histn::{HistnModel, Tensor, Variant};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

const EVAL_CHUNK: usize = 256;

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
    }
    write_atomic(path, bytes).map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| CliError::Config(format!("missing {what}; pass it as a flag or in the config")))
}

fn load_normalized(path: &Path) -> Result<Dataset> {
    Ok(load_dataset(path)?.normalized()?)
}

pub fn verify(report: Option<&Path>, opts: &VerifyOptions) -> Result<()> {
    let r = run_all(opts);
    for c in &r.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{mark} {}/{}: {}", c.group, c.name, c.detail);
        if !c.passed {
            if let (Some(e), Some(a)) = (&c.expected, &c.actual) {
                println!("     expected {e}\n     actual   {a}");
            }
        }
    }
    if let Some(path) = report {
        write(path, &json(&r)?)?;
    }
    if r.passed {
        println!("all {} checks passed", r.checks.len());
        Ok(())
    } else {
        let failed: Vec<String> = r.failures().map(|c| format!("{}/{}", c.group, c.name)).collect();
        Err(CliError::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

pub fn synth(spec: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let spec: SynthSpec = match spec {
        None => SynthSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read spec {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("spec {}: {e}", p.display())))?
        }
    };
    let ds = synth_generate(&spec, seed, out)?;
    println!(
        "wrote {} subjects x {} trials to {}",
        ds.subjects().len(),
        spec.trials_per_subject,
        out.display()
    );
    Ok(())
}

/// Trains one model on every selected subject, validating on the final trunk
/// of each trial's stimulus; saves the lowest-validation-loss weights.
pub fn train_cmd(
    config: Option<&Path>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    history: Option<&Path>,
    o: &Overrides,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(o);
    let data = required(data.or(cfg.data.clone()), "--data")?;
    let out = required(out.or(cfg.out.clone()), "--out")?;
    let ds = load_normalized(&data)?;
    let (model_cfg, p) = cfg.resolve(&ds)?;

    let subjects = match &p.subjects {
        Some(list) => list.clone(),
        None => ds.subjects(),
    };
    let trials: Vec<&TrialRecord> = ds.trials.iter().filter(|t| subjects.contains(&t.subject_id)).collect();
    if trials.is_empty() {
        return Err(CliError::Config("no trials match the selected subjects".into()));
    }
    let n = window_len(ds.sample_rate_hz, p.stimulus_seconds)?;
    if let Some(t) = trials.iter().find(|t| t.signal.samples < n) {
        return Err(CliError::Config(format!(
            "trial {} of subject {} is shorter than {} s",
            t.trial_id, t.subject_id, p.stimulus_seconds
        )));
    }
    let trunk = n / p.folds;
    let len = model_cfg.input_len;
    let sources = |range: (usize, usize)| -> Result<Vec<WindowSource<'_>>> {
        trials
            .iter()
            .map(|t| {
                Ok(WindowSource {
                    trial: t,
                    label: t.label(&p.dimension)?,
                    ranges: vec![range],
                })
            })
            .collect()
    };
    let train_sources = sources((0, n - trunk))?;
    let windows = train_sources.len() * ((n - trunk) / len);
    let pool = WindowPool::new(train_sources, len)?;
    let val_pool = WindowPool::new(sources((n - trunk, n))?, len)?;

    let mut rng = unit_rng(p.seed, 0);
    let mut model = build_model(&model_cfg, &mut rng)?;
    let val = EvalSet::balanced(&val_pool, p.val_draws, &mut rng)?;
    let record = train(&mut model, &pool, Some(&val), &p.cv, windows, &mut rng)?;
    save_checkpoint(&model, &out)?;
    if let Some(h) = history {
        write(h, &json(&record)?)?;
    }
    println!(
        "trained variant {} for {} epochs; best validation loss {:.6} at epoch {}; checkpoint {}",
        model_cfg.variant,
        record.train_losses.len(),
        record.best_val_loss.unwrap_or(f64::NAN),
        record.best_epoch.map_or(-1, |e| e as i64),
        out.display()
    );
    Ok(())
}

/// Every non-overlapping model-sized window of every trial.
fn all_windows<'a>(ds: &'a Dataset, model: &HistnModel, dimension: &str) -> Result<Vec<Segment<'a>>> {
    let names = model.config().hierarchy.channel.node_names();
    if names != ds.channels.as_slice() {
        return Err(CliError::Config(format!(
            "checkpoint expects channels {names:?}, the dataset has {:?}",
            ds.channels
        )));
    }
    let mut out = Vec::new();
    for t in &ds.trials {
        let label = t.label(dimension)?;
        out.extend(tiled_segments(t, model.config().input_len, label));
    }
    if out.is_empty() {
        return Err(CliError::Config("no trial is long enough for one window".into()));
    }
    Ok(out)
}

fn batches<'s, 'a>(segments: &'s [Segment<'a>]) -> impl Iterator<Item = Result<EvalSet>> + 's {
    segments
        .chunks(EVAL_CHUNK)
        .map(|c| EvalSet::from_segments(c).map_err(CliError::from))
}

pub fn eval(ckpt: &Path, data: &Path, report: &Path, dimension: &str) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let ds = load_normalized(data)?;
    let segments = all_windows(&ds, &model, dimension)?;
    let (mut rankings, mut labels) = (Vec::new(), Vec::new());
    for set in batches(&segments) {
        let set = set?;
        let out = model.forward(&set.inputs, None)?;
        rankings.extend(model.rankings(&out));
        labels.extend(set.labels);
    }
    let r = EvalReport::from_rankings(&rankings, &labels, model.config().num_classes)?;
    write(report, &json(&r)?)?;
    println!(
        "{} windows: F1 {:.2}  Top2 {:.2}  Tri-P {:.2}  Seq2HR {:.2}",
        r.n_samples, r.f1_macro, r.top2_accuracy, r.tri_p, r.seq2hr
    );
    Ok(())
}

pub fn export_features(ckpt: &Path, data: &Path, out: &Path, dimension: &str) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let ds = load_normalized(data)?;
    let segments = all_windows(&ds, &model, dimension)?;
    let h = &model.config().hierarchy;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["subject", "trial", "window", "label"].map(String::from).to_vec();
    for level in h.levels() {
        header.extend(level.node_names().iter().cloned());
    }
    w.write_record(&header).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (chunk, set) in segments.chunks(EVAL_CHUNK).zip(batches(&segments)) {
        let feats: Tensor = model.features(&set?.inputs)?;
        let width = feats.shape()[1];
        for (seg, row) in chunk.iter().zip(feats.values().chunks(width)) {
            let mut rec = vec![
                seg.subject_id().to_string(),
                seg.trial.trial_id.to_string(),
                (seg.start / seg.len).to_string(),
                seg.label.to_string(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    write(out, &bytes)?;
    println!("wrote {} feature rows to {}", segments.len(), out.display());
    Ok(())
}

pub const CSV_HEADER: [&str; 6] = ["variant", "F1", "Top2 Acc.", "Tri-P", "Seq2HR", "Seq2HR p (D vs A)"];

fn report_name(protocol: Protocol, v: Variant) -> String {
    let tag = match protocol {
        Protocol::SubjectDependentCv => "cv",
        Protocol::LoocvTwoStage => "loocv",
    };
    format!("{tag}_{v}.json")
}

/// Comparison rows: metric means per variant and, on the D row, the paired
/// t-test of D against A on per-unit Seq2HR.
pub fn comparison_csv(reports: &[ProtocolReport]) -> Result<Vec<u8>> {
    let find = |v: Variant| reports.iter().find(|r| r.variant == v);
    let p_value = match (find(Variant::D), find(Variant::A)) {
        (Some(d), Some(a)) => {
            match paired_t_test(&d.metric_values("seq2hr"), &a.metric_values("seq2hr")) {
                Ok((_, p)) => Some(format!("{p:.6}")),
                Err(e) => {
                    eprintln!("note: no D vs A p-value: {e}");
                    None
                }
            }
        }
        _ => None,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in reports {
        let m = |k: &str| format!("{:.4}", r.aggregate[k].mean);
        let p = if r.variant == Variant::D { p_value.clone().unwrap_or_default() } else { String::new() };
        w.write_record([
            r.variant.to_string(),
            m("f1_macro"),
            m("top2_accuracy"),
            m("tri_p"),
            m("seq2hr"),
            p,
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn benchmark(
    config: Option<&Path>,
    data: Option<PathBuf>,
    variants: &[Variant],
    out: Option<PathBuf>,
    o: &Overrides,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(o);
    let data = required(data.or(cfg.data.clone()), "--data")?;
    let out = required(out.or(cfg.out.clone()), "--out")?;
    if variants.is_empty() {
        return Err(CliError::Config("no variants requested".into()));
    }
    let ds = load_normalized(&data)?;
    let mut reports = Vec::new();
    for &v in variants {
        cfg.model.variant = v;
        let (model_cfg, p) = cfg.resolve(&ds)?;
        let report = match p.protocol {
            Protocol::SubjectDependentCv => run_subject_dependent_cv(&ds, &model_cfg, &p)?,
            Protocol::LoocvTwoStage => run_loocv(&ds, &model_cfg, &p)?,
        };
        write(&out.join(report_name(p.protocol, v)), &json(&report)?)?;
        let a = &report.aggregate;
        println!(
            "variant {v}: {} units, F1 {:.2} ± {:.2}, Seq2HR {:.2} ± {:.2}",
            report.per_unit.len(),
            a["f1_macro"].mean,
            a["f1_macro"].std,
            a["seq2hr"].mean,
            a["seq2hr"].std
        );
        reports.push(report);
    }
    write(&out.join("comparison.csv"), &comparison_csv(&reports)?)?;
    Ok(())
}
