use histn::data::{load_dataset, synth_generate, window_len, SynthSpec, WindowPool, WindowSource};
use histn::model::{load_checkpoint, save_checkpoint};
use histn::training::{
    cv_unit, evaluate, fold_split, run_subject_dependent_cv, EvalSet, ProtocolConfig, StageConfig,
};
use histn::{ModelConfig, Variant};

fn small_spec() -> SynthSpec {
    SynthSpec {
        subjects: 2,
        trials_per_subject: 5,
        trial_seconds: 12.0,
        baseline_seconds: 2.0,
        ..SynthSpec::default()
    }
}

fn quick_protocol() -> ProtocolConfig {
    ProtocolConfig {
        folds: 3,
        stimulus_seconds: 12.0,
        test_draws: 50,
        val_draws: 25,
        cv: StageConfig {
            steps_per_epoch: Some(2),
            ..StageConfig::new(10, 0.003, 2)
        },
        ..ProtocolConfig::default()
    }
}

#[test]
fn corpus_on_disk_drives_a_reproducible_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let generated = synth_generate(&small_spec(), 5, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(generated, loaded);
    let ds = loaded.normalized().unwrap();

    let cfg = quick_protocol();
    let model = ModelConfig::default().with_variant(Variant::D);
    let a = run_subject_dependent_cv(&ds, &model, &cfg).unwrap();
    let b = run_subject_dependent_cv(&ds, &model, &cfg).unwrap();
    let (ja, jb) = (serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(ja, jb);
    assert_eq!(a.per_unit.len(), 2 * 3);
    for key in ["f1_macro", "top2_accuracy", "tri_p", "seq2hr"] {
        let s = a.aggregate[key];
        assert!(s.mean.is_finite() && s.std >= 0.0, "{key}");
    }
    let value: serde_json::Value = serde_json::from_str(&ja).unwrap();
    for key in ["protocol", "per_unit", "aggregate", "seed", "config"] {
        assert!(value.get(key).is_some(), "{key}");
    }
}

#[test]
fn saved_checkpoint_reproduces_test_metrics() {
    let ds = histn::data::synth_dataset(&small_spec(), 6).unwrap().normalized().unwrap();
    let cfg = quick_protocol();
    let model_cfg = ModelConfig::default().with_variant(Variant::C);
    let unit = cv_unit(&ds, "S01", 0, 1, &model_cfg, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fold1.json");
    save_checkpoint(&unit.model, &path).unwrap();
    let restored = load_checkpoint(&path).unwrap();

    let n = window_len(ds.sample_rate_hz, cfg.stimulus_seconds).unwrap();
    let split = fold_split(n, 3, 1).unwrap();
    let sources = ds
        .subject_trials("S01")
        .into_iter()
        .map(|t| WindowSource {
            trial: t,
            label: t.label("valence").unwrap(),
            ranges: vec![split.test],
        })
        .collect();
    let pool = WindowPool::new(sources, 128).unwrap();
    let mut rng = histn::training::unit_rng(99, 0);
    let set = EvalSet::balanced(&pool, 100, &mut rng).unwrap();
    assert_eq!(evaluate(&unit.model, &set).unwrap(), evaluate(&restored, &set).unwrap());
}
