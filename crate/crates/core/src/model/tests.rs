use super::*;
use crate::graph::{chebyshev_basis, normalized_laplacian, SquareMatrix};
use crate::tensor::{grad_check_many, matmul};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(cfg: &ModelConfig, seed: u64) -> HistnModel {
    build_model(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_input(b: usize, t: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..b * t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(&[b, t, c], v).unwrap()
}

/// `[T, C]` storage of a `C × T` matrix.
fn time_major(rows: &[&[f64]]) -> Vec<f64> {
    let t = rows[0].len();
    (0..t).flat_map(|j| rows.iter().map(move |r| r[j])).collect()
}

#[test]
fn branches_do_not_commute() {
    let x = Tensor::new(&[1, 4, 2], time_major(&[&[1.0, 3.0, -1.0, -2.0], &[-1.0, 2.0, 1.0, 0.0]]))
        .unwrap();
    let w = Tensor::new(&[2, 2], time_major(&[&[-1.0, 2.0], &[3.0, 1.0]])).unwrap();
    let a = Tensor::new(&[2, 2], vec![1.0, 0.5, 0.5, 1.0]).unwrap();
    let first = depthwise_time_conv(&pointwise_mix(&x, &a, None).unwrap(), &w, None).unwrap();
    let second = pointwise_mix(&depthwise_time_conv(&x, &w, None).unwrap(), &a, None).unwrap();
    assert_eq!(
        first.values(),
        time_major(&[&[7.5, -5.0, -3.5], &[2.0, 11.0, 0.5]]).as_slice()
    );
    assert_eq!(
        second.values(),
        time_major(&[&[4.5, -1.5, -1.5], &[1.5, 4.5, 1.5]]).as_slice()
    );
    assert_ne!(first.values(), second.values());

    // The same message-passing matrix as a Chebyshev filter on P2: I - 0.5·L̃.
    let p2 = LevelGraph::new(vec!["a".into(), "b".into()], &[(0, 1)]).unwrap();
    let basis = chebyshev_basis(&normalized_laplacian(&p2).unwrap(), 1).unwrap();
    let beta = Tensor::new(&[2], vec![1.0, -0.5]).unwrap();
    let mp = cheb_graph_conv(&x, &basis, &beta, Activation::Identity).unwrap();
    let via_cheb = depthwise_time_conv(&mp, &w, None).unwrap();
    for (a, b) in via_cheb.values().iter().zip(first.values()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn cheb_graph_conv_cases() {
    let x = random_input(1, 6, 3, 1);
    let path = LevelGraph::new(vec!["a".into(), "b".into(), "c".into()], &[(0, 1), (1, 2)]).unwrap();
    let lt = normalized_laplacian(&path).unwrap();
    let d0 = chebyshev_basis(&lt, 0).unwrap();
    let one = Tensor::new(&[1], vec![1.0]).unwrap();
    let out = cheb_graph_conv(&x, &d0, &one, Activation::Identity).unwrap();
    assert_eq!(out.values(), x.values());

    let p2 = LevelGraph::new(vec!["a".into(), "b".into()], &[(0, 1)]).unwrap();
    let b1 = chebyshev_basis(&normalized_laplacian(&p2).unwrap(), 1).unwrap();
    let x2 = random_input(1, 5, 2, 2);
    let beta = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
    let out = cheb_graph_conv(&x2, &b1, &beta, Activation::Identity).unwrap();
    for (o, pair) in out.values().chunks(2).zip(x2.values().chunks(2)) {
        assert!((o[0] + pair[1]).abs() <= 1e-12 && (o[1] + pair[0]).abs() <= 1e-12);
    }
    let wrong = Tensor::new(&[3], vec![0.0; 3]).unwrap();
    assert!(matches!(
        cheb_graph_conv(&x2, &b1, &wrong, Activation::Identity),
        Err(ModelError::Parameter(_))
    ));

    // explicit sum over a random 4-node graph, d = 2
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut edges = vec![(0, 1), (1, 2), (2, 3)];
    if rng.random_bool(0.5) {
        edges.push((0, 3));
    }
    edges.push((0, 2));
    let g = LevelGraph::new((0..4).map(|i| i.to_string()).collect(), &edges).unwrap();
    let lt = normalized_laplacian(&g).unwrap();
    let basis = chebyshev_basis(&lt, 2).unwrap();
    let betas = [0.3, -0.7, 1.1];
    let x = random_input(1, 7, 4, 4);
    let out = cheb_graph_conv(
        &x,
        &basis,
        &Tensor::new(&[3], betas.to_vec()).unwrap(),
        Activation::Identity,
    )
    .unwrap();
    let t2 = lt.matmul(&lt).axpby(2.0, &SquareMatrix::identity(4), -1.0);
    let mats = [SquareMatrix::identity(4), lt.clone(), t2];
    for t in 0..7 {
        let col = &x.values()[t * 4..(t + 1) * 4];
        for i in 0..4 {
            let mut expect = 0.0;
            for (beta, m) in betas.iter().zip(&mats) {
                for j in 0..4 {
                    expect += beta * m.get(i, j) * col[j];
                }
            }
            assert!((out.values()[t * 4 + i] - expect).abs() < 1e-10);
        }
    }
}

#[test]
fn node_fusion_cases() {
    let x = random_input(2, 5, 3, 9);
    let zero = Tensor::new(&[1], vec![0.0]).unwrap();
    let parent = node_fusion(&x, &[vec![0, 1, 2]], &zero, &zero).unwrap();
    for (p, row) in parent.values().iter().zip(x.values().chunks(3)) {
        assert!((p - row.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }

    let w = Tensor::new(&[1], vec![4.2]).unwrap();
    let b = Tensor::new(&[1], vec![-1.0]).unwrap();
    let single = node_fusion(&x, &[vec![1]], &w, &b).unwrap();
    let child: Vec<f64> = x.values().chunks(3).map(|r| r[1]).collect();
    assert_eq!(single.values(), child.as_slice());

    // time means 1 and 0 with w = ln 3 give scores (ln 3, 0)
    let two = Tensor::new(&[1, 2, 2], vec![0.5, 1.0, 1.5, -1.0]).unwrap();
    let w = Tensor::new(&[1], vec![3f64.ln()]).unwrap();
    let weights = fusion_weights(&two, &[0, 1], &w, &zero).unwrap();
    assert!((weights.values()[0] - 0.75).abs() < 1e-12);
    assert!((weights.values()[1] - 0.25).abs() < 1e-12);
    let fused = node_fusion(&two, &[vec![0, 1]], &w, &zero).unwrap();
    let expect = [0.75 * 0.5 + 0.25 * 1.0, 0.75 * 1.5 + 0.25 * -1.0];
    for (f, e) in fused.values().iter().zip(expect) {
        assert!((f - e).abs() < 1e-12);
    }
    assert!(node_fusion(&two, &[vec![]], &w, &zero).is_err());
}

#[test]
fn fusion_weights_sum_to_one() {
    let x = random_input(3, 8, 14, 5);
    let w = Tensor::new(&[1], vec![2.3]).unwrap();
    let b = Tensor::new(&[1], vec![0.4]).unwrap();
    let h = GraphHierarchy::preset(GraphPreset::G0).unwrap();
    for group in &h.fusion_map_cr {
        let wts = fusion_weights(&x, group, &w, &b).unwrap();
        for row in wts.values().chunks(group.len()) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn default_shapes() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.pooled_len().unwrap(), 62);
    let m = model(&cfg, 0);
    let x = random_input(1, 128, 14, 0);
    assert_eq!(m.feature_map(&x).unwrap().shape(), &[1, 62, 19]);
    assert_eq!(m.forward(&x, None).unwrap().shape(), &[1, 5]);
    assert!(matches!(
        m.forward(&random_input(1, 100, 14, 0), None),
        Err(ModelError::Dimension { .. })
    ));
    for v in Variant::ALL {
        let m = model(&cfg.clone().with_variant(v), 1);
        let out = m.forward(&random_input(2, 128, 14, 1), None).unwrap();
        assert_eq!(out.shape(), &[2, v.output_width(5)]);
        assert!(out.values().iter().all(|x| x.is_finite()));
        if v == Variant::C {
            for row in out.values().chunks(15) {
                let mix = decode_mixture(row);
                assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(mix.stds.iter().all(|s| *s >= crate::tensor::MIN_STD));
            }
        }
    }
}

#[test]
fn config_errors_name_the_stage() {
    let cfg = ModelConfig {
        input_len: 4,
        ..ModelConfig::default()
    };
    let err = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(err.to_string().contains("feature head"), "{err}");
    let cfg = ModelConfig {
        sep_kernel: 4,
        ..ModelConfig::default()
    };
    let err = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(err.to_string().contains("time convolution"), "{err}");
}

#[test]
fn zero_input_gives_uniform_logits() {
    let m = model(&ModelConfig::default().with_variant(Variant::A), 3);
    let out = m.forward(&Tensor::zeros(&[1, 128, 14]).unwrap(), None).unwrap();
    let probs = softmax(&out).unwrap();
    for p in probs.values() {
        assert!((p - 0.2).abs() < 1e-15);
    }
}

#[test]
fn eval_forward_is_pure() {
    let m = model(&ModelConfig::default(), 4);
    let x = random_input(3, 128, 14, 4);
    let a = m.forward(&x, None).unwrap();
    let b = m.forward(&x, None).unwrap();
    assert_eq!(a.values(), b.values());
    let rebuilt = model(&ModelConfig::default(), 4);
    assert_eq!(rebuilt.forward(&x, None).unwrap().values(), a.values());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dropped = m.forward(&x, Some(&mut rng)).unwrap();
    assert_ne!(dropped.values(), a.values());
}

#[test]
fn loss_examples() {
    let mut logits = vec![0.0; 5];
    logits[1] = 40.0;
    let out = Tensor::new(&[1, 5], logits).unwrap();
    let l = variant_loss(Variant::A, &out, &[2], 5, 0.5).unwrap().item().unwrap();
    assert!(l <= 1e-6, "{l}");

    let y = Tensor::new(&[2, 1], vec![3.0, 1.0]).unwrap();
    assert_eq!(variant_loss(Variant::B, &y, &[3, 1], 5, 0.5).unwrap().item().unwrap(), 0.0);

    let uniform = Tensor::new(&[1, 5], vec![0.7; 5]).unwrap();
    for t in 1..=5 {
        let l = variant_loss(Variant::D, &uniform, &[t], 5, 0.5).unwrap().item().unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }
    assert!(matches!(
        variant_loss(Variant::D, &uniform, &[6], 5, 0.5),
        Err(ModelError::Label(_))
    ));
}

#[test]
fn ranking_examples() {
    assert_eq!(&predict_ranking(Variant::B, &[2.3], 5)[..2], &[2, 3]);
    assert_eq!(&predict_ranking(Variant::B, &[9.0], 5)[..2], &[5, 4]);
    assert_eq!(&predict_ranking(Variant::A, &[0.1, 0.9, 0.3, 0.0, 0.0], 5)[..2], &[2, 3]);
    assert_eq!(predict_ranking(Variant::D, &[1.0; 5], 5), vec![1, 2, 3, 4, 5]);
    // π concentrated on one component with mean 4 and a small spread
    let big = 50.0;
    let mut raw = vec![big, 0.0, 0.0, 0.0, 0.0];
    raw.extend([4.0, 1.0, 2.0, 3.0, 5.0]);
    raw.extend([-3.0; 5]);
    assert_eq!(predict_ranking(Variant::C, &raw, 5)[0], 4);
}

proptest::proptest! {
    #[test]
    fn regression_ranking_top2_is_consecutive(y in -3.0f64..9.0) {
        let r = predict_ranking(Variant::B, &[y], 5);
        proptest::prop_assert_eq!(r[0].abs_diff(r[1]), 1);
        let mut sorted = r.clone();
        sorted.sort();
        proptest::prop_assert_eq!(sorted, vec![1, 2, 3, 4, 5]);
    }
}

#[test]
fn parameter_arithmetic() {
    let count = |v| model(&ModelConfig::default().with_variant(v), 0).count_parameters(false);
    let (a, b, c, d) = (count(Variant::A), count(Variant::B), count(Variant::C), count(Variant::D));
    assert_eq!(a, d);
    assert_eq!(d - b, 80);
    assert_eq!(c - d, 200);
    assert!((900..=1600).contains(&d), "{d}");

    // independent tally from the layer arithmetic
    let (s, k1, c_, k2) = (4, 5, 14, 5);
    let head = s * (k1 * c_ + c_) + s;
    let block = |n: usize, deg: usize| 2 * (deg + 1 + k2 * n + n + n * n + n);
    let core = block(14, 3) + block(4, 2) + block(1, 0) + 4;
    assert_eq!(d, head + core + 19 * 5 + 5);

    let mut m = model(&ModelConfig::default(), 0);
    m.set_frozen(&[ParamGroup::Head]).unwrap();
    assert_eq!(m.count_parameters(true), d - head);
    assert_eq!(m.count_parameters(false), d);
}

#[test]
fn frozen_groups_get_no_gradient() {
    let cfg = ModelConfig::toy(Variant::D);
    let mut m = model(&cfg, 2);
    m.set_frozen(&[ParamGroup::Head]).unwrap();
    let out = m.forward(&random_input(2, 16, 4, 2), None).unwrap();
    m.loss(&out, &[1, 4]).unwrap().backward().unwrap();
    for name in m.param_names() {
        let grad = m.param(name).unwrap().grad();
        if m.param_group(name) == Some(ParamGroup::Head) {
            assert!(grad.is_none(), "{name}");
        } else {
            assert!(grad.is_some(), "{name}");
        }
    }
    assert!(m.trainable().all(|(n, _)| !n.starts_with("head.")));
    assert!("bogus".parse::<ParamGroup>().is_err());
}

fn end_to_end_error(variant: Variant, seed: u64) -> f64 {
    let cfg = ModelConfig::toy(variant);
    let base = model(&cfg, seed);
    let x = random_input(2, 16, 4, seed + 100);
    let targets = [1 + (seed as usize % 5), 5 - (seed as usize % 3)];
    let names: Vec<String> = base.param_names().map(String::from).collect();
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = names
        .iter()
        .map(|n| {
            let t = base.param(n).unwrap();
            (t.shape().to_vec(), t.values().to_vec())
        })
        .collect();
    grad_check_many(
        |ts| {
            let mut m = base.clone();
            for (name, t) in names.iter().zip(ts) {
                m.params.get_mut(name).unwrap().tensor = t.clone();
            }
            let out = m.forward(&x, None).map_err(|e| TensorError::Contract(e.to_string()))?;
            m.loss(&out, &targets)
                .map_err(|e| TensorError::Contract(e.to_string()))
        },
        &inputs,
        1e-6,
    )
    .unwrap()
}

#[test]
fn end_to_end_gradients() {
    for variant in [Variant::A, Variant::C, Variant::D] {
        for seed in 0..3 {
            let err = end_to_end_error(variant, seed);
            assert!(err <= 1e-3, "variant {variant} seed {seed}: {err}");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    for v in Variant::ALL {
        let m = model(&ModelConfig::default().with_variant(v), 11);
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let x = random_input(2, 128, 14, 12);
        assert_eq!(
            m.forward(&x, None).unwrap().values(),
            back.forward(&x, None).unwrap().values()
        );
        for name in m.param_names() {
            let (a, b) = (m.param(name).unwrap(), back.param(name).unwrap());
            let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn checkpoint_rejections() {
    let m = model(&ModelConfig::default(), 13);
    let json = m.to_checkpoint_json().unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&json).unwrap();

    // stored checksum matches an independent recomputation
    let params = serde_json::to_vec(&doc["params"]).unwrap();
    assert_eq!(doc["checksum"].as_u64().unwrap(), u64::from(crc32fast::hash(&params)));

    let mut tampered = doc.clone();
    tampered["params"]["head.squeeze"]["values"][0] = serde_json::json!(0.5);
    let err = HistnModel::from_checkpoint_json(&tampered.to_string()).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");

    let mut versioned = doc.clone();
    versioned["format_version"] = serde_json::json!(2);
    let err = HistnModel::from_checkpoint_json(&versioned.to_string()).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");

    doc["config"]["num_classes"] = serde_json::json!(3);
    let err = HistnModel::from_checkpoint_json(&doc.to_string()).unwrap_err();
    assert!(err.to_string().contains("classifier"), "{err}");

    let other = ModelConfig {
        num_classes: 3,
        ..ModelConfig::default()
    };
    assert!(m.check_compatible(&other).is_err());
    assert!(m.check_compatible(&ModelConfig::default()).is_ok());
    assert!(HistnModel::from_checkpoint_json("{").is_err());
}

#[test]
fn matmul_agrees_with_pointwise_mix() {
    let x = random_input(1, 3, 4, 20);
    let w = random_input(1, 4, 2, 21);
    let w = reshape(&w, &[4, 2]).unwrap();
    let flat = reshape(&x, &[3, 4]).unwrap();
    assert_eq!(
        matmul(&flat, &w).unwrap().values(),
        pointwise_mix(&x, &w, None).unwrap().values()
    );
}
