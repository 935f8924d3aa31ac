//! Self-contained numerical checks: the message-passing/convolution golden
//! case, the smoothed-label vector, gradient sweeps, and oracle comparisons
//! for the Chebyshev basis and the metrics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::graph::{chebyshev_basis, normalized_laplacian, LevelGraph, SquareMatrix};
use crate::metrics::{
    confusion_matrix, macro_f1, seq2hr, smooth_label, top2_accuracy, tri_p,
};
use crate::model::{build_model, ModelConfig, Variant};
use crate::tensor::{
    self, activation, affine_scalar, avg_pool_time, channel_weighted_sum, concat_last,
    depthwise_time_conv, gmm_nll, grad_check, grad_check_many, matmul, mean_absolute_error,
    mul_const, pad_time, pointwise_mix, select_last, soft_cross_entropy, softmax, sum, transpose,
    weighted_sum, Activation, Tensor, TensorError,
};

/// Signature of the temporal convolution under test.
pub type ConvFn = fn(&Tensor, &Tensor, Option<&Tensor>) -> tensor::Result<Tensor>;

pub const GOLDEN_TOL: f64 = 1e-12;
pub const OP_GRAD_TOL: f64 = 1e-4;
pub const MODEL_GRAD_TOL: f64 = 1e-3;
pub const CHEB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub group: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<Value>,
}

impl CheckResult {
    fn new(group: &str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            group: group.into(),
            name: name.into(),
            passed,
            detail: detail.into(),
            expected: None,
            actual: None,
        }
    }

    fn values(mut self, expected: Value, actual: Value) -> Self {
        self.expected = Some(expected);
        self.actual = Some(actual);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub groups: Vec<String>,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn from_checks(checks: Vec<CheckResult>) -> Self {
        let mut groups: Vec<String> = Vec::new();
        for c in &checks {
            if !groups.contains(&c.group) {
                groups.push(c.group.clone());
            }
        }
        Self {
            passed: checks.iter().all(|c| c.passed),
            groups,
            checks,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub grad_seeds: u64,
    pub cheb_graphs: usize,
    pub metric_sets: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            grad_seeds: 10,
            cheb_graphs: 20,
            metric_sets: 100,
            seed: 0,
        }
    }
}

pub fn run_all(opts: &VerifyOptions) -> VerifyReport {
    run_with(depthwise_time_conv, opts)
}

/// Runs every group with `conv` standing in for the temporal convolution.
pub fn run_with(conv: ConvFn, opts: &VerifyOptions) -> VerifyReport {
    let mut checks = golden_checks(conv);
    checks.extend(smoothing_checks());
    checks.extend(gradient_checks(opts.grad_seeds));
    checks.extend(chebyshev_checks(opts.cheb_graphs, opts.seed));
    checks.extend(metric_checks(opts.metric_sets, opts.seed));
    VerifyReport::from_checks(checks)
}

/// `[T, C]` storage of a `C × T` matrix.
fn time_major(rows: &[Vec<f64>]) -> Vec<f64> {
    let t = rows[0].len();
    (0..t).flat_map(|j| rows.iter().map(move |r| r[j])).collect()
}

fn node_major(x: &Tensor) -> Vec<Vec<f64>> {
    let s = x.shape();
    let (t, c) = (s[s.len() - 2], s[s.len() - 1]);
    (0..c)
        .map(|ch| (0..t).map(|i| x.values()[i * c + ch]).collect())
        .collect()
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return f64::INFINITY;
    }
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Message passing `A` and the node-wise temporal correlation with `W` applied
/// in both orders to the 2-node, 4-step signal `X`.
pub fn golden_checks(conv: ConvFn) -> Vec<CheckResult> {
    const G: &str = "golden";
    let x_rows = vec![vec![1.0, 3.0, -1.0, -2.0], vec![-1.0, 2.0, 1.0, 0.0]];
    let w_rows = vec![vec![-1.0, 2.0], vec![3.0, 1.0]];
    let want_first = vec![vec![7.5, -5.0, -3.5], vec![2.0, 11.0, 0.5]];
    let want_second = vec![vec![4.5, -1.5, -1.5], vec![1.5, 4.5, 1.5]];
    let run = || -> tensor::Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let x = Tensor::new(&[4, 2], time_major(&x_rows))?;
        let w = Tensor::new(&[2, 2], time_major(&w_rows))?;
        let a = Tensor::new(&[2, 2], vec![1.0, 0.5, 0.5, 1.0])?;
        let first = conv(&pointwise_mix(&x, &a, None)?, &w, None)?;
        let second = pointwise_mix(&conv(&x, &w, None)?, &a, None)?;
        Ok((node_major(&first), node_major(&second)))
    };
    let (first, second) = match run() {
        Ok(r) => r,
        Err(e) => return vec![CheckResult::new(G, "evaluation", false, e.to_string())],
    };
    let mut out = Vec::new();
    for (name, want, got) in [
        ("message_then_conv", &want_first, &first),
        ("conv_then_message", &want_second, &second),
    ] {
        let d = max_diff(want, got);
        out.push(
            CheckResult::new(G, name, d <= GOLDEN_TOL, format!("max abs error {d:.3e}"))
                .values(json!(want), json!(got)),
        );
    }
    let gap = max_diff(&first, &second);
    out.push(CheckResult::new(
        G,
        "orders_differ",
        gap > GOLDEN_TOL,
        format!("max difference between orders {gap:.3e}"),
    ));
    out
}

/// Smoothed label of the middle score with `K = 5`, `s = 0.5`.
pub fn smoothing_checks() -> Vec<CheckResult> {
    const G: &str = "label_smoothing";
    let printed = [2.64e-4, 0.11, 0.79, 0.11, 2.64e-4];
    let tol = [1e-6, 5e-3, 5e-3, 5e-3, 1e-6];
    match smooth_label(3, 5, 0.5) {
        Err(e) => vec![CheckResult::new(G, "middle_class", false, e.to_string())],
        Ok(l) => {
            let p = l.probs;
            let within = p.iter().zip(&printed).zip(&tol).all(|((a, b), t)| (a - b).abs() <= *t);
            let total: f64 = p.iter().sum();
            let symmetric = (p[0] - p[4]).abs() < 1e-15 && (p[1] - p[3]).abs() < 1e-15;
            vec![
                CheckResult::new(G, "middle_class", within, "printed precision per entry")
                    .values(json!(printed), json!(p)),
                CheckResult::new(
                    G,
                    "distribution",
                    (total - 1.0).abs() <= 1e-12 && symmetric,
                    format!("sum {total:.15}, symmetric {symmetric}"),
                ),
            ]
        }
    }
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

type GradCase = (&'static str, tensor::Result<f64>);

fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = random(&mut rng, 64);
    let dot = |y: &Tensor| sum(&mul_const(y, &width[..y.len()])?);
    let mut r = |n: usize| random(&mut rng, n);
    let eps = 1e-5;
    let positive: Vec<f64> = r(6).iter().map(|v| v * 0.3 + 0.5).collect();
    let probs = [0.1, 0.2, 0.7, 0.5, 0.25, 0.25];
    vec![
        ("matmul", grad_check_many(|xs| dot(&matmul(&xs[0], &xs[1])?), &[(vec![3, 4], r(12)), (vec![4, 2], r(8))], eps)),
        (
            "pointwise_mix",
            grad_check_many(
                |xs| dot(&pointwise_mix(&xs[0], &xs[1], Some(&xs[2]))?),
                &[(vec![2, 3, 3], r(18)), (vec![3, 2], r(6)), (vec![2], r(2))],
                eps,
            ),
        ),
        (
            "depthwise_time_conv",
            grad_check_many(
                |xs| dot(&depthwise_time_conv(&xs[0], &xs[1], Some(&xs[2]))?),
                &[(vec![2, 6, 2], r(24)), (vec![3, 2], r(6)), (vec![2], r(2))],
                eps,
            ),
        ),
        ("pad_time", grad_check(|x| dot(&pad_time(x, 2, 1)?), &[4, 2], &r(8), eps)),
        ("avg_pool_time", grad_check(|x| dot(&avg_pool_time(x, 2)?), &[5, 3], &r(15), eps)),
        ("softmax", grad_check(|x| dot(&softmax(x)?), &[3, 4], &r(12), eps)),
        ("elu", grad_check(|x| dot(&activation(x, Activation::Elu)?), &[12], &r(12), eps)),
        ("relu", grad_check(|x| dot(&activation(x, Activation::Relu)?), &[12], &positive.repeat(2), eps)),
        (
            "weighted_sum",
            grad_check_many(
                |xs| dot(&weighted_sum(&xs[0], &xs[1..])?),
                &[(vec![2], r(2)), (vec![3, 2], r(6)), (vec![3, 2], r(6))],
                eps,
            ),
        ),
        (
            "select_concat",
            grad_check(
                |x| dot(&concat_last(&[select_last(x, &[2, 0, 2])?, select_last(x, &[1])?])?),
                &[2, 3],
                &r(6),
                eps,
            ),
        ),
        (
            "channel_weighted_sum",
            grad_check_many(
                |xs| dot(&channel_weighted_sum(&xs[0], &xs[1])?),
                &[(vec![2, 4, 3], r(24)), (vec![2, 1, 3], r(6))],
                eps,
            ),
        ),
        (
            "affine_scalar",
            grad_check_many(
                |xs| dot(&affine_scalar(&xs[0], &xs[1], &xs[2])?),
                &[(vec![5], r(5)), (vec![1], r(1)), (vec![1], r(1))],
                eps,
            ),
        ),
        ("transpose", grad_check(|x| dot(&transpose(x)?), &[2, 3], &r(6), eps)),
        ("soft_cross_entropy", grad_check(|x| soft_cross_entropy(x, &probs), &[2, 3], &r(6), eps)),
        (
            "mean_absolute_error",
            grad_check(|x| mean_absolute_error(x, &[3.0, -2.0, 4.0]), &[3, 1], &r(3), eps),
        ),
        ("gmm_nll", grad_check(|x| gmm_nll(x, &[2.0, 4.0]), &[2, 15], &r(30), eps)),
    ]
}

/// Largest relative gradient error of the loss over every parameter of a
/// toy model with random weights and inputs.
pub fn model_grad_error(variant: Variant, seed: u64) -> Result<f64, String> {
    let cfg = ModelConfig::toy(variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = build_model(&cfg, &mut rng).map_err(|e| e.to_string())?;
    let x = Tensor::new(&[2, 16, 4], random(&mut rng, 2 * 16 * 4)).map_err(|e| e.to_string())?;
    let targets = [rng.random_range(1..=5), rng.random_range(1..=5)];
    let names: Vec<String> = base.param_names().map(String::from).collect();
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = names
        .iter()
        .map(|n| {
            let t = base.param(n).expect("listed parameter");
            (t.shape().to_vec(), t.values().to_vec())
        })
        .collect();
    let wrap = |e: crate::model::ModelError| TensorError::Contract(e.to_string());
    grad_check_many(
        |ts| {
            let mut m = base.clone();
            for (name, t) in names.iter().zip(ts) {
                m.replace_param(name, t.clone()).map_err(wrap)?;
            }
            let out = m.forward(&x, None).map_err(wrap)?;
            m.loss(&out, &targets).map_err(wrap)
        },
        &inputs,
        1e-6,
    )
    .map_err(|e| e.to_string())
}

/// Every differentiable operation and the toy model of each variant over
/// `seeds` seeds; one result per operation or variant, reporting the worst
/// seed.
pub fn gradient_checks(seeds: u64) -> Vec<CheckResult> {
    const G: &str = "gradients";
    let mut worst: Vec<(String, f64, Option<String>)> = Vec::new();
    let mut record = |name: String, r: Result<f64, String>, seed: u64| {
        let entry = match worst.iter().position(|(n, _, _)| *n == name) {
            Some(i) => &mut worst[i],
            None => {
                worst.push((name, 0.0, None));
                worst.last_mut().expect("just pushed")
            }
        };
        match r {
            Ok(e) => entry.1 = entry.1.max(e),
            Err(msg) => entry.2 = Some(format!("seed {seed}: {msg}")),
        }
    };
    for seed in 0..seeds {
        for (name, r) in op_cases(seed) {
            record(name.to_string(), r.map_err(|e| e.to_string()), seed);
        }
        for v in Variant::ALL {
            record(format!("model_{v}"), model_grad_error(v, seed), seed);
        }
    }
    worst
        .into_iter()
        .map(|(name, err, failure)| {
            let tol = if name.starts_with("model_") { MODEL_GRAD_TOL } else { OP_GRAD_TOL };
            match failure {
                Some(msg) => CheckResult::new(G, name, false, msg),
                None => CheckResult::new(
                    G,
                    name,
                    err <= tol,
                    format!("max relative error {err:.3e} over {seeds} seeds (tolerance {tol:.0e})"),
                ),
            }
        })
        .collect()
}

/// Monomial coefficients of `T_0 … T_d`.
pub fn chebyshev_coefficients(d: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![1.0], vec![0.0, 1.0]];
    for k in 2..=d {
        let mut next = vec![0.0; k + 1];
        for (j, &v) in c[k - 1].iter().enumerate() {
            next[j + 1] += 2.0 * v;
        }
        for (j, &v) in c[k - 2].iter().enumerate() {
            next[j] -= v;
        }
        c.push(next);
    }
    c.truncate(d + 1);
    c
}

/// `Σ c_j M^j` by explicit powers.
fn polynomial(m: &SquareMatrix, coeffs: &[f64]) -> SquareMatrix {
    let mut power = SquareMatrix::identity(m.n);
    let mut acc = SquareMatrix::zeros(m.n);
    for &c in coeffs {
        acc = acc.axpby(1.0, &power, c);
        power = power.matmul(m);
    }
    acc
}

pub fn random_graph(rng: &mut impl Rng, n: usize) -> LevelGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.4) {
                edges.push((a, b));
            }
        }
    }
    LevelGraph::new((0..n).map(|i| format!("n{i}")).collect(), &edges).expect("valid edges")
}

/// Recurrence-built basis against the monomial expansion on random graphs
/// with at most 8 nodes and degree at most 5.
pub fn chebyshev_checks(graphs: usize, seed: u64) -> Vec<CheckResult> {
    const G: &str = "chebyshev";
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC4EB);
    let mut worst = 0.0_f64;
    let mut failure = None;
    for i in 0..graphs {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(0..=5);
        let g = random_graph(&mut rng, n);
        let r = normalized_laplacian(&g).and_then(|lt| Ok((chebyshev_basis(&lt, d)?, lt)));
        match r {
            Err(e) => {
                failure = Some(format!("graph {i}: {e}"));
                break;
            }
            Ok((basis, lt)) => {
                for (k, c) in chebyshev_coefficients(d).iter().enumerate() {
                    worst = worst.max(basis.matrices[k].max_abs_diff(&polynomial(&lt, c)));
                }
            }
        }
    }
    vec![match failure {
        Some(msg) => CheckResult::new(G, "coefficient_expansion", false, msg),
        None => CheckResult::new(
            G,
            "coefficient_expansion",
            worst <= CHEB_TOL,
            format!("max abs error {worst:.3e} over {graphs} graphs"),
        ),
    }]
}

/// Sample-by-sample reference implementations.
pub mod reference {
    pub fn confusion(preds: &[usize], truths: &[usize], k: usize) -> Vec<Vec<u64>> {
        (1..=k)
            .map(|i| {
                (1..=k)
                    .map(|j| preds.iter().zip(truths).filter(|&(&p, &t)| t == i && p == j).count() as u64)
                    .collect()
            })
            .collect()
    }

    pub fn macro_f1(preds: &[usize], truths: &[usize], k: usize) -> f64 {
        let mut scores = Vec::new();
        for c in 1..=k {
            let pairs = preds.iter().zip(truths);
            let tp = pairs.clone().filter(|&(&p, &t)| p == c && t == c).count() as f64;
            let fp = pairs.clone().filter(|&(&p, &t)| p == c && t != c).count() as f64;
            let fneg = pairs.filter(|&(&p, &t)| p != c && t == c).count() as f64;
            if tp + fp + fneg > 0.0 {
                scores.push(100.0 * 2.0 * tp / (2.0 * tp + fp + fneg));
            }
        }
        scores.iter().sum::<f64>() / scores.len() as f64
    }

    pub fn top2(rankings: &[Vec<usize>], truths: &[usize]) -> f64 {
        let hits = rankings.iter().zip(truths).filter(|(r, t)| r[0] == **t || r[1] == **t).count();
        100.0 * hits as f64 / truths.len() as f64
    }

    pub fn tri_p(preds: &[usize], truths: &[usize]) -> f64 {
        let hits = preds.iter().zip(truths).filter(|(p, t)| p.abs_diff(**t) <= 1).count();
        100.0 * hits as f64 / truths.len() as f64
    }

    pub fn top1(preds: &[usize], truths: &[usize]) -> f64 {
        let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
        100.0 * hits as f64 / truths.len() as f64
    }

    pub fn seq2hr(rankings: &[Vec<usize>], truths: &[usize]) -> f64 {
        let hits = rankings
            .iter()
            .zip(truths)
            .filter(|(r, t)| (r[0] + 1 == r[1] || r[1] + 1 == r[0]) && (r[0] == **t || r[1] == **t))
            .count();
        100.0 * hits as f64 / truths.len() as f64
    }
}

/// Random rankings over `K ∈ 2..=5` classes with random truths.
pub fn random_prediction_set(rng: &mut impl Rng) -> (usize, Vec<Vec<usize>>, Vec<usize>) {
    let k = rng.random_range(2..=5);
    let n = rng.random_range(1..=60);
    let rankings = (0..n)
        .map(|_| {
            let mut r: Vec<usize> = (1..=k).collect();
            r.shuffle(rng);
            r
        })
        .collect();
    let truths = (0..n).map(|_| rng.random_range(1..=k)).collect();
    (k, rankings, truths)
}

/// Library metrics against [`reference`] on random prediction sets, plus the
/// structural inequalities between them.
pub fn metric_checks(sets: usize, seed: u64) -> Vec<CheckResult> {
    const G: &str = "metrics";
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3E7C);
    let names = ["confusion_matrix", "macro_f1", "top2_accuracy", "tri_p", "seq2hr", "inequalities"];
    let mut failures: Vec<Option<String>> = vec![None; names.len()];
    for i in 0..sets {
        let (k, rankings, truths) = random_prediction_set(&mut rng);
        let preds: Vec<usize> = rankings.iter().map(|r| r[0]).collect();
        let cm = match confusion_matrix(&rankings, &truths, k) {
            Ok(cm) => cm,
            Err(e) => {
                failures[0].get_or_insert(format!("set {i}: {e}"));
                continue;
            }
        };
        let f1_ref = reference::macro_f1(&preds, &truths, k);
        let results = [
            cm.counts == reference::confusion(&preds, &truths, k),
            macro_f1(&cm).is_ok_and(|v| (v - f1_ref).abs() <= 1e-12 * f1_ref.max(1.0)),
            top2_accuracy(&rankings, &truths).is_ok_and(|v| v == reference::top2(&rankings, &truths)),
            tri_p(&cm).is_ok_and(|v| v == reference::tri_p(&preds, &truths)),
            seq2hr(&rankings, &truths).is_ok_and(|v| v == reference::seq2hr(&rankings, &truths)),
            reference::seq2hr(&rankings, &truths) <= reference::top2(&rankings, &truths)
                && reference::tri_p(&preds, &truths) >= reference::top1(&preds, &truths)
                && seq2hr(&rankings, &truths).unwrap_or(f64::NAN)
                    <= top2_accuracy(&rankings, &truths).unwrap_or(f64::NAN)
                && tri_p(&cm).unwrap_or(f64::NAN) >= cm.top1_accuracy().unwrap_or(f64::NAN),
        ];
        for (j, ok) in results.iter().enumerate() {
            if !ok {
                failures[j].get_or_insert(format!("set {i} (K = {k}, n = {})", truths.len()));
            }
        }
    }
    names
        .iter()
        .zip(failures)
        .map(|(name, f)| match f {
            Some(msg) => CheckResult::new(G, *name, false, format!("mismatch on {msg}")),
            None => CheckResult::new(G, *name, true, format!("{sets} random sets")),
        })
        .collect()
}
