//! Label encodings and evaluation metrics.
//!
//! Scores are 1-indexed (`1..=K`) at every public boundary, matching the
//! self-report scale; internal storage is 0-indexed.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label {label} outside 1..={classes}")]
    Label { label: usize, classes: usize },
    #[error("{0}")]
    Contract(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("degenerate test: {0}")]
    Degenerate(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label == 0 || label > classes {
        return Err(MetricsError::Label { label, classes });
    }
    Ok(())
}

/// Target distribution produced by Gaussian smoothing around the true score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedLabel {
    pub probs: Vec<f64>,
}

/// `P_j ∝ exp(-(j - i)² / 2s²)` over `j = 1..=K`, normalised.
pub fn smooth_label(label: usize, classes: usize, s: f64) -> Result<SmoothedLabel> {
    check_label(label, classes)?;
    if !(s > 0.0) {
        return Err(MetricsError::Contract(format!(
            "smoothing width must be positive, got {s}"
        )));
    }
    let weights: Vec<f64> = (1..=classes)
        .map(|j| {
            let d = j as f64 - label as f64;
            (-d * d / (2.0 * s * s)).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(SmoothedLabel {
        probs: weights.into_iter().map(|w| w / z).collect(),
    })
}

pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    check_label(label, classes)?;
    let mut v = vec![0.0; classes];
    v[label - 1] = 1.0;
    Ok(v)
}

/// Rows are true scores, columns predicted scores (both 0-indexed storage).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Count for 1-indexed (truth, predicted).
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth - 1][predicted - 1]
    }

    pub fn top1_accuracy(&self) -> Result<f64> {
        let total = self.nonempty_total()?;
        let diag: u64 = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        Ok(100.0 * diag as f64 / total as f64)
    }

    fn nonempty_total(&self) -> Result<u64> {
        match self.total() {
            0 => Err(MetricsError::Undefined("confusion matrix is empty".into())),
            t => Ok(t),
        }
    }
}

fn check_lengths(rankings: &[Vec<usize>], truths: &[usize]) -> Result<()> {
    if rankings.len() != truths.len() {
        return Err(MetricsError::Contract(format!(
            "{} rankings for {} truths",
            rankings.len(),
            truths.len()
        )));
    }
    Ok(())
}

/// Tallies the top-ranked class of each sample against its truth.
pub fn confusion_matrix(
    rankings: &[Vec<usize>],
    truths: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix> {
    check_lengths(rankings, truths)?;
    let mut cm = ConfusionMatrix::zeros(classes);
    for (r, &t) in rankings.iter().zip(truths) {
        check_label(t, classes)?;
        let top = *r
            .first()
            .ok_or_else(|| MetricsError::Contract("empty ranking".into()))?;
        check_label(top, classes)?;
        cm.counts[t - 1][top - 1] += 1;
    }
    Ok(cm)
}

/// Per-class F1 in percent; `None` for classes absent from both truth and
/// prediction.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    let k = cm.classes();
    (0..k)
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let actual: u64 = cm.counts[c].iter().sum();
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            if actual == 0 && predicted == 0 {
                return None;
            }
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            Some(if precision + recall > 0.0 {
                100.0 * 2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            })
        })
        .collect()
}

/// Macro-averaged F1 over the classes that occur in truth or prediction.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty_total()?;
    let scores: Vec<f64> = per_class_f1(cm).into_iter().flatten().collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn top2_accuracy(rankings: &[Vec<usize>], truths: &[usize]) -> Result<f64> {
    check_lengths(rankings, truths)?;
    if rankings.is_empty() {
        return Err(MetricsError::Undefined("no samples".into()));
    }
    let mut hits = 0usize;
    for (r, t) in rankings.iter().zip(truths) {
        if r.len() < 2 {
            return Err(MetricsError::Contract(
                "top-2 accuracy needs at least two ranked classes".into(),
            ));
        }
        if r[..2].contains(t) {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / rankings.len() as f64)
}

/// Percentage of confusion mass on the main, sub- and super-diagonals.
pub fn tri_p(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.nonempty_total()?;
    let k = cm.classes();
    let band: u64 = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|&(i, j)| i.abs_diff(j) < 2)
        .map(|(i, j)| cm.counts[i][j])
        .sum();
    Ok(100.0 * band as f64 / total as f64)
}

/// Percentage of samples whose top-2 classes are adjacent scores and contain
/// the truth.
pub fn seq2hr(rankings: &[Vec<usize>], truths: &[usize]) -> Result<f64> {
    check_lengths(rankings, truths)?;
    if rankings.is_empty() {
        return Err(MetricsError::Undefined("no samples".into()));
    }
    let mut hits = 0usize;
    for (r, t) in rankings.iter().zip(truths) {
        if r.len() < 2 {
            return Err(MetricsError::Contract(
                "Seq2HR needs at least two ranked classes".into(),
            ));
        }
        if r[0].abs_diff(r[1]) == 1 && r[..2].contains(t) {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / rankings.len() as f64)
}

/// Two-sided paired t-test of `a - b`; returns `(t, p)`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MetricsError::Contract(format!(
            "paired t-test needs two equal-length samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = d.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    if var <= (1e-12 * scale).powi(2) {
        return Err(MetricsError::Degenerate(
            "differences have zero variance".into(),
        ));
    }
    let t = mean / (var / n).sqrt();
    let dof = n - 1.0;
    let p = statrs::function::beta::beta_reg(dof / 2.0, 0.5, dof / (dof + t * t));
    Ok((t, p))
}

/// Metric bundle for one evaluated unit (fold, subject, checkpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub f1_macro: f64,
    pub top2_accuracy: f64,
    pub tri_p: f64,
    pub seq2hr: f64,
    pub n_samples: usize,
    pub per_class_f1: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_rankings(rankings: &[Vec<usize>], truths: &[usize], classes: usize) -> Result<Self> {
        let confusion = confusion_matrix(rankings, truths, classes)?;
        Ok(Self {
            f1_macro: macro_f1(&confusion)?,
            top2_accuracy: top2_accuracy(rankings, truths)?,
            tri_p: tri_p(&confusion)?,
            seq2hr: seq2hr(rankings, truths)?,
            n_samples: truths.len(),
            per_class_f1: per_class_f1(&confusion),
            confusion,
        })
    }

    /// Metric value by its report key.
    pub fn metric(&self, key: &str) -> Option<f64> {
        match key {
            "f1_macro" => Some(self.f1_macro),
            "top2_accuracy" => Some(self.top2_accuracy),
            "tri_p" => Some(self.tri_p),
            "seq2hr" => Some(self.seq2hr),
            _ => None,
        }
    }
}

/// Report keys in table order.
pub const METRIC_KEYS: [&str; 4] = ["f1_macro", "top2_accuracy", "tri_p", "seq2hr"];

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smoothed_middle_label() {
        let p = smooth_label(3, 5, 0.5).unwrap().probs;
        let expected = [2.64e-4, 0.11, 0.79, 0.11, 2.64e-4];
        for (i, tol) in [1e-6, 5e-3, 5e-3, 5e-3, 1e-6].iter().enumerate() {
            assert!((p[i] - expected[i]).abs() <= *tol, "{p:?}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[0], p[4]);
        assert_eq!(p[1], p[3]);
    }

    #[test]
    fn smoothed_label_limits_and_edges() {
        let p = smooth_label(2, 5, 0.01).unwrap().probs;
        for (i, v) in p.iter().enumerate() {
            let target = if i == 1 { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-12);
        }
        // direct evaluation at the edge class, truncated support
        let edge = smooth_label(1, 5, 0.5).unwrap().probs;
        let w: Vec<f64> = (0..5).map(|d| (-(d as f64).powi(2) * 2.0).exp()).collect();
        let z: f64 = w.iter().sum();
        for (a, b) in edge.iter().zip(&w) {
            assert!((a - b / z).abs() < 1e-15);
        }
        assert!((edge[0] - 0.8805).abs() < 1e-4 && (edge[1] - 0.1192).abs() < 1e-4);
        assert!((edge[2] - 2.95e-4).abs() < 1e-6);
        assert!(smooth_label(6, 5, 0.5).is_err());
        assert!(smooth_label(0, 5, 0.5).is_err());
    }

    #[test]
    fn smoothed_label_peaks_at_truth() {
        for i in 1..=5 {
            let p = smooth_label(i, 5, 0.5).unwrap().probs;
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax + 1, i);
        }
    }

    #[test]
    fn one_hot_cases() {
        assert_eq!(one_hot(3, 5).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(one_hot(1, 1).unwrap(), vec![1.0]);
        assert!(one_hot(4, 3).is_err());
    }

    #[test]
    fn confusion_matrix_cases() {
        let r: Vec<Vec<usize>> = (1..=4).map(|i| vec![i, 1]).collect();
        let cm = confusion_matrix(&r, &[1, 2, 3, 4], 4).unwrap();
        for i in 1..=4 {
            for j in 1..=4 {
                assert_eq!(cm.get(i, j), u64::from(i == j));
            }
        }
        assert_eq!(confusion_matrix(&[], &[], 3).unwrap(), ConfusionMatrix::zeros(3));
        assert!(confusion_matrix(&r, &[1], 4).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let truths: Vec<usize> = (0..50).map(|_| rng.random_range(1..=5)).collect();
        let rankings: Vec<Vec<usize>> = (0..50).map(|_| vec![rng.random_range(1..=5)]).collect();
        let cm = confusion_matrix(&rankings, &truths, 5).unwrap();
        for i in 1..=5 {
            for j in 1..=5 {
                let tally = truths
                    .iter()
                    .zip(&rankings)
                    .filter(|(t, r)| **t == i && r[0] == j)
                    .count() as u64;
                assert_eq!(cm.get(i, j), tally);
            }
        }
    }

    #[test]
    fn macro_f1_cases() {
        let diag = ConfusionMatrix {
            counts: vec![vec![3, 0], vec![0, 2]],
        };
        assert_eq!(macro_f1(&diag).unwrap(), 100.0);
        let anti = ConfusionMatrix {
            counts: vec![vec![0, 3], vec![2, 0]],
        };
        assert_eq!(macro_f1(&anti).unwrap(), 0.0);
        let cm = ConfusionMatrix {
            counts: vec![vec![3, 1], vec![2, 4]],
        };
        let f1 = |p: f64, r: f64| 2.0 * p * r / (p + r);
        let expected = 100.0 * (f1(3.0 / 5.0, 3.0 / 4.0) + f1(4.0 / 5.0, 4.0 / 6.0)) / 2.0;
        assert!((macro_f1(&cm).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            macro_f1(&ConfusionMatrix::zeros(3)),
            Err(MetricsError::Undefined(_))
        ));
        // absent class is skipped
        let partial = ConfusionMatrix {
            counts: vec![vec![2, 0, 0], vec![0, 0, 0], vec![0, 0, 1]],
        };
        assert_eq!(macro_f1(&partial).unwrap(), 100.0);
        assert_eq!(per_class_f1(&partial)[1], None);
    }

    #[test]
    fn top2_cases() {
        let r = vec![vec![1, 2], vec![3, 1]];
        assert_eq!(top2_accuracy(&r, &[1, 3]).unwrap(), 100.0);
        assert_eq!(top2_accuracy(&r, &[5, 5]).unwrap(), 0.0);
        assert!(top2_accuracy(&[vec![1]], &[1]).is_err());
        let r: Vec<Vec<usize>> = vec![
            vec![1, 2],
            vec![2, 3],
            vec![3, 1],
            vec![4, 5],
            vec![5, 4],
            vec![1, 5],
            vec![2, 1],
            vec![3, 4],
            vec![4, 3],
            vec![5, 1],
        ];
        let t = [2, 1, 3, 3, 4, 2, 1, 5, 3, 4];
        // hits at 0, 2, 4, 6, 8
        assert_eq!(top2_accuracy(&r, &t).unwrap(), 50.0);
    }

    #[test]
    fn tri_p_cases() {
        let diag = ConfusionMatrix {
            counts: vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 4]],
        };
        assert_eq!(tri_p(&diag).unwrap(), 100.0);
        let far = ConfusionMatrix {
            counts: vec![vec![0, 0, 3], vec![0, 0, 0], vec![1, 0, 0]],
        };
        assert_eq!(tri_p(&far).unwrap(), 0.0);
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 1, 1], vec![0, 2, 0], vec![3, 0, 1]],
        };
        assert!((tri_p(&cm).unwrap() - 60.0).abs() < 1e-12);
        assert!(tri_p(&ConfusionMatrix::zeros(2)).is_err());
    }

    #[test]
    fn seq2hr_cases() {
        assert_eq!(seq2hr(&[vec![3, 4, 1]], &[3]).unwrap(), 100.0);
        for t in 1..=5 {
            assert_eq!(seq2hr(&[vec![1, 5, 2]], &[t]).unwrap(), 0.0);
        }
        // consecutive top-2 everywhere: seq2hr and top-2 agree
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut r = Vec::new();
        let mut t = Vec::new();
        for _ in 0..200 {
            let a: usize = rng.random_range(1..=4);
            let (x, y) = if rng.random_bool(0.5) { (a, a + 1) } else { (a + 1, a) };
            r.push(vec![x, y]);
            t.push(rng.random_range(1..=5));
        }
        assert_eq!(seq2hr(&r, &t).unwrap(), top2_accuracy(&r, &t).unwrap());
    }

    #[test]
    fn paired_t_cases() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 2.0).collect();
        assert!(matches!(paired_t_test(&a, &b), Err(MetricsError::Degenerate(_))));
        let mut jittered = a.clone();
        jittered[0] += 1e-3;
        let (_, p) = paired_t_test(&jittered, &b).unwrap();
        assert!(p < 1e-10, "{p}");

        let mut perturbed = b.clone();
        perturbed[4] += 0.7;
        let (t, _) = paired_t_test(&perturbed, &b).unwrap();
        // one nonzero difference δ: mean δ/n, sd |δ|/√n, so |t| = 1
        assert!((t.abs() - 1.0).abs() < 1e-12);

        let (t, p) = paired_t_test(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        // ν = 1: p = 1 - 2·atan(t)/π
        let cauchy = 1.0 - 2.0 * 2f64.atan() / std::f64::consts::PI;
        assert!((p - cauchy).abs() < 1e-10 && (p - 0.29517).abs() < 1e-5);
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
    }

    fn brute_force(rankings: &[Vec<usize>], truths: &[usize], k: usize) -> [f64; 4] {
        let n = truths.len() as f64;
        let mut f1s = Vec::new();
        for c in 1..=k {
            let tp = (0..truths.len()).filter(|&i| truths[i] == c && rankings[i][0] == c).count();
            let fp = (0..truths.len()).filter(|&i| truths[i] != c && rankings[i][0] == c).count();
            let fneg = (0..truths.len()).filter(|&i| truths[i] == c && rankings[i][0] != c).count();
            if tp + fp + fneg == 0 {
                continue;
            }
            f1s.push(100.0 * 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64);
        }
        let f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;
        let near = (0..truths.len())
            .filter(|&i| truths[i].abs_diff(rankings[i][0]) <= 1)
            .count() as f64;
        let top2 = (0..truths.len())
            .filter(|&i| rankings[i][0] == truths[i] || rankings[i][1] == truths[i])
            .count() as f64;
        let seq = (0..truths.len())
            .filter(|&i| {
                let (a, b) = (rankings[i][0], rankings[i][1]);
                (a + 1 == b || b + 1 == a) && (a == truths[i] || b == truths[i])
            })
            .count() as f64;
        [f1, 100.0 * top2 / n, 100.0 * near / n, 100.0 * seq / n]
    }

    fn permutation(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut v: Vec<usize> = (1..=k).collect();
        v.shuffle(rng);
        v
    }

    #[test]
    fn metrics_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..100 {
            let n = rng.random_range(1..60);
            let k = 5;
            let truths: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
            let rankings: Vec<Vec<usize>> = (0..n).map(|_| permutation(&mut rng, k)).collect();
            let report = EvalReport::from_rankings(&rankings, &truths, k).unwrap();
            let oracle = brute_force(&rankings, &truths, k);
            let got = [report.f1_macro, report.top2_accuracy, report.tri_p, report.seq2hr];
            for (g, o) in got.iter().zip(&oracle) {
                assert!((g - o).abs() < 1e-9, "{got:?} vs {oracle:?}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn metric_orderings(seed in 0u64..10_000, n in 1usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truths: Vec<usize> = (0..n).map(|_| rng.random_range(1..=5)).collect();
            let rankings: Vec<Vec<usize>> = (0..n).map(|_| permutation(&mut rng, 5)).collect();
            let r = EvalReport::from_rankings(&rankings, &truths, 5).unwrap();
            let top1 = r.confusion.top1_accuracy().unwrap();
            proptest::prop_assert!(r.tri_p >= top1);
            proptest::prop_assert!(r.seq2hr <= r.top2_accuracy);
            for v in [r.f1_macro, r.top2_accuracy, r.tri_p, r.seq2hr] {
                proptest::prop_assert!((0.0..=100.0).contains(&v));
            }
            proptest::prop_assert_eq!(r.confusion.total(), n as u64);
        }

        #[test]
        fn smooth_label_is_distribution(label in 1usize..=7, s in 0.3f64..3.0) {
            let p = smooth_label(label, 7, s).unwrap().probs;
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(p.iter().all(|v| *v > 0.0));
            for j in 1..7 {
                let towards = if j < label { p[j] >= p[j - 1] } else { p[j] <= p[j - 1] };
                proptest::prop_assert!(towards);
            }
        }
    }
}
