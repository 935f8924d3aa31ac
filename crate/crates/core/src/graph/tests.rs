use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("n{i}")).collect()
}

fn cycle(n: usize) -> LevelGraph {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    LevelGraph::new(names(n), &edges).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> LevelGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.4) {
                edges.push((a, b));
            }
        }
    }
    LevelGraph::new(names(n), &edges).unwrap()
}

/// Cyclic Jacobi rotations; test-only dense eigensolver.
fn jacobi_eigen(m: &SquareMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.n;
    let mut a: Vec<Vec<f64>> = m.data.chunks(n).map(|r| r.to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Monomial coefficients of T_0..T_d.
fn chebyshev_coefficients(d: usize) -> Vec<Vec<f64>> {
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

#[test]
fn g0_preset_structure() {
    let h = GraphHierarchy::preset(GraphPreset::G0).unwrap();
    assert_eq!(h.num_channels(), 14);
    assert_eq!(connected_components(&h.channel).len(), 4);
    assert_eq!(h.region.node_names(), &["FL", "FR", "PL", "PR"]);
    assert_eq!(h.region.edge_count(), 4);
    assert!((0..4).all(|r| h.region.degree(r) == 2));
    assert_eq!(graph_diameter(&h.region).unwrap(), 2);
    assert_eq!(h.channel.cheb_degree(), 3);
    assert_eq!(h.global.cheb_degree(), 0);
    assert_eq!(h.feature_width(), 19);

    let fl: Vec<&str> = h.fusion_map_cr[0]
        .iter()
        .map(|&i| h.channel.node_names()[i].as_str())
        .collect();
    assert_eq!(fl, vec!["AF3", "F3", "F7", "FC5"]);
    // components coincide with the region map
    let mut comps = connected_components(&h.channel);
    let mut regions: Vec<Vec<usize>> = h
        .fusion_map_cr
        .iter()
        .map(|m| {
            let mut m = m.clone();
            m.sort_unstable();
            m
        })
        .collect();
    comps.sort();
    regions.sort();
    assert_eq!(comps, regions);
}

#[test]
fn other_presets_have_region_cycles() {
    for (preset, n) in [(GraphPreset::G1, 5), (GraphPreset::G2, 3)] {
        let h = GraphHierarchy::preset(preset).unwrap();
        assert_eq!(h.num_regions(), n);
        assert_eq!(connected_components(&h.channel).len(), n);
        assert_eq!(h.region.edge_count(), n);
        assert!((0..n).all(|r| h.region.degree(r) == 2));
    }
}

#[test]
fn single_region_custom_spec() {
    let spec = CustomGraphSpec {
        regions: [(
            "all".to_string(),
            DREAMER_CHANNELS.iter().map(|s| s.to_string()).collect(),
        )]
        .into_iter()
        .collect(),
        region_edges: vec![],
        channel_edges: None,
    };
    let chans: Vec<String> = DREAMER_CHANNELS.iter().map(|s| s.to_string()).collect();
    let h = GraphHierarchy::from_spec(&spec, &chans).unwrap();
    assert_eq!(connected_components(&h.channel).len(), 1);
    assert_eq!(h.region.len(), 1);
}

#[test]
fn non_partition_spec_lists_offenders() {
    let mut spec = GraphPreset::G0.spec();
    spec.regions.get_mut("FL").unwrap().pop(); // drop FC5
    spec.regions.get_mut("FR").unwrap().push("T7".into());
    let chans: Vec<String> = DREAMER_CHANNELS.iter().map(|s| s.to_string()).collect();
    let err = GraphHierarchy::from_spec(&spec, &chans).unwrap_err().to_string();
    assert!(err.contains("FC5") && err.contains("T7"), "{err}");
}

#[test]
fn custom_spec_json_round_trip() {
    let json = r#"{"regions": {"A": ["c0", "c1"], "B": ["c2", "c3"]}, "region_edges": [["A", "B"]]}"#;
    let spec: CustomGraphSpec = serde_json::from_str(json).unwrap();
    let chans: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
    let h = GraphHierarchy::from_spec(&spec, &chans).unwrap();
    assert_eq!(h.region.node_names(), &["A", "B"]);
    assert_eq!(h.fusion_map_cr, vec![vec![0, 1], vec![2, 3]]);
    assert!(serde_json::from_str::<CustomGraphSpec>(r#"{"regions": {}, "region_edges": [], "x": 1}"#).is_err());
}

#[test]
fn cross_region_channel_edge_rejected() {
    let mut spec = GraphPreset::G0.spec();
    spec.channel_edges = Some(vec![["AF3".into(), "AF4".into()]]);
    let chans: Vec<String> = DREAMER_CHANNELS.iter().map(|s| s.to_string()).collect();
    assert!(GraphHierarchy::from_spec(&spec, &chans).is_err());
}

#[test]
fn diameters() {
    assert_eq!(graph_diameter(&cycle(4)).unwrap(), 2);
    let path = LevelGraph::new(names(4), &[(0, 1), (1, 2), (2, 3)]).unwrap();
    assert_eq!(graph_diameter(&path).unwrap(), 3);
    let two_edges = LevelGraph::new(names(4), &[(0, 1), (2, 3)]).unwrap();
    // per-component BFS: each component is a single edge
    let per_component = connected_components(&two_edges)
        .iter()
        .map(|c| graph_diameter(&two_edges.induced(c).unwrap()).unwrap())
        .max()
        .unwrap();
    assert_eq!(per_component, 1);
    assert_eq!(graph_diameter(&two_edges).unwrap(), 1);
    assert!(LevelGraph::new(vec![], &[]).is_err());
}

#[test]
fn components() {
    let n = 5;
    let mut all = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            all.push((a, b));
        }
    }
    assert_eq!(connected_components(&LevelGraph::new(names(n), &all).unwrap()).len(), 1);
    let empty = LevelGraph::new(names(n), &[]).unwrap();
    assert_eq!(
        connected_components(&empty),
        (0..n).map(|i| vec![i]).collect::<Vec<_>>()
    );
}

/// Characteristic polynomial via Faddeev-LeVerrier, largest root by Newton.
fn char_poly_max_root(m: &SquareMatrix) -> f64 {
    let n = m.n;
    let mut coeffs = vec![1.0]; // c_n = 1, descending
    let mut mk = SquareMatrix::zeros(n);
    for k in 1..=n {
        let prev = *coeffs.last().unwrap();
        mk = m.matmul(&mk).axpby(1.0, &SquareMatrix::identity(n), prev);
        let am = m.matmul(&mk);
        let tr: f64 = (0..n).map(|i| am.get(i, i)).sum();
        coeffs.push(-tr / k as f64);
    }
    // Newton from above the Cauchy bound decreases monotonically onto the
    // largest root when all roots are real, multiplicities included.
    let deriv: Vec<f64> = coeffs[..n]
        .iter()
        .enumerate()
        .map(|(i, c)| c * (n - i) as f64)
        .collect();
    let horner = |cs: &[f64], x: f64| cs.iter().fold(0.0, |acc, c| acc * x + c);
    let mut x = 1.0 + coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
    for _ in 0..500 {
        let d = horner(&deriv, x);
        if d == 0.0 {
            break;
        }
        x -= horner(&coeffs, x) / d;
    }
    x
}

#[test]
fn max_eigenvalue_cases() {
    let p2 = LevelGraph::new(names(2), &[(0, 1)]).unwrap();
    assert!((max_eigenvalue(&laplacian(&p2)).unwrap() - 2.0).abs() < 1e-9);
    let k3 = LevelGraph::new(names(3), &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let l = laplacian(&k3);
    let oracle = char_poly_max_root(&l);
    assert!((oracle - 3.0).abs() < 1e-6);
    assert!((max_eigenvalue(&l).unwrap() - oracle).abs() < 1e-6);
    assert_eq!(max_eigenvalue(&SquareMatrix::zeros(3)).unwrap(), 0.0);
}

#[test]
fn max_eigenvalue_bounded_by_twice_max_degree() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let n = rng.random_range(2..9);
        let g = random_graph(&mut rng, n);
        let lam = max_eigenvalue(&laplacian(&g)).unwrap();
        let dmax = (0..n).map(|i| g.degree(i)).max().unwrap() as f64;
        assert!(lam >= -1e-12 && lam <= 2.0 * dmax + 1e-9);
        let (eig, _) = jacobi_eigen(&laplacian(&g));
        let top = eig.iter().copied().fold(f64::MIN, f64::max);
        assert!((lam - top).abs() < 1e-7, "{lam} vs {top}");
    }
}

#[test]
fn normalized_laplacian_cases() {
    let p2 = LevelGraph::new(names(2), &[(0, 1)]).unwrap();
    let lt = normalized_laplacian(&p2).unwrap();
    assert!(lt.max_abs_diff(&SquareMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]])) < 1e-9);

    let empty = LevelGraph::new(names(3), &[]).unwrap();
    let minus_eye = SquareMatrix::identity(3).axpby(-1.0, &SquareMatrix::zeros(3), 0.0);
    assert_eq!(normalized_laplacian(&empty).unwrap(), minus_eye);

    // 4-cycle against an explicit eigendecomposition
    let c4 = cycle(4);
    let l = laplacian(&c4);
    let (eig, vecs) = jacobi_eigen(&l);
    let lam = eig.iter().copied().fold(f64::MIN, f64::max);
    let mut oracle = SquareMatrix::zeros(4);
    for i in 0..4 {
        for j in 0..4 {
            oracle.data[i * 4 + j] = (0..4)
                .map(|k| vecs[i][k] * (2.0 * eig[k] / lam - 1.0) * vecs[j][k])
                .sum();
        }
    }
    assert!(normalized_laplacian(&c4).unwrap().max_abs_diff(&oracle) < 1e-9);
}

#[test]
fn normalized_laplacian_spectrum_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let n = rng.random_range(1..9);
        let g = random_graph(&mut rng, n);
        let lt = normalized_laplacian(&g).unwrap();
        for _ in 0..20 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nv: f64 = v.iter().map(|x| x * x).sum();
            let q: f64 = lt.mul_vec(&v).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / nv;
            assert!((-1.0 - 1e-8..=1.0 + 1e-8).contains(&q), "{q}");
        }
    }
}

#[test]
fn chebyshev_basis_cases() {
    let p2 = LevelGraph::new(names(2), &[(0, 1)]).unwrap();
    let lt = normalized_laplacian(&p2).unwrap();
    let b0 = chebyshev_basis(&lt, 0).unwrap();
    assert_eq!(b0.matrices, vec![SquareMatrix::identity(2)]);
    let b2 = chebyshev_basis(&lt, 2).unwrap();
    // L̃² = I so T_2 = 2L̃² - I = I
    let direct = lt.matmul(&lt).axpby(2.0, &SquareMatrix::identity(2), -1.0);
    assert!(b2.matrices[2].max_abs_diff(&direct) < 1e-12);
    assert!(b2.matrices[2].max_abs_diff(&SquareMatrix::identity(2)) < 1e-9);
}

#[test]
fn chebyshev_basis_matches_coefficient_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_graph(&mut rng, 6);
    let lt = normalized_laplacian(&g).unwrap();
    let basis = chebyshev_basis(&lt, 4).unwrap();
    let coeffs = chebyshev_coefficients(4);
    for (k, ck) in coeffs.iter().enumerate() {
        let mut power = SquareMatrix::identity(6);
        let mut acc = SquareMatrix::zeros(6);
        for &c in ck {
            acc = acc.axpby(1.0, &power, c);
            power = power.matmul(&lt);
        }
        assert!(basis.matrices[k].max_abs_diff(&acc) < 1e-9);
    }
    for k in 2..=4 {
        let rec = lt
            .matmul(&basis.matrices[k - 1])
            .axpby(2.0, &basis.matrices[k - 2], -1.0);
        assert!(basis.matrices[k].max_abs_diff(&rec) < 1e-12);
    }
}
