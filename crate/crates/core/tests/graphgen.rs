use graphleak::graphgen::*;
use graphleak::numerics::Tensor;
use proptest::prelude::*;

fn sbm(n: usize, p_in: f64, p_out: f64) -> SbmParams {
    SbmParams { n, classes: 2, p_in, p_out, r: 2.0, s: 0.5, d: 4, orientation: MeanOrientation::Aligned }
}

#[test]
fn homophily_converges_to_expectation() {
    let p = sbm(256, 0.1, 0.01);
    let expected = p.expected_homophily();
    for seed in 0..10 {
        let h = measure_homophily(&generate_sbm(&p, seed).unwrap()).unwrap();
        assert!((h - expected).abs() <= 0.05, "seed {seed}: h={h} vs {expected}");
    }
}

#[test]
fn equal_probabilities_give_half_homophily() {
    let p = sbm(256, 0.05, 0.05);
    let mean: f64 = (0..10).map(|s| measure_homophily(&generate_sbm(&p, s).unwrap()).unwrap()).sum::<f64>() / 10.0;
    assert!((mean - 0.5).abs() < 0.03, "{mean}");
}

#[test]
fn no_inter_edges_gives_unit_homophily() {
    let g = generate_sbm(&sbm(64, 0.2, 0.0), 4).unwrap();
    assert_eq!(measure_homophily(&g).unwrap(), 1.0);
}

#[test]
fn cora_like_edge_mix() {
    // 100 edges, 81 of which join same-label endpoints.
    let n = 202;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut edges = Vec::new();
    for e in 0..100 {
        let i = 2 * e;
        edges.push(if e < 81 { (i, i + 2) } else { (i, i + 1) });
    }
    let g = Graph::from_edges(n, &edges, Tensor::zeros(n, 1), labels, 2).unwrap();
    assert!((measure_homophily(&g).unwrap() - 0.81).abs() < 1e-12);
}

#[test]
fn imdb_like_heterophilic_sbm() {
    let mut p = sbm(256, 0.0, 0.04);
    p.orientation = MeanOrientation::Antipodal;
    p.p_in = p.solve_p_in(0.19).unwrap();
    let mean: f64 = (0..10).map(|s| measure_homophily(&generate_sbm(&p, s).unwrap()).unwrap()).sum::<f64>() / 10.0;
    assert!((mean - 0.19).abs() < 0.03, "{mean}");
}

#[test]
fn aligned_sbm_feature_correlation() {
    let p = sbm(32, 0.3, 0.02);
    for seed in 0..10 {
        let hx = measure_feature_correlation(&generate_sbm(&p, seed).unwrap()).unwrap();
        assert!(hx > 0.5, "seed {seed}: {hx}");
    }
}

#[test]
fn antipodal_disassortative_limit() {
    let mut p = sbm(64, 0.0, 0.2);
    p.orientation = MeanOrientation::Antipodal;
    p.s = 1e-6;
    let hx = measure_feature_correlation(&generate_sbm(&p, 2).unwrap()).unwrap();
    assert!((hx + 1.0).abs() < 1e-5, "{hx}");
}

/// Discrete power-law MLE on the top decile of degrees, with the usual
/// half-integer continuity correction at x_min.
fn hill_exponent(degrees: &[usize]) -> f64 {
    let mut d: Vec<f64> = degrees.iter().map(|&x| x as f64).collect();
    d.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let m = (d.len() as f64 * 0.1).ceil() as usize;
    let xmin = d[m - 1];
    let s: f64 = d[..m].iter().map(|x| (x / (xmin - 0.5)).ln()).sum();
    1.0 + m as f64 / s
}

#[test]
fn chunglu_tail_exponent_and_mean_degree() {
    let p = ChungLuParams { n: 512, beta: 1.8, mean_degree: 4.0 };
    let (mut hill, mut mean_deg) = (0.0, 0.0);
    for seed in 0..20 {
        let g = generate_chunglu(&p, seed).unwrap();
        let degs: Vec<usize> = (0..g.n()).map(|v| g.degree(v)).collect();
        hill += hill_exponent(&degs) / 20.0;
        mean_deg += degs.iter().sum::<usize>() as f64 / g.n() as f64 / 20.0;
    }
    assert!((hill - 1.8).abs() <= 0.3, "hill {hill}");
    assert!((mean_deg - 4.0).abs() <= 0.8, "mean degree {mean_deg}");
}

#[test]
fn boundary_fraction_shrinks_with_window() {
    let g = generate_chunglu(&ChungLuParams { n: 512, beta: 1.8, mean_degree: 4.0 }, 11).unwrap();
    let frac = |k: usize| {
        (0..50).map(|c| sample_egonet(&g, c * 10, k, c as u64).unwrap().boundary_fraction()).sum::<f64>() / 50.0
    };
    let (f32_, f128) = (frac(32), frac(128));
    assert!(f32_ > f128, "{f32_} vs {f128}");
}

#[test]
fn save_load_round_trip_is_exact() {
    let g = generate_sbm(&sbm(32, 0.3, 0.02), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    save_graph(&g, &path).unwrap();
    let back = load_graph(&path).unwrap();
    assert_eq!(back.adjacency(), g.adjacency());
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(back.features()), bits(g.features()));
    assert_eq!(back, g);
}

#[test]
fn file_with_self_loop_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"version":1,"n":2,"d":1,"C":1,"edges":[[1,1]],"features":[[0],[0]],"labels":[0,0]}"#)
        .unwrap();
    let err = load_graph(&path).unwrap_err();
    assert!(err.to_string().contains("diagonal"), "{err}");
}

#[test]
fn file_edges_listed_once_are_symmetrised() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    std::fs::write(&path, r#"{"version":1,"n":3,"d":1,"C":2,"edges":[[2,0]],"features":[[0],[1],[2]],"labels":[0,1,1]}"#)
        .unwrap();
    let g = load_graph(&path).unwrap();
    assert!(g.has_edge(0, 2) && g.has_edge(2, 0));
    assert!(!g.has_edge(0, 1));
}

#[test]
fn file_label_out_of_range_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    std::fs::write(&path, r#"{"version":1,"n":2,"d":1,"C":1,"edges":[],"features":[[0],[1]],"labels":[0,1]}"#).unwrap();
    assert!(load_graph(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn generated_adjacency_is_symmetric_with_zero_diagonal(
        n in 2usize..40, p_in in 0.0f64..1.0, p_out in 0.0f64..1.0, seed in any::<u64>()
    ) {
        let g = generate_sbm(&sbm(n, p_in, p_out), seed).unwrap();
        for i in 0..n {
            prop_assert!(!g.has_edge(i, i));
            for j in 0..n {
                prop_assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
            }
        }
    }

    #[test]
    fn chunglu_adjacency_is_symmetric(n in 2usize..60, beta in 1.2f64..3.5, seed in any::<u64>()) {
        let g = generate_chunglu(&ChungLuParams { n, beta, mean_degree: 0.5 }, seed).unwrap();
        for i in 0..n {
            prop_assert!(!g.has_edge(i, i));
            for j in 0..i {
                prop_assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
            }
        }
    }

    #[test]
    fn windows_are_principal_submatrices(
        n in 4usize..40, p in 0.0f64..0.4, seed in any::<u64>(), kfrac in 0.1f64..1.0, c in 0usize..1000
    ) {
        let g = generate_sbm(&sbm(n, p, p / 2.0), seed).unwrap();
        let k = ((n as f64 * kfrac).ceil() as usize).clamp(1, n);
        let w = sample_egonet(&g, c % n, k, seed ^ 1).unwrap();
        prop_assert_eq!(w.k(), k);
        let mut uniq = w.nodes.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), k);
        for a in 0..k {
            for b in 0..k {
                prop_assert_eq!(w.has_edge(a, b), g.has_edge(w.nodes[a], w.nodes[b]));
            }
        }
        let inside: std::collections::HashSet<_> = w.nodes.iter().copied().collect();
        let boundary = g.edges().iter().filter(|(i, j)| inside.contains(i) != inside.contains(j)).count();
        prop_assert_eq!(w.boundary_edges, boundary);
    }

    #[test]
    fn identical_induced_structure_hashes_equal(n in 4usize..30, seed in any::<u64>(), c in 0usize..30) {
        let g = generate_sbm(&sbm(n, 0.3, 0.1), seed).unwrap();
        let k = n / 2;
        let w1 = sample_egonet(&g, c % n, k, 1).unwrap();
        // Same structure, different features: re-sample from a feature-shifted copy.
        let g2 = g.with_features(g.features().map(|v| v + 1.0)).unwrap();
        let w2 = sample_egonet(&g2, c % n, k, 1).unwrap();
        prop_assert_eq!(w1.adjacency_hash(), w2.adjacency_hash());
    }
}
