mod common;

use std::collections::BTreeMap;
use std::io::Write;

use proptest::prelude::*;
use sinc_core::graph::Graph;
use sinc_core::synth::{
    generate_dataset, label_catalysts, load_dataset, manifest_path, save_dataset, DatasetConfig, SynthError,
};

/// Catalyst labels recomputed from the edge list.
fn oracle_labels(n: usize, edges: &[(usize, usize)], weights: &[i64]) -> Vec<u8> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(i, j) in edges {
        adj.entry(i).or_default().push(j);
        adj.entry(j).or_default().push(i);
    }
    (0..n)
        .map(|u| {
            let nbrs = adj.get(&u).map(Vec::as_slice).unwrap_or(&[]);
            let s: i64 = nbrs.iter().map(|&v| weights[v]).sum();
            u8::from(nbrs.iter().any(|&v| weights[v] == s))
        })
        .collect()
}

/// Probability that a node of degree `k` with i.i.d. uniform neighbor
/// weights in `[-bound, bound]` is a catalyst. Sums over the matching value
/// `t`: P(sum = t) - P(sum = t, no weight equals t).
fn catalyst_probability(k: usize, bound: i64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let q = 1.0 / (2 * bound + 1) as f64;
    let off = k as i64 * bound;
    let sum_dist = |skip: Option<i64>| {
        let mut dist = vec![0.0; (2 * off + 1) as usize];
        dist[off as usize] = 1.0;
        for _ in 0..k {
            let mut next = vec![0.0; dist.len()];
            for (s, &p) in dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for w in -bound..=bound {
                    if Some(w) == skip {
                        continue;
                    }
                    let idx = s as i64 + w;
                    if (0..next.len() as i64).contains(&idx) {
                        next[idx as usize] += p * q;
                    }
                }
            }
            dist = next;
        }
        dist
    };
    let all = sum_dist(None);
    (-bound..=bound)
        .map(|t| {
            let idx = (t + off) as usize;
            all[idx] - sum_dist(Some(t))[idx]
        })
        .sum()
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n + 1];
    let mut coef = 1.0f64;
    for (k, slot) in pmf.iter_mut().enumerate() {
        if k > 0 {
            coef *= (n - k + 1) as f64 / k as f64;
        }
        *slot = coef * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
    }
    pmf
}

/// Expected node-pooled catalyst fraction for `n ~ U{n_min..=n_max}` and
/// degrees `Binomial(n - 1, p)`.
fn expected_pos_fraction(bound: i64, p: f64, n_min: usize, n_max: usize) -> f64 {
    let by_degree: Vec<f64> = (0..n_max).map(|k| catalyst_probability(k, bound)).collect();
    let (mut positives, mut nodes) = (0.0, 0.0);
    for n in n_min..=n_max {
        let per_node: f64 = binomial_pmf(n - 1, p)
            .iter()
            .enumerate()
            .map(|(k, pk)| pk * by_degree[k])
            .sum();
        positives += n as f64 * per_node;
        nodes += n as f64;
    }
    positives / nodes
}

const TABLE: [(i64, f64, f64); 9] = [
    (1, 0.3, 0.37),
    (1, 0.5, 0.29),
    (1, 0.7, 0.25),
    (2, 0.3, 0.35),
    (2, 0.5, 0.28),
    (2, 0.7, 0.24),
    (3, 0.3, 0.32),
    (3, 0.5, 0.27),
    (3, 0.7, 0.23),
];

#[test]
fn catalyst_probability_small_cases() {
    // degree 1: the single neighbor always matches
    assert!((catalyst_probability(1, 2) - 1.0).abs() < 1e-15);
    // degree 2: w_a + w_b = w_a needs w_b = 0, so 1 - (1 - q)^2
    let q = 1.0 / 3.0;
    assert!((catalyst_probability(2, 1) - (1.0 - (1.0 - q) * (1.0 - q))).abs() < 1e-15);
}

#[test]
fn exact_pos_fraction_matches_table() {
    for (bound, p, target) in TABLE {
        let exact = expected_pos_fraction(bound, p, 30, 70);
        assert!((exact - target).abs() <= 0.02, "W={bound} p={p}: {exact} vs {target}");
    }
}

#[test]
fn generated_pos_fraction_matches_exact() {
    for (bound, p, _) in TABLE {
        let data = generate_dataset(&DatasetConfig::standard(bound, p, 1500, 3)).unwrap();
        let exact = expected_pos_fraction(bound, p, 30, 70);
        let got = data.stats.pos_fraction;
        assert!((got - exact).abs() < 0.01, "W={bound} p={p}: {got} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn labels_match_edge_list_oracle(seed in any::<u64>(), bound in 1i64..4, p in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let g = common::er(&mut rng, 1, 20, p);
        let w = sinc_core::synth::assign_weights(g.num_nodes(), bound, &mut rng);
        let edges = g.edges();
        prop_assert_eq!(label_catalysts(&g, &w).unwrap(), oracle_labels(g.num_nodes(), &edges, &w));
    }

    #[test]
    fn generated_graphs_respect_config(seed in any::<u64>(), bound in 1i64..4, p in 0.05f64..0.95) {
        let cfg = DatasetConfig { n_min: 5, n_max: 12, ..DatasetConfig::standard(bound, p, 6, seed) };
        let data = generate_dataset(&cfg).unwrap();
        prop_assert_eq!(data.graphs.len(), 6);
        for lg in &data.graphs {
            let n = lg.graph.num_nodes();
            prop_assert!((5..=12).contains(&n));
            prop_assert!(lg.weights.iter().all(|w| (-bound..=bound).contains(w)));
            prop_assert_eq!(&lg.labels, &oracle_labels(n, &lg.graph.edges(), &lg.weights));
        }
    }
}

#[test]
fn er_pair_frequency() {
    let mut rng = common::rng(77);
    let (n, p, draws) = (6, 0.35, 4000);
    let mut counts = vec![0usize; n * n];
    for _ in 0..draws {
        let g = sinc_core::synth::gen_er_graph(n, p, &mut rng);
        for (i, j) in g.edges() {
            counts[i * n + j] += 1;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let f = counts[i * n + j] as f64 / draws as f64;
            assert!((f - p).abs() < 0.03, "pair ({i},{j}): {f}");
        }
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    let data = generate_dataset(&DatasetConfig::standard(2, 0.5, 12, 8)).unwrap();
    save_dataset(&path, &data).unwrap();
    assert!(manifest_path(&path).exists());
    assert_eq!(load_dataset(&path).unwrap(), data);
}

#[test]
fn tampered_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test.jsonl");
    let g = Graph::new(2, &[(0, 1)]).unwrap();
    let data = sinc_core::synth::Dataset::from_graphs(
        DatasetConfig {
            num_graphs: 1,
            ..DatasetConfig::standard(1, 0.5, 1, 0)
        },
        vec![sinc_core::synth::LabeledGraph {
            graph: g,
            weights: vec![1, 0],
            labels: vec![1, 1],
        }],
    );
    save_dataset(&path, &data).unwrap();
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"y\":[1,1]", "\"y\":[1,0]");
    std::fs::File::create(&path)
        .unwrap()
        .write_all(text.as_bytes())
        .unwrap();
    assert!(matches!(load_dataset(&path), Err(SynthError::Validation(_))));
}

#[test]
fn malformed_lines_report_their_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let data = generate_dataset(&DatasetConfig::standard(1, 0.3, 2, 1)).unwrap();
    save_dataset(&path, &data).unwrap();
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"n\":2,\"edges\":[[0,0]],\"w\":[0,0],\"y\":[0,0]}\n");
    std::fs::write(&path, text).unwrap();
    match load_dataset(&path) {
        Err(SynthError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}
