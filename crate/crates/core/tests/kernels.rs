mod common;

use proptest::prelude::*;
use sinc_core::graph::Graph;
use sinc_core::numerics::{Activation, Aggregator, Tape, Tensor, STD_EPS};

/// Neighbor lists straight from the edge list, independent of the CSR.
fn adjacency(g: &Graph) -> Vec<Vec<usize>> {
    let mut nbrs = vec![Vec::new(); g.num_nodes()];
    for (i, j) in g.edges() {
        nbrs[i].push(j);
        nbrs[j].push(i);
    }
    nbrs
}

/// Dense `C x` where `C[u][v]` is the aggregation coefficient of arc `v -> u`.
fn dense_linear(g: &Graph, x: &Tensor, kind: Aggregator) -> Tensor {
    let n = g.num_nodes();
    let nbrs = adjacency(g);
    let deg = |u: usize| nbrs[u].len().max(1) as f64;
    let mut c = vec![vec![0.0; n]; n];
    for u in 0..n {
        for &v in &nbrs[u] {
            c[u][v] = match kind {
                Aggregator::Sum => 1.0,
                Aggregator::Mean => 1.0 / deg(u),
                Aggregator::SymmetricMean => 1.0 / (deg(u) * deg(v)).sqrt(),
                _ => unreachable!(),
            };
        }
    }
    let mut out = Tensor::zeros(n, x.cols());
    for (u, row) in c.iter().enumerate() {
        for j in 0..x.cols() {
            out.set(u, j, (0..n).map(|v| row[v] * x.get(v, j)).sum());
        }
    }
    out
}

fn naive_nonlinear(g: &Graph, x: &Tensor, kind: Aggregator) -> Tensor {
    let nbrs = adjacency(g);
    let mut out = Tensor::zeros(g.num_nodes(), x.cols());
    for (u, vs) in nbrs.iter().enumerate() {
        if vs.is_empty() {
            continue;
        }
        for j in 0..x.cols() {
            let col: Vec<f64> = vs.iter().map(|&v| x.get(v, j)).collect();
            let k = col.len() as f64;
            let value = match kind {
                Aggregator::Max => col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregator::Std => {
                    let mean = col.iter().sum::<f64>() / k;
                    let var = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / k;
                    (var + STD_EPS).sqrt()
                }
                _ => unreachable!(),
            };
            out.set(u, j, value);
        }
    }
    out
}

fn reduce(g: &Graph, x: &Tensor, kind: Aggregator) -> Tensor {
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    let out = tape.neighbor_reduce(v, g, kind).unwrap();
    tape.value(out).clone()
}

fn segment(g: &Graph, x: &Tensor, kind: Aggregator) -> Tensor {
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    let msgs = tape.gather_rows(v, g.arc_src()).unwrap();
    let out = tape.segment_reduce(msgs, g, kind).unwrap();
    tape.value(out).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_reductions_match_dense_products(seed in any::<u64>(), d in 1usize..20, p in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let g = common::er(&mut rng, 1, 30, p);
        let x = common::features(&mut rng, g.num_nodes(), d);
        for kind in [Aggregator::Sum, Aggregator::Mean, Aggregator::SymmetricMean] {
            let oracle = dense_linear(&g, &x, kind);
            prop_assert!(reduce(&g, &x, kind).max_abs_diff(&oracle) <= 1e-12, "{kind}");
            prop_assert!(segment(&g, &x, kind).max_abs_diff(&oracle) <= 1e-12, "{kind}");
        }
    }

    #[test]
    fn max_and_std_match_naive(seed in any::<u64>(), d in 1usize..20, p in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let g = common::er(&mut rng, 1, 30, p);
        let x = common::features(&mut rng, g.num_nodes(), d);
        for kind in [Aggregator::Max, Aggregator::Std] {
            let oracle = naive_nonlinear(&g, &x, kind);
            prop_assert!(reduce(&g, &x, kind).max_abs_diff(&oracle) <= 1e-12, "{kind}");
            prop_assert!(segment(&g, &x, kind).max_abs_diff(&oracle) <= 1e-12, "{kind}");
        }
    }

    #[test]
    fn softmax_segments_sum_to_one(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = common::rng(seed);
        let g = common::er(&mut rng, 2, 25, 0.4);
        let scores = common::features(&mut rng, g.num_arcs(), 1).map(|s| 20.0 * s);
        let run = |s: &Tensor| {
            let mut tape = Tape::inference();
            let v = tape.constant(s.clone());
            let out = tape.segment_softmax(v, &g).unwrap();
            tape.value(out).clone()
        };
        let alpha = run(&scores);
        for u in 0..g.num_nodes() {
            let r = g.arc_range(u);
            if r.is_empty() {
                continue;
            }
            let total: f64 = r.clone().map(|a| alpha.get(a, 0)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(r.clone().all(|a| alpha.get(a, 0) > 0.0));
        }
        prop_assert!(run(&scores.map(|s| s + shift)).max_abs_diff(&alpha) <= 1e-12);
    }

    #[test]
    fn fused_edge_kernel_matches_unfused(seed in any::<u64>(), d in 1usize..20) {
        let mut rng = common::rng(seed);
        let g = common::er(&mut rng, 1, 25, 0.3);
        let n = g.num_nodes();
        let q = common::features(&mut rng, n, d);
        let k = common::features(&mut rng, n, d);
        let w = common::features(&mut rng, n, d);
        let acts = [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Sigmoid, Activation::Identity];
        for act in acts {
            for kind in [Aggregator::Sum, Aggregator::Mean, Aggregator::SymmetricMean] {
                let run = |fused: bool| {
                    let mut tape = Tape::new();
                    let (qv, kv) = (tape.param(q.clone()), tape.param(k.clone()));
                    let out = if fused {
                        tape.edge_activation_reduce(qv, kv, &g, act, kind).unwrap()
                    } else {
                        let pre = tape.arc_combine(qv, kv, &g).unwrap();
                        let m = tape.activate(pre, act);
                        tape.segment_reduce(m, &g, kind).unwrap()
                    };
                    // weighted sum so each output element gets its own adjoint
                    let wv = tape.constant(w.clone());
                    let prod = tape.concat_cols(&[out, wv]).unwrap();
                    let proj = tape.constant(Tensor::full(1, 2 * d, 0.5));
                    let s = tape.linear(prod, proj).unwrap();
                    let s = tape.square(s);
                    let loss = tape.sum(s);
                    tape.backward(loss).unwrap();
                    (tape.value(out).clone(), tape.grad(qv).unwrap().clone(), tape.grad(kv).unwrap().clone())
                };
                let (a, b) = (run(true), run(false));
                prop_assert!(a.0.max_abs_diff(&b.0) <= 1e-12, "{act} {kind}");
                prop_assert!(a.1.max_abs_diff(&b.1) <= 1e-12, "{act} {kind}");
                prop_assert!(a.2.max_abs_diff(&b.2) <= 1e-12, "{act} {kind}");
            }
        }
    }
}

#[test]
fn empty_segments_reduce_to_zero() {
    let g = Graph::new(4, &[(0, 1)]).unwrap();
    let x = Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 4.0], &[5.0, 6.0], &[-7.0, 8.0]]);
    for kind in [
        Aggregator::Sum,
        Aggregator::Mean,
        Aggregator::SymmetricMean,
        Aggregator::Max,
        Aggregator::Std,
    ] {
        let out = reduce(&g, &x, kind);
        assert_eq!(out.row(2), &[0.0, 0.0], "{kind}");
        assert_eq!(out.row(3), &[0.0, 0.0], "{kind}");
    }
}

#[test]
fn max_gradient_goes_to_first_maximum() {
    // node 0 has neighbors 1 and 2 with equal values
    let g = Graph::new(3, &[(0, 1), (0, 2)]).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(Tensor::column(&[0.0, 2.0, 2.0]));
    let out = tape.neighbor_reduce(x, &g, Aggregator::Max).unwrap();
    let loss = tape.sum(out);
    tape.backward(loss).unwrap();
    // row 0 receives from both leaves; leaf 1 wins the tie at node 0
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 1.0, 0.0]);
}

#[test]
fn tape_replay_is_bit_identical() {
    let mut rng = common::rng(7);
    let g = common::er(&mut rng, 40, 40, 0.2);
    let x = common::features(&mut rng, 40, 5);
    let w = common::features(&mut rng, 6, 5);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(w.clone());
        let y = tape.linear(xv, wv).unwrap();
        let r = tape.neighbor_reduce(y, &g, Aggregator::Std).unwrap();
        let m = tape
            .edge_activation_reduce(r, y, &g, Activation::Relu, Aggregator::SymmetricMean)
            .unwrap();
        let loss = tape.sum(m);
        tape.backward(loss).unwrap();
        (tape.value(loss).clone(), tape.grad(wv).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
}

#[test]
fn std_of_constant_neighbors_is_sqrt_eps() {
    let g = Graph::new(3, &[(0, 1), (0, 2)]).unwrap();
    let out = reduce(&g, &Tensor::column(&[9.0, 4.0, 4.0]), Aggregator::Std);
    assert_eq!(out.get(0, 0), STD_EPS.sqrt());
}
