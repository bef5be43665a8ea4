mod common;

use proptest::prelude::*;
use sinc_core::graph::{BatchedGraph, Graph, GraphError};

fn edge_set() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..24).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let m = pairs.len();
        (Just(n), proptest::sample::subsequence(pairs, 0..=m))
    })
}

proptest! {
    #[test]
    fn edges_round_trip((n, edges) in edge_set()) {
        let g = Graph::new(n, &edges).unwrap();
        prop_assert_eq!(g.edges(), edges.clone());
        prop_assert_eq!(g.num_arcs(), 2 * edges.len());
        prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * edges.len());
        // arcs grouped by destination, sources ascending
        for u in 0..n {
            let nbrs = g.neighbors(u);
            prop_assert!(nbrs.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(nbrs.len(), g.degree(u));
            for &v in nbrs {
                prop_assert!(g.neighbors(v).contains(&u));
            }
        }
    }

    #[test]
    fn reversed_input_gives_same_graph((n, edges) in edge_set()) {
        let flipped: Vec<_> = edges.iter().rev().map(|&(i, j)| (j, i)).collect();
        prop_assert_eq!(Graph::new(n, &flipped).unwrap(), Graph::new(n, &edges).unwrap());
    }

    #[test]
    fn permutations_compose(((n, edges), seed) in edge_set().prop_flat_map(|e| (Just(e), any::<u64>()))) {
        let g = Graph::new(n, &edges).unwrap();
        let mut rng = common::rng(seed);
        let p = common::permutation(&mut rng, n);
        let q = common::permutation(&mut rng, n);
        let pq: Vec<usize> = (0..n).map(|i| q[p[i]]).collect();
        prop_assert_eq!(g.permute(&p).unwrap().permute(&q).unwrap(), g.permute(&pq).unwrap());
        let mut inverse = vec![0; n];
        for (i, &pi) in p.iter().enumerate() {
            inverse[pi] = i;
        }
        prop_assert_eq!(g.permute(&p).unwrap().permute(&inverse).unwrap(), g.clone());
        let gp = g.permute(&p).unwrap();
        for (i, &pi) in p.iter().enumerate() {
            prop_assert_eq!(gp.degree(pi), g.degree(i));
        }
    }

    #[test]
    fn identity_permutation((n, edges) in edge_set()) {
        let g = Graph::new(n, &edges).unwrap();
        let id: Vec<usize> = (0..n).collect();
        prop_assert_eq!(g.permute(&id).unwrap(), g);
    }

    #[test]
    fn batch_is_disjoint_union(parts in proptest::collection::vec(edge_set(), 1..5)) {
        let graphs: Vec<Graph> = parts.iter().map(|(n, e)| Graph::new(*n, e).unwrap()).collect();
        let b = BatchedGraph::new(&graphs).unwrap();
        prop_assert_eq!(b.num_graphs(), graphs.len());
        let mut expected = Vec::new();
        for (k, g) in graphs.iter().enumerate() {
            let r = b.node_range(k);
            prop_assert_eq!(r.len(), g.num_nodes());
            expected.extend(g.edges().into_iter().map(|(i, j)| (i + r.start, j + r.start)));
            for u in r.clone() {
                prop_assert_eq!(b.graph_ids[u], k);
            }
        }
        prop_assert_eq!(b.graph.edges(), expected);
    }

    #[test]
    fn bad_permutations_rejected(n in 2usize..10) {
        let g = Graph::new(n, &[(0, 1)]).unwrap();
        let mut dup: Vec<usize> = (0..n).collect();
        dup[1] = 0;
        prop_assert!(matches!(g.permute(&dup), Err(GraphError::NotBijective(_))));
        prop_assert!(g.permute(&dup[..n - 1]).is_err());
    }
}

#[test]
fn rejects_malformed_edges() {
    assert!(Graph::new(3, &[(0, 3)]).is_err());
    assert!(Graph::new(3, &[(1, 1)]).is_err());
    assert!(Graph::new(3, &[(0, 1), (1, 0)]).is_err());
    assert!(BatchedGraph::new(std::iter::empty()).is_err());
}

#[test]
fn singleton_batch_matches_input() {
    let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let b = BatchedGraph::new([&g]).unwrap();
    assert_eq!(b.graph, g);
    assert_eq!(b.graph_offsets, vec![0, 3]);
}
