mod common;

use proptest::prelude::*;
use sinc_core::graph::Graph;
use sinc_core::layers::{
    analytic_sinc_params, init_params, layer_forward, predict_logits, sinc_gcn_forward, sir_gcn_forward, Encoding,
    LayerParams, ModelKind, ModelSpec,
};
use sinc_core::numerics::{Activation, Aggregator, Tensor};
use sinc_core::synth::{generate_dataset, label_catalysts, DatasetConfig};

fn spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        d_in: 3,
        ..ModelSpec::new(kind, Encoding::Scalar)
    }
}

fn equivariance_specs() -> Vec<ModelSpec> {
    let mut specs: Vec<ModelSpec> = ModelKind::ALL.into_iter().map(spec).collect();
    for (agg, ctx_agg) in [
        (Aggregator::Max, Aggregator::Sum),
        (Aggregator::Mean, Aggregator::Max),
        (Aggregator::SymmetricMean, Aggregator::Mean),
    ] {
        specs.push(ModelSpec {
            agg,
            ctx_agg,
            ..spec(ModelKind::SincGcn)
        });
    }
    specs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn every_layer_is_permutation_equivariant(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let g = common::er(&mut rng, 1, 14, 0.4);
        let n = g.num_nodes();
        let x = common::features(&mut rng, n, 3);
        let perm = common::permutation(&mut rng, n);
        let pg = g.permute(&perm).unwrap();
        let px = common::permute_rows(&x, &perm);
        for spec in equivariance_specs() {
            let params = init_params(&spec, &mut rng);
            let out = layer_forward(&spec, &params, &g, &x).unwrap();
            let pout = layer_forward(&spec, &params, &pg, &px).unwrap();
            let diff = common::permute_rows(&out, &perm).max_abs_diff(&pout);
            prop_assert!(diff <= 1e-8, "{:?}: {:e}", spec.kind, diff);
        }
    }
}

fn without_w_n(sinc: &LayerParams) -> LayerParams {
    let mut sir = LayerParams::new();
    for (name, t) in sinc.iter() {
        if name != "w_n" {
            sir.insert(name, t.clone());
        }
    }
    sir
}

#[test]
fn sinc_with_zero_context_weights_is_sir() {
    let sinc_spec = spec(ModelKind::SincGcn);
    for act in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Sigmoid] {
        for trial in 0..100 {
            let mut rng = common::rng(trial);
            let g = common::er(&mut rng, 1, 12, 0.4);
            let x = common::features(&mut rng, g.num_nodes(), 3);
            let mut params = init_params(&sinc_spec, &mut rng);
            let sir_params = without_w_n(&params);
            let (rows, cols) = params.get("w_n").unwrap().shape();
            params.insert("w_n", Tensor::zeros(rows, cols));
            let sinc = sinc_gcn_forward(&params, &g, &x, Aggregator::Sum, Aggregator::Sum, act).unwrap();
            let sir = sir_gcn_forward(&sir_params, &g, &x, act).unwrap();
            let diff = sinc.max_abs_diff(&sir);
            assert!(diff <= 1e-12, "{act:?} trial {trial}: {diff:e}");
        }
    }
}

/// Two stars centered on node 0 with leaf weights `{2, 0, 0}` and `{1, 1}`.
fn separation_pair() -> [(Graph, Tensor); 2] {
    let a = Graph::new(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
    let b = Graph::new(3, &[(0, 1), (0, 2)]).unwrap();
    [
        (a, Tensor::column(&[0.0, 2.0, 0.0, 0.0])),
        (b, Tensor::column(&[0.0, 1.0, 1.0])),
    ]
}

#[test]
fn context_separates_what_sir_cannot() {
    let (_, params) = analytic_sinc_params(Aggregator::Max);
    let sir_params = without_w_n(&params);
    let [(ga, xa), (gb, xb)] = separation_pair();
    let hub = |t: Tensor| t.get(0, 0);

    let sir_a = hub(sir_gcn_forward(&sir_params, &ga, &xa, Activation::Relu).unwrap());
    let sir_b = hub(sir_gcn_forward(&sir_params, &gb, &xb, Activation::Relu).unwrap());
    assert_eq!(sir_a, -2.0);
    assert_eq!(sir_b, -2.0);

    let relu = Activation::Relu;
    let max_a = hub(sinc_gcn_forward(&params, &ga, &xa, Aggregator::Max, Aggregator::Sum, relu).unwrap());
    let max_b = hub(sinc_gcn_forward(&params, &gb, &xb, Aggregator::Max, Aggregator::Sum, relu).unwrap());
    assert_eq!((max_a, max_b), (0.0, -1.0));

    let sum_a = hub(sinc_gcn_forward(&params, &ga, &xa, Aggregator::Sum, Aggregator::Sum, relu).unwrap());
    let sum_b = hub(sinc_gcn_forward(&params, &gb, &xb, Aggregator::Sum, Aggregator::Sum, relu).unwrap());
    assert_eq!((sum_a, sum_b), (-4.0, -2.0));
}

fn analytic_predictions(variant: Aggregator, g: &Graph, weights: &[i64]) -> Vec<u8> {
    let (spec, params) = analytic_sinc_params(variant);
    let x = Tensor::column(&weights.iter().map(|&w| w as f64).collect::<Vec<_>>());
    let z = predict_logits(&spec, &params, g, &x).unwrap();
    (0..g.num_nodes()).map(|u| u8::from(z.get(u, 0) > 0.0)).collect()
}

#[test]
fn analytic_max_variant_matches_labels() {
    for bound in [1, 2, 3] {
        for p_edge in [0.3, 0.5, 0.7] {
            let cfg = DatasetConfig::standard(bound, p_edge, 200, 11);
            let data = generate_dataset(&cfg).unwrap();
            for lg in &data.graphs {
                assert!(lg.graph.degrees().iter().all(|&d| d > 0));
                let pred = analytic_predictions(Aggregator::Max, &lg.graph, &lg.weights);
                assert_eq!(pred, lg.labels, "W={bound} p={p_edge}");
            }
        }
    }
}

#[test]
fn analytic_hand_cases() {
    let star = |leaves: &[i64]| {
        let n = leaves.len() + 1;
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        let mut w = vec![0];
        w.extend_from_slice(leaves);
        (Graph::new(n, &edges).unwrap(), w)
    };
    for (leaves, max_hub, sum_hub) in [
        (&[1, 0][..], 1, 0),
        (&[1, 1][..], 0, 0),
        (&[2, 0, 0][..], 1, 0),
        (&[-3][..], 1, 1),
    ] {
        let (g, w) = star(leaves);
        assert_eq!(label_catalysts(&g, &w).unwrap()[0], max_hub);
        assert_eq!(analytic_predictions(Aggregator::Max, &g, &w)[0], max_hub, "{leaves:?}");
        assert_eq!(analytic_predictions(Aggregator::Sum, &g, &w)[0], sum_hub, "{leaves:?}");
    }
}

#[test]
fn isolated_node_reads_as_positive() {
    // the empty max is 0, while an isolated node has no matching neighbor
    let g = Graph::new(1, &[]).unwrap();
    assert_eq!(label_catalysts(&g, &[0]).unwrap(), vec![0]);
    assert_eq!(analytic_predictions(Aggregator::Max, &g, &[0]), vec![1]);
}
