mod common;

use sinc_core::layers::{conditioned_grad_check, Encoding, GradCheckProtocol, ModelKind, ModelSpec};
use sinc_core::numerics::{Activation, Aggregator};

const TOL: f64 = 1e-5;
const DRAWS: u64 = 10;

fn spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        d_in: 3,
        d_hidden: 8,
        d_out: 8,
        ..ModelSpec::new(kind, Encoding::Scalar)
    }
}

fn assert_passes(spec: ModelSpec) {
    let protocol = GradCheckProtocol::default();
    assert_eq!(protocol.h, 1e-6);
    for seed in 0..DRAWS {
        let mut rng = common::rng(seed);
        let check = conditioned_grad_check(&spec, &protocol, &mut rng)
            .unwrap()
            .unwrap_or_else(|| panic!("{spec:?} seed {seed}: no accepted draw"));
        let r = &check.report;
        assert!(
            r.max_rel_error < TOL,
            "{spec:?} seed {seed}: relative error {:e} (analytic {:e}, numeric {:e})",
            r.max_rel_error,
            r.analytic[r.worst_index],
            r.numeric[r.worst_index]
        );
    }
}

#[test]
fn gcn() {
    assert_passes(spec(ModelKind::Gcn));
}

#[test]
fn graphsage() {
    assert_passes(spec(ModelKind::GraphSage));
}

#[test]
fn gin_fixed_and_learned_eps() {
    assert_passes(spec(ModelKind::Gin));
    assert_passes(ModelSpec {
        learn_eps: true,
        ..spec(ModelKind::Gin)
    });
}

#[test]
fn gatv2() {
    assert_passes(spec(ModelKind::Gatv2));
}

#[test]
fn sir_gcn_activations() {
    for act in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Sigmoid] {
        assert_passes(ModelSpec {
            activation: act,
            ..spec(ModelKind::SirGcn)
        });
    }
}

#[test]
fn sinc_gcn_aggregator_grid() {
    let linear = [Aggregator::Sum, Aggregator::Mean, Aggregator::SymmetricMean];
    for agg in linear.into_iter().chain([Aggregator::Max]) {
        for ctx_agg in linear.into_iter().chain([Aggregator::Max]) {
            assert_passes(ModelSpec {
                agg,
                ctx_agg,
                ..spec(ModelKind::SincGcn)
            });
        }
    }
    assert_passes(ModelSpec {
        activation: Activation::LeakyRelu(0.2),
        ..spec(ModelKind::SincGcn)
    });
}

#[test]
fn multi_agg() {
    assert_passes(spec(ModelKind::MultiAgg));
}
