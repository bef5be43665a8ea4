//! Neighborhood-contextualized message passing on small graphs.
//!
//! The crate bundles a CSR graph type, the UniqueSignature synthetic
//! benchmark, a reverse-mode differentiation tape with segment reductions,
//! the GNN layers compared in the benchmark, and a training loop.

pub mod graph;
pub mod layers;
pub mod numerics;
pub mod seeding;
pub mod synth;
pub mod train;
