#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sinc_core::graph::Graph;
use sinc_core::numerics::Tensor;
use sinc_core::seeding::rng_for;
use sinc_core::synth::gen_er_graph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, "test")
}

pub fn er(rng: &mut ChaCha8Rng, n_min: usize, n_max: usize, p: f64) -> Graph {
    let n = rng.gen_range(n_min..=n_max);
    gen_er_graph(n, p, rng)
}

pub fn features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Row `perm[i]` of the result is row `i` of `t`.
pub fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).copy_from_slice(t.row(i));
    }
    out
}
