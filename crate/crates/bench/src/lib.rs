//! Shared inputs for the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpgn_core::data::{make_embeddings, sample_dataset};
use tpgn_core::train::feature_mean;
use tpgn_core::{HyperParams, ModelParams, Sample, SceneGrammar, Vector, WxMode};

pub struct ToySetup {
    pub params: ModelParams,
    pub hyper: HyperParams,
    pub samples: Vec<Sample>,
}

/// Randomly initialised model over the built-in grammar.
pub fn toy_setup(d: usize, n_samples: usize, seed: u64) -> ToySetup {
    let grammar = SceneGrammar::toy();
    let samples = sample_dataset(&grammar, n_samples, 0.1, seed).expect("toy dataset");
    let hyper = HyperParams {
        d,
        vocab_size: grammar.vocab().len(),
        feature_dim: grammar.feature_dim(),
        max_len: grammar.max_len(),
        start_id: grammar.start_id(),
        end_id: grammar.end_id(),
    };
    let we = make_embeddings(hyper.vocab_size, d, seed).expect("embeddings").we;
    let mean = feature_mean(&samples).expect("non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init_random(&hyper, WxMode::TiedAverage, we, mean, &mut rng).expect("init");
    ToySetup { params, hyper, samples }
}

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite"))
        .collect()
}
