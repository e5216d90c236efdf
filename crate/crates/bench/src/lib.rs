//! Shared fixtures for the benchmarks.

use overdict_core::model::{gen_dictionary, sample_batch, CoeffDist, Dictionary, GenerativeModel, SampleSet};

/// Ground truth of size `d × p` and `n` `k`-sparse signals drawn from it.
pub fn fixture(d: usize, p: usize, k: usize, n: usize) -> (Dictionary, SampleSet) {
    let d0 = gen_dictionary(d, p, 11).expect("valid sizes");
    let model = GenerativeModel::new(d0.clone(), k, CoeffDist::StandardGaussian, 0.0).expect("valid model");
    let samples = sample_batch(&model, n, 12).expect("positive count");
    (d0, samples)
}
