//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfm_core::{generate, LabeledCorpus, SynthConfig, SynthTruth};

pub fn desk_corpus(seed: u64) -> (LabeledCorpus, SynthTruth) {
    generate(&SynthConfig {
        seed,
        ..Default::default()
    })
    .expect("default synth config is valid")
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn clustered_points(seed: u64, n: usize, k: usize, d: usize) -> (Vec<DVector<f64>>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = uniform(&mut rng, k, d) * 5.0;
    (0..n)
        .map(|i| {
            let c = i % k;
            let p = DVector::from_fn(d, |j, _| centers[(c, j)] + rng.random_range(-1.0..1.0));
            (p, c as i64)
        })
        .unzip()
}
