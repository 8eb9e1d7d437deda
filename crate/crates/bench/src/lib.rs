//! Seeded inputs shared by the benchmarks.

use anatomy_attn::{AnatomyMasks, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Lung on the left half, heart on a centred square, background elsewhere.
pub fn block_masks(n: usize, size: usize) -> AnatomyMasks {
    let hw = size * size;
    let third = size / 3;
    let lung = Tensor::from_fn(&[n, 1, size, size], |i| ((i % hw) % size < size / 2) as u8 as f64);
    let heart = Tensor::from_fn(&[n, 1, size, size], |i| {
        let (y, x) = ((i % hw) / size, (i % hw) % size);
        let inside = (third..2 * third).contains(&y) && (size / 2..size / 2 + third).contains(&x);
        inside as u8 as f64
    });
    AnatomyMasks::new(lung, heart).expect("disjoint masks")
}

/// Scores and labels for an AUC over `n` samples with about 30% positives.
pub fn auc_instance(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let scores = labels
        .iter()
        .map(|&l| rng.random_range(0.0..1.0) + if l { 0.3 } else { 0.0 })
        .collect();
    (scores, labels)
}
