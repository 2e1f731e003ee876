//! Fixed-seed fixtures for the kernel benchmarks.

use endd_core::{Activation, Mlp, TransferSet};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform points in `[-3, 3]²`.
pub fn points(n: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, 2), |_| r.random_range(-3.0..3.0))
}

pub fn labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0..k)).collect()
}

/// The default member architecture, 2-64-64-K.
pub fn mlp(k: usize, seed: u64) -> Mlp {
    Mlp::he_uniform(&[2, 64, 64, k], Activation::Relu, &mut rng(seed)).unwrap()
}

/// Transfer set of `n` rows from `m` members with logits in `[-4, 4]`.
pub fn transfer(n: usize, m: usize, k: usize, seed: u64) -> TransferSet {
    let mut r = rng(seed);
    let logits = Array3::from_shape_fn((n, m, k), |_| r.random_range(-4.0..4.0));
    TransferSet::new(points(n, seed + 1), logits, vec![None; n], vec![false; n]).unwrap()
}

/// Row-normalised random probabilities.
pub fn probs(n: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let mut p = Array2::from_shape_fn((n, k), |_| r.random_range(0.01..1.0f64).powi(3));
    for mut row in p.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(points(10, 1), points(10, 1));
        assert_eq!(mlp(3, 2).params(), mlp(3, 2).params());
        let p = probs(20, 4, 3);
        assert!(p.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12));
        assert_eq!(transfer(5, 3, 3, 4).num_members(), 3);
    }
}
