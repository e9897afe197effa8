//! Seeded weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nncore::{Scalar, Tensor};

/// Glorot/Xavier uniform for a `fan_in x fan_out` weight matrix:
/// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<S: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, -limit, limit, rng)
}

pub fn uniform<S: Scalar>(
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<S> {
    let data = (0..rows * cols)
        .map(|_| S::from_f64(rng.random_range(lo..hi)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn glorot_respects_bound_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Tensor<f32> = glorot_uniform(64, 128, &mut rng);
        let limit = (6.0f32 / 192.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < limit));

        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let w2: Tensor<f32> = glorot_uniform(64, 128, &mut rng2);
        assert_eq!(w.data(), w2.data());
    }
}
