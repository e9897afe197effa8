//! Matrix kernels. The parallel variants split work by output row; each
//! row runs the same inner loop as the sequential code, so results are
//! bit-identical across both paths and any thread count.

use crate::nncore::Scalar;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_MIN_WORK: usize = 32 * 1024;

pub fn matmul_row<S: Scalar>(a_row: &[S], b: &[S], k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a_row.len(), k);
    debug_assert_eq!(out.len(), n);
    for o in out.iter_mut() {
        *o = S::zero();
    }
    for (p, &av) in a_row.iter().enumerate() {
        let b_row = &b[p * n..(p + 1) * n];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o = *o + av * bv;
        }
    }
}

/// `out[m x n] = a[m x k] * b[k x n]`, sequential.
pub fn matmul_seq<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        matmul_row(&a[i * k..(i + 1) * k], b, k, n, &mut out[i * n..(i + 1) * n]);
    }
}

/// Row-parallel variant of [`matmul_seq`].
#[cfg(feature = "parallel")]
pub fn matmul_par<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    use rayon::prelude::*;
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| matmul_row(&a[i * k..(i + 1) * k], b, k, n, row));
}

pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    #[cfg(feature = "parallel")]
    {
        if m * k * n >= PAR_MIN_WORK && m > 1 {
            matmul_par(a, b, m, k, n, out);
            return;
        }
    }
    matmul_seq(a, b, m, k, n, out);
}

pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_value() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut out = [0.0f64; 4];
        matmul_seq(&a, &b, 2, 2, 2, &mut out);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (m, k, n) = (61, 37, 53);
        let a: Vec<f32> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut seq = vec![0.0f32; m * n];
        let mut par = vec![0.0f32; m * n];
        matmul_seq(&a, &b, m, k, n, &mut seq);
        matmul_par(&a, &b, m, k, n, &mut par);
        assert!(seq.iter().zip(&par).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn transpose_round_trip() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let t = transpose(&a, 2, 3);
        assert_eq!(t, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = transpose(&t, 3, 2);
        assert_eq!(back, a.to_vec());
    }
}
