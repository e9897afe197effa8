//! Mel-cepstral distortion over a DTW alignment.

use crate::dsp::MelCepstrum;
use crate::error::{Error, Result};
use crate::eval::dtw::dtw_align;

/// dB scaling constant `10 / ln 10`.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

/// DTW-align the two cepstral sequences on Euclidean frame distance, then
/// average `(10/ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2)` over the aligned
/// pairs. Lower is better; 0 means identical along the optimal path.
pub fn mcd(reference: &MelCepstrum, converted: &MelCepstrum) -> Result<f64> {
    if reference.order() != converted.order() {
        return Err(Error::Shape(format!(
            "cepstral order {} vs {}",
            reference.order(),
            converted.order()
        )));
    }
    let a: Vec<&[f64]> = (0..reference.frames()).map(|t| reference.row(t)).collect();
    let b: Vec<&[f64]> = (0..converted.frames()).map(|t| converted.row(t)).collect();
    let path = dtw_align(&a, &b, |x, y| euclidean(x, y))?;
    let total: f64 = path
        .pairs
        .iter()
        .map(|&(i, j)| {
            let ss: f64 = a[i]
                .iter()
                .zip(b[j])
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            MCD_SCALE * (2.0 * ss).sqrt()
        })
        .sum();
    Ok(total / path.pairs.len() as f64)
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cep(order: usize, rows: &[&[f64]]) -> MelCepstrum {
        let mut data = Vec::new();
        for r in rows {
            data.extend_from_slice(r);
        }
        MelCepstrum::new(rows.len(), order, data).unwrap()
    }

    #[test]
    fn identical_sequences_score_zero() {
        let a = cep(3, &[&[0.1, -0.4, 2.0], &[1.0, 0.0, -1.0]]);
        assert_eq!(mcd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn unit_difference_hand_value() {
        // order 1, every aligned pair differs by exactly 1:
        // (10/ln 10) * sqrt(2) = 6.1419...
        let a = cep(1, &[&[0.0], &[0.0], &[0.0]]);
        let b = cep(1, &[&[1.0], &[1.0], &[1.0]]);
        let got = mcd(&a, &b).unwrap();
        let want = 10.0 / 10f64.ln() * 2f64.sqrt();
        assert!((want - 6.1419).abs() < 1e-3);
        assert!((got - want).abs() < 1e-9, "{got}");
    }

    #[test]
    fn symmetric_for_equal_length_diagonal_alignments() {
        let a = cep(2, &[&[0.0, 0.0], &[5.0, 5.0]]);
        let b = cep(2, &[&[0.5, -0.5], &[5.5, 4.5]]);
        let ab = mcd(&a, &b).unwrap();
        let ba = mcd(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn order_mismatch_is_error() {
        let a = cep(2, &[&[0.0, 0.0]]);
        let b = cep(3, &[&[0.0, 0.0, 0.0]]);
        assert!(mcd(&a, &b).is_err());
    }

    #[test]
    fn nonnegative_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let ta = rng.random_range(1..6);
            let tb = rng.random_range(1..6);
            let mk = |rng: &mut rand_chacha::ChaCha8Rng, t: usize| {
                MelCepstrum::new(
                    t,
                    4,
                    (0..t * 4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                )
                .unwrap()
            };
            let a = mk(&mut rng, ta);
            let b = mk(&mut rng, tb);
            assert!(mcd(&a, &b).unwrap() >= 0.0);
        }
    }
}
