//! Griffin-Lim phase reconstruction (plain alternating projections, no
//! momentum) with a seeded random phase initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::dsp::stft::{istft, stft, Spectra};
use crate::dsp::{MagnitudeSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Reconstruct a waveform from a magnitude spectrogram.
pub fn griffin_lim(mag: &MagnitudeSpectrogram, iterations: usize, seed: u64) -> Result<Waveform> {
    Ok(griffin_lim_trace(mag, iterations, seed)?.0)
}

/// As [`griffin_lim`], also returning the spectral-convergence error
/// `|| |STFT(x)| - M ||_F / ||M||_F` measured after every iteration.
pub fn griffin_lim_trace(
    mag: &MagnitudeSpectrogram,
    iterations: usize,
    seed: u64,
) -> Result<(Waveform, Vec<f64>)> {
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "griffin-lim needs at least one iteration".into(),
        ));
    }
    let t = mag.frames();
    let bins = mag.bins();
    let window = mag.window_samples;
    let hop = mag.hop_samples;
    let fft_size = mag.fft_size;

    let mag_norm: f64 = mag
        .data()
        .iter()
        .map(|&m| (m as f64) * (m as f64))
        .sum::<f64>()
        .sqrt();
    let out_len = if t == 0 { 0 } else { (t - 1) * hop + window };
    if mag_norm == 0.0 {
        // all-zero magnitude: silence, by definition
        return Ok((
            Waveform::new(vec![0.0; out_len], mag.sample_rate)?,
            vec![0.0; iterations],
        ));
    }

    // random phase init; DC and Nyquist stay real
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(t * bins);
    for f in 0..t {
        let row = mag.row(f);
        for (k, &m) in row.iter().enumerate() {
            let phase = if k == 0 || k == bins - 1 {
                0.0
            } else {
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
            };
            frames.push(Complex::new(
                m * phase.cos() as f32,
                m * phase.sin() as f32,
            ));
        }
    }
    let mut spec = Spectra { frames, t, bins };

    let mut errors = Vec::with_capacity(iterations);
    let mut wave = vec![0.0f32; out_len];
    for _ in 0..iterations {
        wave = istft(&spec, window, hop, fft_size);
        let re = stft(&wave, window, hop, fft_size)?;
        let mut diff = 0.0f64;
        for (c, &m) in re.frames.iter().zip(mag.data()) {
            let d = c.norm() as f64 - m as f64;
            diff += d * d;
        }
        errors.push(diff.sqrt() / mag_norm);
        // project back onto the magnitude constraint, keeping the new phase
        for (slot, (c, &m)) in spec.frames.iter_mut().zip(re.frames.iter().zip(mag.data())) {
            let n = c.norm();
            *slot = if n > 0.0 {
                c * (m / n)
            } else {
                Complex::new(m, 0.0)
            };
        }
    }
    Ok((Waveform::new(wave, mag.sample_rate)?, errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft::stft;
    use crate::dsp::FeatureConfig;

    fn magnitude_of(x: &[f32], cfg: &FeatureConfig) -> MagnitudeSpectrogram {
        let spec = stft(x, cfg.window_samples, cfg.hop_samples, cfg.fft_size).unwrap();
        let data: Vec<f32> = spec.frames.iter().map(|c| c.norm()).collect();
        MagnitudeSpectrogram::new(
            spec.t,
            spec.bins,
            data,
            cfg.fft_size,
            cfg.hop_samples,
            cfg.window_samples,
            cfg.sample_rate,
        )
        .unwrap()
    }

    #[test]
    fn sine_converges_below_point_one() {
        let cfg = FeatureConfig::default();
        let x: Vec<f32> = (0..8000)
            .map(|i| {
                (0.6 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin()) as f32
            })
            .collect();
        let mag = magnitude_of(&x, &cfg);
        let (_, errors) = griffin_lim_trace(&mag, 60, 7).unwrap();
        let last = *errors.last().unwrap();
        assert!(last < 0.1, "final spectral convergence {last}");
        assert!(last <= errors[0]);
    }

    #[test]
    fn zero_magnitude_gives_silence() {
        let cfg = FeatureConfig::default();
        let mag = MagnitudeSpectrogram::new(
            4,
            cfg.bins(),
            vec![0.0; 4 * cfg.bins()],
            cfg.fft_size,
            cfg.hop_samples,
            cfg.window_samples,
            cfg.sample_rate,
        )
        .unwrap();
        let wave = griffin_lim(&mag, 5, 1).unwrap();
        assert!(wave.samples.iter().all(|&s| s == 0.0));
        assert_eq!(wave.len(), 3 * 256 + 1024);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = FeatureConfig::default();
        let x: Vec<f32> = (0..4096)
            .map(|i| ((i % 101) as f32 / 101.0 - 0.5) * 0.4)
            .collect();
        let mag = magnitude_of(&x, &cfg);
        let a = griffin_lim(&mag, 8, 3).unwrap();
        let b = griffin_lim(&mag, 8, 3).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = griffin_lim(&mag, 8, 4).unwrap();
        assert_ne!(a.samples, c.samples);
    }
}
