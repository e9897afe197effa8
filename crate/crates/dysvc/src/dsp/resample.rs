//! Windowed-sinc sample-rate conversion.

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Half-width of the sinc kernel in input samples.
const TAPS: isize = 32;
/// Cutoff margin below the target Nyquist to tame transition-band aliasing.
const ROLLOFF: f64 = 0.95;

/// Resample to `to_rate` with a Hann-windowed sinc kernel. The kernel is
/// renormalized per output sample so DC gain is exactly one; when
/// downsampling, the cutoff is placed at the target Nyquist.
pub fn resample(wave: &Waveform, to_rate: u32) -> Result<Waveform> {
    if to_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if wave.sample_rate == to_rate {
        return Ok(wave.clone());
    }
    if wave.samples.is_empty() {
        return Err(Error::EmptyInput("resample".into()));
    }
    let from = wave.sample_rate as f64;
    let to = to_rate as f64;
    let ratio = to / from;
    let out_len = (wave.samples.len() as f64 * ratio).round() as usize;
    let fc = 0.5 * ratio.min(1.0) * ROLLOFF; // cycles per input sample
    let x = &wave.samples;
    let n = x.len() as isize;

    let out: Vec<f32> = crate::par::map_range(0..out_len, |i| {
        let p = i as f64 / ratio; // position in input samples
        let center = p.floor() as isize;
        let mut acc = 0.0f64;
        let mut ksum = 0.0f64;
        for j in (center - TAPS + 1)..=(center + TAPS) {
            let u = p - j as f64;
            let w = 0.5 + 0.5 * (std::f64::consts::PI * u / TAPS as f64).cos();
            let k = 2.0 * fc * sinc(2.0 * fc * u) * w;
            ksum += k;
            if (0..n).contains(&j) {
                acc += k * x[j as usize] as f64;
            }
        }
        (acc / ksum) as f32
    });
    Waveform::new(out, to_rate)
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-12 {
        1.0
    } else {
        let pu = std::f64::consts::PI * u;
        pu.sin() / pu
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| {
                (0.8 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32
            })
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    fn zero_crossings(x: &[f32]) -> usize {
        x.windows(2)
            .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
            .count()
    }

    #[test]
    fn downsample_48k_preserves_duration_and_tone() {
        let src = sine(440.0, 48_000, 1.0);
        let out = resample(&src, 16_000).unwrap();
        assert_eq!(out.sample_rate, 16_000);
        assert!((out.len() as isize - 16_000).unsigned_abs() <= 1);
        // a 440 Hz tone crosses zero 880 times per second; allow edge slack
        let zc = zero_crossings(&out.samples);
        assert!((zc as isize - 880).abs() <= 4, "zero crossings {zc}");
    }

    #[test]
    fn upsample_preserves_tone() {
        let src = sine(440.0, 8_000, 0.5);
        let out = resample(&src, 16_000).unwrap();
        assert_eq!(out.len(), 8_000);
        let zc = zero_crossings(&out.samples);
        assert!((zc as isize - 440).abs() <= 4, "zero crossings {zc}");
    }

    #[test]
    fn identity_rate_is_a_clone() {
        let src = sine(100.0, 16_000, 0.1);
        let out = resample(&src, 16_000).unwrap();
        assert_eq!(src, out);
    }

    #[test]
    fn dc_gain_is_one() {
        let src = Waveform::new(vec![0.5; 4000], 48_000).unwrap();
        let out = resample(&src, 16_000).unwrap();
        // interior samples unaffected by edge truncation
        for &s in &out.samples[100..out.len() - 100] {
            assert!((s - 0.5).abs() < 1e-4, "{s}");
        }
    }
}
