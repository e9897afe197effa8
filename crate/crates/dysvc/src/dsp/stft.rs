//! Short-time Fourier analysis/synthesis with a periodic Hann window and no
//! padding: `T = floor((N - window) / hop) + 1`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Complex STFT frames, `t x (fft/2+1)` (non-negative frequencies only).
pub struct Spectra {
    pub frames: Vec<Complex<f32>>,
    pub t: usize,
    pub bins: usize,
}

impl Spectra {
    pub fn row(&self, t: usize) -> &[Complex<f32>] {
        &self.frames[t * self.bins..(t + 1) * self.bins]
    }
}

pub fn hann_window(len: usize) -> Vec<f32> {
    (0..len)
        .map(|n| {
            let x = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
            (0.5 - 0.5 * x.cos()) as f32
        })
        .collect()
}

/// Frame count for unpadded analysis, or an error if the signal is shorter
/// than one window.
pub fn frame_count(samples: usize, window: usize, hop: usize) -> Result<usize> {
    if samples < window {
        return Err(Error::EmptyInput(format!(
            "signal of {samples} samples is shorter than one {window}-sample window"
        )));
    }
    Ok((samples - window) / hop + 1)
}

pub fn stft(samples: &[f32], window: usize, hop: usize, fft_size: usize) -> Result<Spectra> {
    debug_assert!(fft_size >= window);
    let t = frame_count(samples.len(), window, hop)?;
    let bins = fft_size / 2 + 1;
    let win = hann_window(window);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(fft_size);

    let rows: Vec<Vec<Complex<f32>>> = crate::par::map_range(0..t, |f| {
        let start = f * hop;
        let mut buf = vec![Complex::new(0.0f32, 0.0); fft_size];
        for n in 0..window {
            buf[n] = Complex::new(samples[start + n] * win[n], 0.0);
        }
        fft.process(&mut buf);
        buf.truncate(bins);
        buf
    });

    let mut frames = Vec::with_capacity(t * bins);
    for r in rows {
        frames.extend_from_slice(&r);
    }
    Ok(Spectra { frames, t, bins })
}

/// Overlap-add inverse with Hann synthesis window and squared-window
/// normalization. Output length is `(t - 1) * hop + window`.
pub fn istft(spec: &Spectra, window: usize, hop: usize, fft_size: usize) -> Vec<f32> {
    let win = hann_window(window);
    let ifft = FftPlanner::<f32>::new().plan_fft_inverse(fft_size);
    let out_len = if spec.t == 0 {
        0
    } else {
        (spec.t - 1) * hop + window
    };
    let mut acc = vec![0.0f64; out_len];
    let mut norm = vec![0.0f64; out_len];

    let frames: Vec<Vec<f32>> = crate::par::map_range(0..spec.t, |f| {
        let row = spec.row(f);
        let mut buf = vec![Complex::new(0.0f32, 0.0); fft_size];
        buf[..spec.bins].copy_from_slice(row);
        for k in 1..fft_size - spec.bins + 1 {
            buf[fft_size - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let scale = 1.0 / fft_size as f32;
        (0..window).map(|n| buf[n].re * scale * win[n]).collect()
    });

    for (f, frame) in frames.iter().enumerate() {
        let start = f * hop;
        for n in 0..window {
            acc[start + n] += frame[n] as f64;
            norm[start + n] += (win[n] as f64) * (win[n] as f64);
        }
    }
    acc.iter()
        .zip(&norm)
        .map(|(&a, &w)| if w > 1e-8 { (a / w) as f32 } else { 0.0 })
        .collect()
}
