//! Mel filterbank, log-mel analysis, DCT cepstra, and the pseudo-inverse
//! that bridges mel features back to linear magnitudes for synthesis.

use crate::dsp::stft::{frame_count, stft};
use crate::dsp::{
    FeatureConfig, MagnitudeSpectrogram, MelCepstrum, MelSpectrogram, Waveform, LOG_FLOOR,
};
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels x (fft/2+1)`, rows ordered by center
/// frequency.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<f32>,
    n_mels: usize,
    bins: usize,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Band whose center frequency is nearest `hz`.
    pub fn nearest_band(&self, hz: f64) -> usize {
        (0..self.n_mels)
            .min_by(|&a, &b| {
                (self.centers_hz[a] - hz)
                    .abs()
                    .partial_cmp(&(self.centers_hz[b] - hz).abs())
                    .unwrap()
            })
            .unwrap()
    }

    /// Project one power-spectrum frame onto the mel bands.
    pub fn apply(&self, power: &[f32]) -> Vec<f32> {
        debug_assert_eq!(power.len(), self.bins);
        (0..self.n_mels)
            .map(|m| {
                self.row(m)
                    .iter()
                    .zip(power)
                    .map(|(&w, &p)| w * p)
                    .sum::<f32>()
            })
            .collect()
    }
}

pub fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank> {
    if n_mels < 2 {
        return Err(Error::InvalidArgument("need at least 2 mel bands".into()));
    }
    if !(fmin < fmax && fmax <= sample_rate as f64 / 2.0 && fmin >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= fmin < fmax <= nyquist, got {fmin}..{fmax} at {sample_rate} Hz"
        )));
    }
    let bins = fft_size / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    // n_mels + 2 edge points, equally spaced on the mel axis
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / fft_size as f64;

    let mut weights = vec![0.0f32; n_mels * bins];
    for m in 0..n_mels {
        let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        for k in 0..bins {
            let f = bin_hz(k);
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            weights[m * bins + k] = w as f32;
        }
    }
    Ok(MelFilterbank {
        weights,
        n_mels,
        bins,
        centers_hz: edges_hz[1..=n_mels].to_vec(),
    })
}

/// Log-mel analysis of a waveform that is already at the configured rate.
pub fn logmel(wave: &Waveform, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "waveform at {} Hz, analysis expects {}",
            wave.sample_rate, cfg.sample_rate
        )));
    }
    let t = frame_count(wave.samples.len(), cfg.window_samples, cfg.hop_samples)?;
    let fbank = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.sample_rate, cfg.fmin_hz, cfg.fmax_hz)?;
    let spec = stft(
        &wave.samples,
        cfg.window_samples,
        cfg.hop_samples,
        cfg.fft_size,
    )?;
    debug_assert_eq!(spec.t, t);

    let rows: Vec<Vec<f32>> = crate::par::map_range(0..t, |f| {
        let row = spec.row(f);
        let power: Vec<f32> = row.iter().map(|c| c.re * c.re + c.im * c.im).collect();
        fbank
            .apply(&power)
            .into_iter()
            .map(|e| e.max(LOG_FLOOR).ln())
            .collect()
    });
    let mut data = Vec::with_capacity(t * cfg.n_mels);
    for r in rows {
        data.extend_from_slice(&r);
    }
    MelSpectrogram::new(
        t,
        cfg.n_mels,
        data,
        cfg.hop_seconds(),
        cfg.window_seconds(),
        cfg.sample_rate,
    )
}

/// Orthonormal DCT-II of a frame.
pub fn dct_orthonormal(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    (0..n)
        .map(|k| {
            let a = if k == 0 { scale0 } else { scale };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(t, &v)| {
                    v * (std::f64::consts::PI * (2 * t + 1) as f64 * k as f64 / (2 * n) as f64)
                        .cos()
                })
                .sum();
            a * sum
        })
        .collect()
}

/// Inverse of [`dct_orthonormal`].
pub fn idct_orthonormal(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    (0..n)
        .map(|t| {
            (0..n)
                .map(|k| {
                    let a = if k == 0 { scale0 } else { scale };
                    a * c[k]
                        * (std::f64::consts::PI * (2 * t + 1) as f64 * k as f64 / (2 * n) as f64)
                            .cos()
                })
                .sum()
        })
        .collect()
}

/// Per-frame orthonormal DCT-II of the log-mel vector, keeping coefficients
/// `1..=order` (the energy coefficient `c_0` is dropped).
pub fn mel_cepstrum(mel: &MelSpectrogram, order: usize) -> Result<MelCepstrum> {
    let d = mel.dims();
    if order == 0 || order >= d {
        return Err(Error::InvalidArgument(format!(
            "cepstral order {order} must be in 1..{d}"
        )));
    }
    let rows: Vec<Vec<f64>> = crate::par::map_range(0..mel.frames(), |t| {
        let frame: Vec<f64> = mel.row(t).iter().map(|&v| v as f64).collect();
        let c = dct_orthonormal(&frame);
        c[1..=order].to_vec()
    });
    let mut data = Vec::with_capacity(mel.frames() * order);
    for r in rows {
        data.extend_from_slice(&r);
    }
    MelCepstrum::new(mel.frames(), order, data)
}

/// Dense symmetric positive-definite solver (Cholesky), used for the
/// mel-inversion normal equations.
struct SpdSolver {
    l: Vec<f64>,
    n: usize,
}

impl SpdSolver {
    fn factor(a: &[f64], n: usize) -> Result<Self> {
        let mut l = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "matrix not positive definite".into(),
                        ));
                    }
                    l[i * n + j] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(SpdSolver { l, n })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0f64; n];
        for i in 0..n {
            let mut s = b[i];
            for (lv, yv) in self.l[i * n..i * n + i].iter().zip(&y) {
                s -= lv * yv;
            }
            y[i] = s / self.l[i * n + i];
        }
        let mut x = vec![0.0f64; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for (k, xv) in x.iter().enumerate().skip(i + 1) {
                s -= self.l[k * n + i] * xv;
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }
}

/// Invert the mel projection: per frame, recover a nonnegative power
/// spectrum `p` with `F p ~ e` via the ridge-regularized minimum-norm
/// solution `p = F' (F F' + eps I)^{-1} e`, clamped at zero and refined by
/// projected-gradient steps; magnitudes are its square root.
pub fn mel_to_magnitude(mel: &MelSpectrogram, cfg: &FeatureConfig) -> Result<MagnitudeSpectrogram> {
    cfg.validate()?;
    if mel.dims() != cfg.n_mels {
        return Err(Error::Shape(format!(
            "{} mel bands vs filterbank with {}",
            mel.dims(),
            cfg.n_mels
        )));
    }
    let fbank = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.sample_rate, cfg.fmin_hz, cfg.fmax_hz)?;
    let n = cfg.n_mels;
    let bins = fbank.bins();

    // gram = F F' + eps I  (n x n)
    let mut gram = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = fbank
                .row(i)
                .iter()
                .zip(fbank.row(j))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            gram[i * n + j] = dot;
            gram[j * n + i] = dot;
        }
    }
    for i in 0..n {
        gram[i * n + i] += 1e-6;
    }
    let solver = SpdSolver::factor(&gram, n)?;

    // Lipschitz bound for the projected-gradient steps: ||F||_F^2
    let lip: f64 = (0..n)
        .map(|m| {
            fbank
                .row(m)
                .iter()
                .map(|&w| (w as f64) * (w as f64))
                .sum::<f64>()
        })
        .sum();
    let step = 1.0 / lip.max(1e-12);

    let rows: Vec<Vec<f32>> = crate::par::map_range(0..mel.frames(), |t| {
        let e: Vec<f64> = mel.row(t).iter().map(|&v| (v as f64).exp()).collect();
        let alpha = solver.solve(&e);
        // p = F' alpha, clamped
        let mut p = vec![0.0f64; bins];
        for (m, &a) in alpha.iter().enumerate() {
            for (k, &w) in fbank.row(m).iter().enumerate() {
                p[k] += w as f64 * a;
            }
        }
        for v in p.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        // projected gradient on ||F p - e||^2 with p >= 0
        for _ in 0..40 {
            let mut r = vec![0.0f64; n];
            for m in 0..n {
                r[m] = fbank
                    .row(m)
                    .iter()
                    .zip(&p)
                    .map(|(&w, &pv)| w as f64 * pv)
                    .sum::<f64>()
                    - e[m];
            }
            for (k, pv) in p.iter_mut().enumerate() {
                let mut g = 0.0f64;
                for (m, &rv) in r.iter().enumerate() {
                    let w = fbank.row(m)[k] as f64;
                    if w != 0.0 {
                        g += w * rv;
                    }
                }
                *pv = (*pv - 2.0 * step * g).max(0.0);
            }
        }
        p.into_iter().map(|v| v.sqrt() as f32).collect()
    });
    let mut data = Vec::with_capacity(mel.frames() * bins);
    for r in rows {
        data.extend_from_slice(&r);
    }
    MagnitudeSpectrogram::new(
        mel.frames(),
        bins,
        data,
        cfg.fft_size,
        cfg.hop_samples,
        cfg.window_samples,
        cfg.sample_rate,
    )
}

/// Mel projection of an existing magnitude spectrogram (power domain, log
/// floored) — the analysis half of the round trip.
pub fn magnitude_to_logmel(mag: &MagnitudeSpectrogram, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    let fbank = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.sample_rate, cfg.fmin_hz, cfg.fmax_hz)?;
    if mag.bins() != fbank.bins() {
        return Err(Error::Shape("magnitude bins vs filterbank".into()));
    }
    let rows: Vec<Vec<f32>> = crate::par::map_range(0..mag.frames(), |t| {
        let power: Vec<f32> = mag.row(t).iter().map(|&m| m * m).collect();
        fbank
            .apply(&power)
            .into_iter()
            .map(|e| e.max(LOG_FLOOR).ln())
            .collect()
    });
    let mut data = Vec::with_capacity(mag.frames() * cfg.n_mels);
    for r in rows {
        data.extend_from_slice(&r);
    }
    MelSpectrogram::new(
        mag.frames(),
        cfg.n_mels,
        data,
        cfg.hop_seconds(),
        cfg.window_seconds(),
        cfg.sample_rate,
    )
}
