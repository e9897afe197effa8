//! Audio front end: WAV ingestion, log-mel analysis, mel-cepstrum
//! extraction, and Griffin-Lim synthesis.
//!
//! Canonical analysis setup: 16 kHz audio, 80 mel bands over 80-7600 Hz
//! (HTK mel scale), 1024-sample Hann window with a 256-sample (16 ms) hop,
//! 1024-point FFT, power spectra, natural log with a 1e-10 floor, and no
//! padding, so `T = floor((N - window) / hop) + 1`.

pub mod feature_io;
pub mod griffin_lim;
pub mod mel;
pub mod resample;
pub mod stft;
pub mod wav;

pub use feature_io::{load_features, save_features};
pub use griffin_lim::{griffin_lim, griffin_lim_trace};
pub use mel::{logmel, mel_cepstrum, mel_filterbank, mel_to_magnitude, MelFilterbank};
pub use resample::resample;
pub use wav::{load_wav, save_wav};

use crate::error::{Error, Result};

/// Floor applied to mel energies before the natural log.
pub const LOG_FLOOR: f32 = 1e-10;

/// Per-dimension mean and standard deviation (floored at 1e-3) over the
/// frames of a set of spectrograms; the standard normalization statistics
/// for model front ends.
pub fn per_dim_stats<'a, I: IntoIterator<Item = &'a MelSpectrogram>>(
    mels: I,
    dim: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sum = vec![0.0f64; dim];
    let mut sumsq = vec![0.0f64; dim];
    let mut count = 0usize;
    for mel in mels {
        if mel.dims() != dim {
            return Err(Error::Shape(format!(
                "feature dim {} vs expected {}",
                mel.dims(),
                dim
            )));
        }
        for t in 0..mel.frames() {
            for (j, &v) in mel.row(t).iter().enumerate() {
                sum[j] += v as f64;
                sumsq[j] += (v as f64) * (v as f64);
            }
        }
        count += mel.frames();
    }
    if count == 0 {
        return Err(Error::EmptyInput("feature statistics".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|&s| s / count as f64).collect();
    let std: Vec<f64> = sum
        .iter()
        .zip(&sumsq)
        .map(|(&s, &sq)| {
            let m = s / count as f64;
            (sq / count as f64 - m * m).sqrt().max(1e-3)
        })
        .collect();
    Ok((mean, std))
}

/// Analysis parameters. `Default` is the canonical configuration above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub hop_samples: usize,
    pub window_samples: usize,
    pub fft_size: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 16_000,
            n_mels: 80,
            hop_samples: 256,
            window_samples: 1024,
            fft_size: 1024,
            fmin_hz: 80.0,
            fmax_hz: 7600.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        if self.n_mels < 2 {
            return Err(Error::InvalidArgument("need at least 2 mel bands".into()));
        }
        if self.hop_samples == 0 || self.window_samples == 0 {
            return Err(Error::InvalidArgument("hop/window must be positive".into()));
        }
        if self.fft_size < self.window_samples {
            return Err(Error::InvalidArgument(format!(
                "fft size {} < window {}",
                self.fft_size, self.window_samples
            )));
        }
        if !(self.fmin_hz < self.fmax_hz && self.fmax_hz <= self.sample_rate as f64 / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "need fmin < fmax <= nyquist, got {}..{} at {} Hz",
                self.fmin_hz, self.fmax_hz, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_samples as f64 / self.sample_rate as f64
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_samples as f64 / self.sample_rate as f64
    }
}

/// Mono audio in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite("waveform sample".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Scale so the peak magnitude is `peak` (no-op on silence).
    pub fn normalize_peak(&mut self, peak: f32) {
        let max = self.samples.iter().fold(0.0f32, |a, &s| a.max(s.abs()));
        if max > 0.0 {
            let k = peak / max;
            for s in &mut self.samples {
                *s *= k;
            }
        }
    }
}

/// `T x D` log-mel energies (natural log, floored).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    t: usize,
    d: usize,
    pub hop_seconds: f64,
    pub window_seconds: f64,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn new(
        t: usize,
        d: usize,
        data: Vec<f32>,
        hop_seconds: f64,
        window_seconds: f64,
        sample_rate: u32,
    ) -> Result<Self> {
        if t == 0 || d == 0 {
            return Err(Error::EmptyInput("mel spectrogram".into()));
        }
        if data.len() != t * d {
            return Err(Error::Shape(format!(
                "mel spectrogram: {} values for {}x{}",
                data.len(),
                t,
                d
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mel spectrogram".into()));
        }
        Ok(MelSpectrogram {
            data,
            t,
            d,
            hop_seconds,
            window_seconds,
            sample_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.d..(t + 1) * self.d]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// `T x C` cepstral coefficients `c_1..c_C` (energy term `c_0` dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct MelCepstrum {
    data: Vec<f64>,
    t: usize,
    order: usize,
}

impl MelCepstrum {
    pub fn new(t: usize, order: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != t * order {
            return Err(Error::Shape("cepstrum size".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cepstrum".into()));
        }
        Ok(MelCepstrum { data, t, order })
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.order..(t + 1) * self.order]
    }
}

/// `T x (fft/2+1)` nonnegative linear magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    data: Vec<f32>,
    t: usize,
    bins: usize,
    pub fft_size: usize,
    pub hop_samples: usize,
    pub window_samples: usize,
    pub sample_rate: u32,
}

impl MagnitudeSpectrogram {
    pub fn new(
        t: usize,
        bins: usize,
        data: Vec<f32>,
        fft_size: usize,
        hop_samples: usize,
        window_samples: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if data.len() != t * bins {
            return Err(Error::Shape("magnitude spectrogram size".into()));
        }
        if bins != fft_size / 2 + 1 {
            return Err(Error::Shape(format!(
                "{bins} bins does not match fft size {fft_size}"
            )));
        }
        if !data.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::NonFinite("magnitude spectrogram".into()));
        }
        Ok(MagnitudeSpectrogram {
            data,
            t,
            bins,
            fft_size,
            hop_samples,
            window_samples,
            sample_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}
