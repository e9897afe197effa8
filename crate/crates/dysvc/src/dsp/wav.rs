//! RIFF/WAVE loading and saving, PCM 16-bit mono only. Non-16 kHz audio is
//! resampled on load.

use std::fs;
use std::path::Path;

use crate::dsp::resample::resample;
use crate::dsp::Waveform;
use crate::error::{Error, Result};

const TARGET_RATE: u32 = 16_000;

fn wav_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Load a PCM 16-bit mono RIFF/WAVE file, resampling to 16 kHz if needed.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err(path, "not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(wav_err(path, "truncated chunk"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err(path, "fmt chunk too small"));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {} // skip LIST, fact, etc.
        }
        // chunks are word-aligned
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| wav_err(path, "missing fmt chunk"))?;
    if format != 1 {
        return Err(wav_err(path, format!("unsupported encoding {format} (PCM only)")));
    }
    if channels != 1 {
        return Err(wav_err(path, format!("unsupported channel count {channels}")));
    }
    if bits != 16 {
        return Err(wav_err(path, format!("unsupported bit depth {bits}")));
    }
    let data = data.ok_or_else(|| wav_err(path, "missing data chunk"))?;
    if data.len() < 2 {
        return Err(wav_err(path, "zero-length audio"));
    }
    let samples: Vec<f32> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();
    let wave = Waveform::new(samples, rate)?;
    if rate == TARGET_RATE {
        Ok(wave)
    } else {
        resample(&wave, TARGET_RATE)
    }
}

/// Save as PCM 16-bit mono at the waveform's own sample rate. Samples are
/// clamped to [-1, 1] before quantization.
pub fn save_wav(wave: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if wave.samples.is_empty() {
        return Err(Error::EmptyInput("refusing to write empty wav".into()));
    }
    let data_len = wave.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &wave.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| {
                    (0.8 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
                        as f32
                })
                .collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_within_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let wave = sine(440.0, 16_000, 1.0);
        save_wav(&wave, &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.len(), wave.len());
        let max_diff = wave
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff <= 1.0 / 32768.0, "max diff {max_diff}");
    }

    #[test]
    fn high_rate_input_is_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("48k.wav");
        let wave = sine(440.0, 48_000, 1.0);
        save_wav(&wave, &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert!((back.len() as isize - 16_000).unsigned_abs() <= 1);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        // hand-build a 2-channel header
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36u32 + 4).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes()); // stereo
        out.extend_from_slice(&16_000u32.to_le_bytes());
        out.extend_from_slice(&64_000u32.to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&path, out).unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(err.to_string().contains("channel count"), "{err}");
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not audio at all").unwrap();
        assert!(load_wav(&path).is_err());
    }
}
