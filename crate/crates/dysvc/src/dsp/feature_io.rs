//! Per-utterance feature cache files: magic `DYSF1`, then frame count and
//! dimension as 64-bit little-endian unsigned, then row-major 32-bit
//! little-endian floats.

use std::fs;
use std::path::Path;

use crate::dsp::{FeatureConfig, MelSpectrogram};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"DYSF1";

pub fn save_features(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(5 + 16 + mel.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(mel.frames() as u64).to_le_bytes());
    out.extend_from_slice(&(mel.dims() as u64).to_le_bytes());
    for &v in mel.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a cache file written by [`save_features`]. The analysis metadata
/// (hop, window, rate) is not stored in the file and comes from `cfg`.
pub fn load_features(path: impl AsRef<Path>, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::Integrity {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 21 || &bytes[0..5] != MAGIC {
        return Err(fail("bad magic; not a DYSF1 feature file"));
    }
    let t = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let need = 21 + t.checked_mul(d).and_then(|n| n.checked_mul(4)).ok_or_else(|| fail("size overflow"))?;
    if bytes.len() != need {
        return Err(fail("payload size does not match header"));
    }
    let data: Vec<f32> = bytes[21..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if !data.iter().all(|v| v.is_finite()) {
        return Err(fail("non-finite feature value"));
    }
    MelSpectrogram::new(
        t,
        d,
        data,
        cfg.hop_seconds(),
        cfg.window_seconds(),
        cfg.sample_rate,
    )
}
