//! Binary checkpoint files.
//!
//! Layout (all integers little-endian u64):
//!
//! ```text
//! magic  b"DYSVC1"
//! count  u64                      number of parameter records
//! repeat count times, name-sorted:
//!   name_len u64, name bytes (UTF-8)
//!   rows u64, cols u64
//!   rows*cols f32 values, little-endian, row-major
//! ```
//!
//! Records are sorted by name before writing so that identical parameter
//! sets always produce byte-identical files. Any structural defect on load
//! reports [`Error::Integrity`], which maps to exit code 3.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nncore::{ExportedParam, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"DYSVC1";

/// One named matrix: `(name, rows, cols, row-major values)`.
pub type ParamRecord = (String, usize, usize, Vec<f32>);

fn integrity(path: &Path, msg: impl Into<String>) -> Error {
    Error::Integrity {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Serialize parameter records to `path`. Values are stored as f32
/// regardless of the training scalar type.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &[ParamRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut sorted: Vec<&ParamRecord> = params.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::DuplicateParameter(w[0].0.clone()));
        }
    }
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(sorted.len() as u64).to_le_bytes());
    for (name, rows, cols, values) in sorted {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "checkpoint record {name}: {rows}x{cols} header but {} values",
                values.len()
            )));
        }
        bytes.extend_from_slice(&(name.len() as u64).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(*rows as u64).to_le_bytes());
        bytes.extend_from_slice(&(*cols as u64).to_le_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| {
            integrity(self.path, format!("length overflow while reading {what}"))
        })?;
        if end > self.bytes.len() {
            return Err(integrity(
                self.path,
                format!(
                    "truncated file: need {n} bytes for {what} at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let raw = self.take(8, what)?;
        Ok(u64::from_le_bytes(raw.try_into().expect("8-byte slice")))
    }
}

/// Read a checkpoint back as f32 records, sorted by name.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<ParamRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let magic = r.take(CHECKPOINT_MAGIC.len(), "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(integrity(
            path,
            format!("bad magic {magic:02x?}, expected {CHECKPOINT_MAGIC:02x?}"),
        ));
    }
    let count = r.u64("record count")?;
    let mut out = Vec::new();
    let mut prev_name: Option<String> = None;
    for i in 0..count {
        let name_len = r.u64("name length")? as usize;
        let name_bytes = r.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| integrity(path, format!("record {i}: name is not UTF-8")))?
            .to_string();
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(integrity(
                    path,
                    format!("records out of order: {prev:?} then {name:?}"),
                ));
            }
        }
        let rows = r.u64("rows")? as usize;
        let cols = r.u64("cols")? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| {
            integrity(path, format!("record {name}: {rows}x{cols} overflows"))
        })?;
        let raw = r.take(n * 4, "values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        prev_name = Some(name.clone());
        out.push((name, rows, cols, values));
    }
    if r.pos != bytes.len() {
        return Err(integrity(
            path,
            format!("{} trailing bytes after last record", bytes.len() - r.pos),
        ));
    }
    Ok(out)
}

/// Convert an engine's exported parameters (any scalar) to f32 records.
pub fn records_from_params<S: Scalar>(params: Vec<ExportedParam<S>>) -> Vec<ParamRecord> {
    params
        .into_iter()
        .map(|(name, rows, cols, values)| {
            let v32: Vec<f32> = values.into_iter().map(|v| v.to_f64() as f32).collect();
            (name, rows, cols, v32)
        })
        .collect()
}

/// Convert f32 records to a target scalar for `Engine::import_params`.
pub fn records_to_params<S: Scalar>(records: Vec<ParamRecord>) -> Vec<ExportedParam<S>> {
    records
        .into_iter()
        .map(|(name, rows, cols, values)| {
            let vs: Vec<S> = values.into_iter().map(|v| S::from_f64(v as f64)).collect();
            (name, rows, cols, vs)
        })
        .collect()
}

/// Sidecar file recording which configuration produced a checkpoint.
pub fn write_sidecar_hash(checkpoint: &Path, hash: &str) -> Result<()> {
    let side = sidecar_path(checkpoint);
    std::fs::write(&side, format!("{hash}\n")).map_err(|e| Error::io(&side, e))
}

/// Read the sidecar hash if both the checkpoint and its sidecar exist.
pub fn read_sidecar_hash(checkpoint: &Path) -> Option<String> {
    if !checkpoint.is_file() {
        return None;
    }
    let side = sidecar_path(checkpoint);
    std::fs::read_to_string(side)
        .ok()
        .map(|s| s.trim().to_string())
}

fn sidecar_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut os = checkpoint.as_os_str().to_os_string();
    os.push(".meta");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Engine;

    fn sample_records() -> Vec<ParamRecord> {
        vec![
            ("b.weight".into(), 2, 3, vec![1.0, -2.5, 0.0, 4.0, 5.5, -6.0]),
            ("a.bias".into(), 1, 2, vec![0.25, -0.75]),
        ]
    }

    #[test]
    fn round_trip_preserves_values_and_sorts_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dysvc");
        save_checkpoint(&path, &sample_records()).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a.bias");
        assert_eq!(back[1].0, "b.weight");
        assert_eq!(back[1].3, vec![1.0, -2.5, 0.0, 4.0, 5.5, -6.0]);
    }

    #[test]
    fn input_order_does_not_change_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let fwd = dir.path().join("fwd.dysvc");
        let rev = dir.path().join("rev.dysvc");
        let mut records = sample_records();
        save_checkpoint(&fwd, &records).unwrap();
        records.reverse();
        save_checkpoint(&rev, &records).unwrap();
        assert_eq!(
            std::fs::read(&fwd).unwrap(),
            std::fs::read(&rev).unwrap()
        );
    }

    #[test]
    fn engine_params_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.dysvc");
        let mut eng: Engine<f32> = Engine::new();
        eng.add_param(
            "layer.w",
            crate::nncore::Tensor::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            true,
        )
        .unwrap();
        eng.add_param(
            "layer.b",
            crate::nncore::Tensor::from_vec(1, 2, vec![-0.5, 0.5]).unwrap(),
            true,
        )
        .unwrap();
        let exported = eng.export_params();
        save_checkpoint(&path, &records_from_params(exported.clone())).unwrap();

        // Restoring targets a freshly constructed model with the same
        // parameter names; here we construct the engine the same way.
        let mut fresh: Engine<f32> = Engine::new();
        fresh.load_param("layer.w", 2, 2, vec![0.0; 4]).unwrap_err();
        fresh
            .add_param("layer.w", crate::nncore::Tensor::zeros(2, 2), true)
            .unwrap();
        fresh
            .add_param("layer.b", crate::nncore::Tensor::zeros(1, 2), true)
            .unwrap();
        fresh
            .import_params(&records_to_params::<f32>(load_checkpoint(&path).unwrap()))
            .unwrap();
        assert_eq!(fresh.export_params(), exported);
    }

    #[test]
    fn bad_magic_is_integrity_exit_code_3() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dysvc");
        std::fs::write(&path, b"NOTDYS\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn truncated_file_is_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.dysvc");
        save_checkpoint(&path, &sample_records()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }), "{err}");
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn trailing_bytes_are_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.dysvc");
        save_checkpoint(&path, &sample_records()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"garbage");
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn out_of_order_records_are_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("order.dysvc");
        // Hand-build a file with records in reverse order.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&2u64.to_le_bytes());
        for name in ["zz", "aa"] {
            bytes.extend_from_slice(&(name.len() as u64).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&1u64.to_le_bytes());
            bytes.extend_from_slice(&1u64.to_le_bytes());
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("out of order"), "{err}");
    }

    #[test]
    fn sidecar_hash_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dysvc");
        assert_eq!(read_sidecar_hash(&path), None);
        save_checkpoint(&path, &sample_records()).unwrap();
        assert_eq!(read_sidecar_hash(&path), None);
        write_sidecar_hash(&path, "abc123").unwrap();
        assert_eq!(read_sidecar_hash(&path), Some("abc123".to_string()));
    }
}
