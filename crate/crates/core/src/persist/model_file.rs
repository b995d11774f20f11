//! The `.uwm` model file.
//!
//! ```text
//! magic    "UWMODEL1"                      8 bytes
//! header   u32 layer count, then per layer:
//!            u8 tag (0 dense, 1 relu, 2 softmax, 3 dropout)
//!            dense:   u32 in_dim, u32 out_dim
//!            dropout: f64 rate
//! payload  per dense layer: row-major f64 weights (out x in), then f64 biases
//! trailer  u64 FNV-1a of header + payload
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{PersistError, Result};
use crate::nnengine::{Dense, Dropout, Layer, LayerKind, SequentialModel, StochasticMode};

pub const MAGIC: &[u8; 8] = b"UWMODEL1";
const TRAILER_LEN: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn encode_model(model: &SequentialModel) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        body.push(layer.kind().tag());
        match layer {
            Layer::Dense(d) => {
                body.extend_from_slice(&(d.in_dim() as u32).to_le_bytes());
                body.extend_from_slice(&(d.out_dim() as u32).to_le_bytes());
            }
            Layer::Dropout(d) => body.extend_from_slice(&d.rate().to_le_bytes()),
            Layer::Relu | Layer::Softmax => {}
        }
    }
    for d in model.dense_layers() {
        for w in d.weights().iter() {
            body.extend_from_slice(&w.to_le_bytes());
        }
        for b in d.biases().iter() {
            body.extend_from_slice(&b.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&body);
    let mut out = Vec::with_capacity(MAGIC.len() + body.len() + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&body);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Total file length, for error reporting.
    file_len: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(PersistError::Truncated {
                needed: MAGIC.len() + self.pos.saturating_add(n) + TRAILER_LEN,
                actual: self.file_len,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

enum Record {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    Softmax,
    Dropout(f64),
}

/// Decodes a `.uwm` image. The loaded model is stochastic (dropout bound to
/// its mode) and its dropout seed is the stored checksum.
pub fn decode_model(bytes: &[u8]) -> Result<SequentialModel> {
    let min = MAGIC.len() + 4 + TRAILER_LEN;
    if bytes.len() < MAGIC.len() {
        return Err(PersistError::Truncated {
            needed: min,
            actual: bytes.len(),
        });
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(PersistError::BadMagic);
    }
    // Everything after the magic; the trailer is split off once the header
    // tells us where the payload ends.
    let mut r = Reader {
        bytes: &bytes[MAGIC.len()..],
        pos: 0,
        file_len: bytes.len(),
    };
    let count = r.u32()? as usize;
    let mut records = Vec::new();
    let mut payload_len: usize = 0;
    for layer in 0..count {
        let tag = r.u8()?;
        let kind = LayerKind::from_tag(tag).ok_or(PersistError::UnknownTag { tag, layer })?;
        records.push(match kind {
            LayerKind::Dense => {
                let in_dim = r.u32()? as usize;
                let out_dim = r.u32()? as usize;
                let params = in_dim
                    .checked_mul(out_dim)
                    .and_then(|w| w.checked_add(out_dim))
                    .and_then(|p| p.checked_mul(8))
                    .ok_or(PersistError::Truncated {
                        needed: usize::MAX,
                        actual: bytes.len(),
                    })?;
                payload_len = payload_len.saturating_add(params);
                Record::Dense { in_dim, out_dim }
            }
            LayerKind::Relu => Record::Relu,
            LayerKind::Softmax => Record::Softmax,
            LayerKind::Dropout => Record::Dropout(r.f64()?),
        });
    }
    let header_len = r.pos;
    let expected = MAGIC
        .len()
        .saturating_add(header_len)
        .saturating_add(payload_len)
        .saturating_add(TRAILER_LEN);
    if bytes.len() < expected {
        return Err(PersistError::Truncated {
            needed: expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(PersistError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let body = &bytes[MAGIC.len()..expected - TRAILER_LEN];
    let stored = u64::from_le_bytes(bytes[expected - TRAILER_LEN..].try_into().expect("8 bytes"));
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(PersistError::Checksum { stored, computed });
    }

    let mode = StochasticMode::new();
    let mut layers = Vec::with_capacity(records.len());
    for rec in records {
        layers.push(match rec {
            Record::Dense { in_dim, out_dim } => {
                let weights = (0..in_dim * out_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let biases = (0..out_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Layer::Dense(Dense {
                    weights: Array2::from_shape_vec((out_dim, in_dim), weights)
                        .expect("length checked"),
                    biases: Array1::from(biases),
                })
            }
            Record::Relu => Layer::Relu,
            Record::Softmax => Layer::Softmax,
            Record::Dropout(rate) => Layer::Dropout(Dropout {
                rate,
                mode: Some(mode.clone()),
            }),
        });
    }
    Ok(SequentialModel::assemble(layers, mode, computed)?)
}

/// Writes the model to `path` (not atomically; see [`save_model_atomic`]).
pub fn save_model(model: &SequentialModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| PersistError::io(path, e))
}

/// Writes to a temporary sibling file, syncs it, then renames it over `path`.
pub fn save_model_atomic(model: &SequentialModel, path: &Path) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| PersistError::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_model(model))?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        PersistError::io(path, e)
    })
}

pub fn load_model(path: &Path) -> Result<SequentialModel> {
    let bytes = fs::read(path).map_err(|e| PersistError::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnengine::LayerSpec;
    use ndarray::array;

    fn fixture() -> SequentialModel {
        SequentialModel::build(
            vec![
                LayerSpec::dense(3, 5),
                LayerSpec::relu(),
                LayerSpec::dropout(0.25),
                LayerSpec::dense(5, 2),
                LayerSpec::softmax(),
            ],
            99,
        )
        .unwrap()
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn layout_is_as_documented() {
        let bytes = encode_model(&fixture());
        assert_eq!(&bytes[..8], b"UWMODEL1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(bytes[12], 0);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 5);
        assert_eq!(bytes[21], 1);
        assert_eq!(bytes[22], 3);
        assert_eq!(f64::from_le_bytes(bytes[23..31].try_into().unwrap()), 0.25);
        assert_eq!(bytes[31], 0);
        assert_eq!(bytes[40], 2);
        let header = 4 + 9 + 1 + 9 + 9 + 1;
        let payload = 8 * (15 + 5 + 10 + 2);
        assert_eq!(bytes.len(), 8 + header + payload + 8);
    }

    #[test]
    fn round_trip_preserves_forward() {
        let m = fixture();
        let back = decode_model(&encode_model(&m)).unwrap();
        let x = array![[0.3, -1.2, 4.0], [0.0, 0.0, 0.0]];
        assert_eq!(m.forward(x.view()).unwrap(), back.forward(x.view()).unwrap());
        assert!(back.is_stochastic());
        assert_eq!(encode_model(&back), encode_model(&m));
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = encode_model(&fixture());
        let i = bytes.len() - 20;
        bytes[i] ^= 0x01;
        assert!(matches!(decode_model(&bytes), Err(PersistError::Checksum { .. })));
    }

    #[test]
    fn rejection_kinds() {
        assert!(matches!(decode_model(&[]), Err(PersistError::Truncated { .. })));
        assert!(matches!(decode_model(b"NOTAMODELFILE"), Err(PersistError::BadMagic)));

        let bytes = encode_model(&fixture());
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 1]),
            Err(PersistError::Truncated { .. })
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode_model(&longer), Err(PersistError::LengthMismatch { .. })));

        let mut bad_tag = bytes.clone();
        bad_tag[21] = 9;
        assert!(matches!(
            decode_model(&bad_tag),
            Err(PersistError::UnknownTag { tag: 9, layer: 1 })
        ));
    }

    #[test]
    fn atomic_save_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.uwm");
        save_model_atomic(&fixture(), &path).unwrap();
        save_model_atomic(&fixture(), &path).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("m.uwm")]);
        assert_eq!(fs::read(&path).unwrap(), encode_model(&fixture()));
    }
}
