//! Checkpoint files for both encoder kinds.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "DENCKPT1"
//! 8       4     format version (currently 1)
//! 12      1     model kind: 0 = dual encoder, 1 = cross encoder
//! 13      4     vocab_size
//! 17      4     d_emb
//! 21      4     d (dual) or d_hidden (cross)
//! 25      …     parameters: every tensor in ParamTensors order, f64 LE
//! ```
//!
//! Serialization is a pure function of the parameters, so identical training
//! runs produce byte-identical checkpoint files. The **fingerprint** of a
//! checkpoint is the lowercase SHA-256 hex of the entire file; downstream
//! artifacts (indexes) embed it so a model/index mismatch is caught at load
//! time rather than as silently wrong scores.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::encoder::{
    CrossDims, CrossEncoderParams, DualDims, DualEncoderParams, ParamTensors,
};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DENCKPT1";
pub const VERSION: u32 = 1;

const KIND_DUAL: u8 = 0;
const KIND_CROSS: u8 = 1;

/// Loaded dual encoder plus the fingerprint of the file it came from.
#[derive(Debug, Clone)]
pub struct DualCheckpoint {
    pub params: DualEncoderParams,
    pub fingerprint: String,
}

/// Loaded cross encoder plus the fingerprint of the file it came from.
#[derive(Debug, Clone)]
pub struct CrossCheckpoint {
    pub params: CrossEncoderParams,
    pub fingerprint: String,
}

/// Lowercase SHA-256 hex digest.
pub fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn check_finite<P: ParamTensors>(params: &P, what: &str) -> Result<()> {
    for (ti, tensor) in params.tensors().iter().enumerate() {
        for (k, &w) in tensor.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::non_finite(format!(
                    "{what} parameter tensor {ti} element {k} is {w}"
                )));
            }
        }
    }
    Ok(())
}

fn serialize<P: ParamTensors>(kind: u8, vocab_size: u32, d_emb: u32, third: u32, params: &P) -> Vec<u8> {
    let payload_len: usize = params.tensors().iter().map(|t| t.len()).sum();
    let mut buf = Vec::with_capacity(25 + 8 * payload_len);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind);
    buf.extend_from_slice(&vocab_size.to_le_bytes());
    buf.extend_from_slice(&d_emb.to_le_bytes());
    buf.extend_from_slice(&third.to_le_bytes());
    for tensor in params.tensors() {
        for &w in tensor {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    buf
}

pub fn dual_to_bytes(params: &DualEncoderParams) -> Result<Vec<u8>> {
    check_finite(params, "dual encoder")?;
    Ok(serialize(
        KIND_DUAL,
        params.dims.vocab_size,
        params.dims.d_emb as u32,
        params.dims.d as u32,
        params,
    ))
}

pub fn cross_to_bytes(params: &CrossEncoderParams) -> Result<Vec<u8>> {
    check_finite(params, "cross encoder")?;
    Ok(serialize(
        KIND_CROSS,
        params.dims.vocab_size,
        params.dims.d_emb as u32,
        params.dims.d_hidden as u32,
        params,
    ))
}

/// Writes the checkpoint and returns its fingerprint.
pub fn save_dual(path: &Path, params: &DualEncoderParams) -> Result<String> {
    let bytes = dual_to_bytes(params)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(fingerprint(&bytes))
}

/// Writes the checkpoint and returns its fingerprint.
pub fn save_cross(path: &Path, params: &CrossEncoderParams) -> Result<String> {
    let bytes = cross_to_bytes(params)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(fingerprint(&bytes))
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                context: format!(
                    "needed {n} bytes for {what}, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64_into(&mut self, out: &mut [f64], what: &str) -> Result<()> {
        let raw = self.take(8 * out.len(), what)?;
        for (x, chunk) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::invalid(format!(
                "{}: {} trailing bytes after checkpoint payload",
                self.path.display(),
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Parses the common header; returns (kind, vocab_size, d_emb, third dim).
fn read_header<'a>(reader: &mut Reader<'a>) -> Result<(u8, u32, u32, u32)> {
    let magic = reader.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: reader.path.to_path_buf(),
            expected: "a checkpoint file",
        });
    }
    let version = reader.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: reader.path.to_path_buf(),
            kind: "checkpoint",
            found: version,
            supported: VERSION,
        });
    }
    let kind = reader.take(1, "model kind")?[0];
    let vocab_size = reader.u32("vocab_size")?;
    let d_emb = reader.u32("d_emb")?;
    let third = reader.u32("model width")?;
    if vocab_size < 2 || d_emb == 0 || third == 0 {
        return Err(Error::invalid(format!(
            "{}: nonsensical checkpoint dimensions (vocab_size {vocab_size}, d_emb {d_emb}, width {third})",
            reader.path.display()
        )));
    }
    Ok((kind, vocab_size, d_emb, third))
}

pub fn load_dual(path: &Path) -> Result<DualCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader {
        path,
        buf: &bytes,
        pos: 0,
    };
    let (kind, vocab_size, d_emb, d) = read_header(&mut reader)?;
    if kind != KIND_DUAL {
        return Err(Error::invalid(format!(
            "{}: checkpoint holds a cross encoder, expected a dual encoder",
            path.display()
        )));
    }
    let dims = DualDims {
        vocab_size,
        d_emb: d_emb as usize,
        d: d as usize,
    };
    let mut params = DualEncoderParams::zeros(dims);
    for tensor in params.tensors_mut() {
        reader.f64_into(tensor, "dual parameters")?;
    }
    reader.done()?;
    check_finite(&params, &format!("{}: dual encoder", path.display()))?;
    Ok(DualCheckpoint {
        params,
        fingerprint: fingerprint(&bytes),
    })
}

pub fn load_cross(path: &Path) -> Result<CrossCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader {
        path,
        buf: &bytes,
        pos: 0,
    };
    let (kind, vocab_size, d_emb, d_hidden) = read_header(&mut reader)?;
    if kind != KIND_CROSS {
        return Err(Error::invalid(format!(
            "{}: checkpoint holds a dual encoder, expected a cross encoder",
            path.display()
        )));
    }
    let dims = CrossDims {
        vocab_size,
        d_emb: d_emb as usize,
        d_hidden: d_hidden as usize,
    };
    let mut params = CrossEncoderParams::zeros(dims);
    for tensor in params.tensors_mut() {
        reader.f64_into(tensor, "cross parameters")?;
    }
    reader.done()?;
    check_finite(&params, &format!("{}: cross encoder", path.display()))?;
    Ok(CrossCheckpoint {
        params,
        fingerprint: fingerprint(&bytes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{CrossDims, DualDims};

    fn dual_params() -> DualEncoderParams {
        DualEncoderParams::init(
            DualDims {
                vocab_size: 20,
                d_emb: 4,
                d: 3,
            },
            42,
        )
    }

    #[test]
    fn dual_round_trip_is_exact_and_fingerprinted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = dual_params();
        let fp_saved = save_dual(&path, &params).unwrap();
        let loaded = load_dual(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.fingerprint, fp_saved);
        assert_eq!(fp_saved.len(), 64);
        assert!(fp_saved.chars().all(|c| c.is_ascii_hexdigit()));

        // Saving the identical parameters elsewhere gives identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        let fp2 = save_dual(&path2, &params).unwrap();
        assert_eq!(fp_saved, fp2);
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn cross_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cross.ckpt");
        let params = CrossEncoderParams::init(
            CrossDims {
                vocab_size: 16,
                d_emb: 5,
                d_hidden: 4,
            },
            7,
        );
        let fp = save_cross(&path, &params).unwrap();
        let loaded = load_cross(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.fingerprint, fp);
    }

    #[test]
    fn kind_mismatch_is_a_clear_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_dual(&path, &dual_params()).unwrap();
        let err = load_cross(&path).unwrap_err();
        assert!(err.to_string().contains("expected a cross encoder"), "{err}");
    }

    #[test]
    fn corrupt_files_fail_with_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_dual(&path, &dual_params()).unwrap();
        let good = fs::read(&path).unwrap();

        // Wrong magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_dual(&path).unwrap_err(),
            Error::BadMagic { .. }
        ));

        // Unsupported version.
        let mut bad = good.clone();
        bad[8] = 99;
        fs::write(&path, &bad).unwrap();
        match load_dual(&path).unwrap_err() {
            Error::UnsupportedVersion { found, .. } => assert_eq!(found, 99),
            other => panic!("expected version error, got {other}"),
        }

        // Truncation.
        fs::write(&path, &good[..good.len() - 5]).unwrap();
        assert!(matches!(
            load_dual(&path).unwrap_err(),
            Error::Truncated { .. }
        ));

        // Trailing garbage.
        let mut bad = good.clone();
        bad.push(0);
        fs::write(&path, &bad).unwrap();
        let err = load_dual(&path).unwrap_err();
        assert!(err.to_string().contains("trailing bytes"), "{err}");
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut params = dual_params();
        params.question.bias[0] = f64::NAN;
        assert!(matches!(
            save_dual(&path, &params).unwrap_err(),
            Error::NonFinite(_)
        ));

        // Smuggle a NaN into an otherwise valid file: loading must fail too.
        let good = dual_to_bytes(&dual_params()).unwrap();
        let mut bad = good.clone();
        let nan = f64::NAN.to_le_bytes();
        bad[25..33].copy_from_slice(&nan);
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_dual(&path).unwrap_err(),
            Error::NonFinite(_)
        ));
    }

    #[test]
    fn fingerprint_changes_with_any_parameter() {
        let a = dual_to_bytes(&dual_params()).unwrap();
        let mut params = dual_params();
        params.passage.bias[2] += 1e-12;
        let b = dual_to_bytes(&params).unwrap();
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_eq!(fingerprint(&a), fingerprint(&a.clone()));
    }
}
