//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "WFTNET01"
//! meta_len     u64 LE
//! meta         meta_len bytes of UTF-8 JSON (CheckpointMeta)
//! per parameter, in ModelParams::named order:
//!   name_len   u64 LE
//!   name       name_len bytes UTF-8
//!   rank       u64 LE
//!   dims       rank x u64 LE
//!   values     prod(dims) x f64 LE
//! ```
//!
//! Nothing may follow the last parameter.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WftError};
use crate::model::{ModelConfig, ModelParams, NormStats, WftNet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"WFTNET01";
const MAGIC_FAMILY: &[u8; 6] = b"WFTNET";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Dataset-level scaling fitted on the training split, if any.
    #[serde(default)]
    pub standardization: Option<NormStats>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: WftNet,
    pub standardization: Option<NormStats>,
}

pub fn encode(model: &WftNet, standardization: Option<&NormStats>) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        config: model.config().clone(),
        standardization: standardization.cloned(),
    };
    let json = serde_json::to_vec(&meta)
        .map_err(|e| WftError::Format(format!("cannot serialise metadata: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in model.params.named() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(WftError::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| WftError::Format(format!("{what} {v} is too large")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        if magic.starts_with(MAGIC_FAMILY) {
            return Err(WftError::Version(
                String::from_utf8_lossy(&magic[6..]).into_owned(),
            ));
        }
        return Err(WftError::Format("bad magic bytes".into()));
    }
    let meta_len = r.len("metadata length")?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| WftError::Format(format!("metadata: {e}")))?;
    meta.config
        .validate()
        .map_err(|e| WftError::Validation(format!("stored configuration: {e}")))?;

    let mut params = ModelParams::zeros(&meta.config)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    for ((want_name, want_shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let name_len = r.len("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| WftError::Format("parameter name is not UTF-8".into()))?;
        if name != want_name {
            return Err(WftError::Validation(format!(
                "expected parameter {want_name}, found {name}"
            )));
        }
        let rank = r.len("rank")?;
        let dims = (0..rank)
            .map(|_| r.len("dimension"))
            .collect::<Result<Vec<_>>>()?;
        if &dims != want_shape {
            return Err(WftError::Validation(format!(
                "parameter {name}: configuration implies shape {want_shape:?}, file has {dims:?}"
            )));
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 8, name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *slot = Tensor::new(&dims, data)?.with_grad();
    }
    if r.pos != bytes.len() {
        return Err(WftError::Format(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - r.pos
        )));
    }
    if let Some(s) = &meta.standardization {
        if s.mean.len() != meta.config.channels || s.std.len() != meta.config.channels {
            return Err(WftError::Validation(
                "standardization statistics do not match the channel count".into(),
            ));
        }
    }
    Ok(Checkpoint {
        model: WftNet::from_parts(meta.config, params)?,
        standardization: meta.standardization,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| WftError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| WftError::io(path, e))?;
    tmp.persist(path).map_err(|e| WftError::io(path, e.error))?;
    Ok(())
}

pub fn save_checkpoint(
    model: &WftNet,
    standardization: Option<&NormStats>,
    path: &Path,
) -> Result<()> {
    write_atomic(path, &encode(model, standardization)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| WftError::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;

    fn model() -> WftNet {
        let cfg = ModelConfig {
            d_model: 3,
            layers: 2,
            top_k: 2,
            ..ModelConfig::new(16, 8, 2)
        };
        WftNet::new(cfg, &mut RngState::new(42)).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let m = model();
        let stats = NormStats {
            mean: vec![0.1, 1.0 / 3.0],
            std: vec![2.5, 1e-5],
        };
        let bytes = encode(&m, Some(&stats)).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.model.config(), m.config());
        assert_eq!(back.standardization.as_ref(), Some(&stats));
        for ((_, a), (_, b)) in m.params.named().iter().zip(back.model.params.named()) {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode(&back.model, Some(&stats)).unwrap(), bytes);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode(&model(), None).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(WftError::Format(_))));
        let mut bytes = encode(&model(), None).unwrap();
        bytes[7] = b'9';
        assert!(matches!(decode(&bytes), Err(WftError::Version(_))));
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode(&model(), None).unwrap();
        for cut in [4, 12, 40, bytes.len() - 3] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(WftError::Truncated(_))),
                "cut at {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(WftError::Format(_))));
    }

    #[test]
    fn config_disagreeing_with_shapes() {
        let m = model();
        let bytes = encode(&m, None).unwrap();
        // rewrite the metadata with a different embedding width
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut meta: CheckpointMeta = serde_json::from_slice(&bytes[16..16 + meta_len]).unwrap();
        meta.config.d_model = 5;
        let json = serde_json::to_vec(&meta).unwrap();
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(&bytes[16 + meta_len..]);
        assert!(matches!(decode(&forged), Err(WftError::Validation(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = model();
        save_checkpoint(&m, None, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.params, m.params);
        assert!(load_checkpoint(&dir.path().join("missing")).is_err());
    }
}
