//! Named-tensor checkpoint files.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "GMCKPT01"
//! seed       u64       ParameterStore seed
//! steps      u64       optimizer steps taken when saved
//! count      u32       number of tensors
//! count times, in parameter-name order:
//!     name_len   u32
//!     name       name_len bytes, UTF-8
//!     dtype      u8        1 = f64
//!     rank       u32
//!     dims       rank × u64
//!     values     product(dims) × f64, row-major
//! digest     32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Loading checks the digest, then requires the file to hold exactly the
//! store's parameter names with identical shapes.

use std::path::Path;

use geomatch_core::nn::ParameterStore;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl::write_atomic;

pub const MAGIC: &[u8; 8] = b"GMCKPT01";
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub steps: u64,
    pub tensors: usize,
}

pub fn encode(store: &ParameterStore) -> Vec<u8> {
    let tensors = store.named_tensors();
    let mut out = Vec::with_capacity(32 + 8 * store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&store.seed().to_le_bytes());
    out.extend_from_slice(&store.steps_taken().to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save(store: &ParameterStore, path: &Path) -> Result<()> {
    write_atomic(path, &encode(store))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// Copies the checkpoint at `bytes` into `store`. `path` is only used in
/// error messages.
pub fn decode_into(store: &mut ParameterStore, bytes: &[u8], path: &Path) -> Result<CheckpointMeta> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(fail("digest mismatch".into()));
    }
    let truncated = || fail("truncated".into());
    let mut r = Reader { bytes: body, pos: 8 };
    let seed = r.u64().ok_or_else(truncated)?;
    let steps = r.u64().ok_or_else(truncated)?;
    let count = r.u32().ok_or_else(truncated)? as usize;
    if count != store.len() {
        return Err(fail(format!("holds {count} tensors, the model has {}", store.len())));
    }
    for _ in 0..count {
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
            .map_err(|_| fail("tensor name is not UTF-8".into()))?
            .to_string();
        let id = store.id(&name).ok_or_else(|| fail(format!("unknown tensor {name}")))?;
        if r.take(1).ok_or_else(truncated)?[0] != DTYPE_F64 {
            return Err(fail(format!("tensor {name} is not f64")));
        }
        let rank = r.u32().ok_or_else(truncated)? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        if dims != store.value(id).shape() {
            return Err(fail(format!(
                "tensor {name} has shape {dims:?}, the model expects {:?}",
                store.value(id).shape()
            )));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(truncated)?).ok_or_else(truncated)?;
        for (v, c) in store.value_mut(id).data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        }
    }
    if r.pos != body.len() {
        return Err(fail("trailing bytes".into()));
    }
    Ok(CheckpointMeta {
        seed,
        steps,
        tensors: count,
    })
}

pub fn load_into(store: &mut ParameterStore, path: &Path) -> Result<CheckpointMeta> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_into(store, &bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use geomatch_core::nn::Tensor;

    fn store(seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new(seed);
        s.add_normal("b.weight", &[3, 2]).unwrap();
        s.add("a.bias", Tensor::from_vec(&[2], vec![0.5, -1.25]).unwrap(), false).unwrap();
        s
    }

    #[test]
    fn round_trip_restores_every_value() {
        let src = store(3);
        let bytes = encode(&src);
        let mut dst = store(9);
        let meta = decode_into(&mut dst, &bytes, Path::new("x")).unwrap();
        assert_eq!(meta, CheckpointMeta { seed: 3, steps: 0, tensors: 2 });
        assert_eq!(dst.named_tensors(), src.named_tensors());
        let body = bytes.len() - 32;
        assert_eq!(encode(&dst)[24..body], bytes[24..body]);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&store(5));
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        // First tensor in name order is "a.bias".
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 6);
        assert_eq!(&bytes[32..38], b"a.bias");
        assert_eq!(bytes.len(), 28 + (4 + 6 + 1 + 4 + 8 + 16) + (4 + 8 + 1 + 4 + 16 + 48) + 32);
    }

    #[test]
    fn corrupt_or_mismatched_files_are_rejected() {
        let bytes = encode(&store(1));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(decode_into(&mut store(1), &flipped, Path::new("x")).unwrap_err().to_string().contains("digest"));

        let mut other = ParameterStore::new(1);
        other.add_normal("b.weight", &[2, 3]).unwrap();
        other.add_zeros("a.bias", &[2]).unwrap();
        let err = decode_into(&mut other, &bytes, Path::new("x")).unwrap_err().to_string();
        assert!(err.contains("b.weight") && err.contains("shape"), "{err}");

        let mut renamed = ParameterStore::new(1);
        renamed.add_normal("b.weight", &[3, 2]).unwrap();
        renamed.add_zeros("c.bias", &[2]).unwrap();
        assert!(decode_into(&mut renamed, &bytes, Path::new("x")).unwrap_err().to_string().contains("a.bias"));
    }
}
