//! Binary checkpoint: magic, version, shape table, little-endian `f32` payload.
//!
//! ```text
//! "DIRLNET\0" | u32 version | u32 n_tensors | per tensor: u32 rank, u32 dims[rank] | f32 values...
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::NetParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIRLNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &NetParams) -> Vec<u8> {
    let shapes = params.shapes();
    let mut out = Vec::with_capacity(64 + 4 * params.n_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for s in &shapes {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for &d in s {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in params.tensors() {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<NetParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a reward network checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut params = NetParams::zeros();
    let expect = params.shapes();
    let n = r.u32()? as usize;
    if n != expect.len() {
        return Err(Error::ShapeMismatch(format!("checkpoint has {n} tensors, network {}", expect.len())));
    }
    for (i, e) in expect.iter().enumerate() {
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != e {
            return Err(Error::ShapeMismatch(format!("tensor {i}: checkpoint {dims:?}, network {e:?}")));
        }
    }
    for (p, _) in params.tensors_mut() {
        for v in p.iter_mut() {
            let x = r.f32()?;
            if !x.is_finite() {
                return Err(Error::NonFinite("checkpoint parameter".into()));
            }
            *v = x as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &NetParams) -> Result<()> {
    write_atomic(path, &save_checkpoint(params))
}

pub fn read_checkpoint(path: &Path) -> Result<NetParams> {
    load_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewardnet::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = init_params(9);
        let bytes = save_checkpoint(&p);
        let q = load_checkpoint(&bytes).unwrap();
        assert_eq!(save_checkpoint(&q), bytes);
        for (a, b) in p.tensors().concat().iter().zip(q.tensors().concat()) {
            assert_eq!(*a as f32, b as f32);
        }
        // values already representable in f32 survive unchanged
        assert_eq!(load_checkpoint(&save_checkpoint(&q)).unwrap(), q);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = save_checkpoint(&init_params(1));
        assert!(load_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(load_checkpoint(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(load_checkpoint(&bad).is_err());
        let mut bad = bytes.clone();
        // first dim of the first tensor
        bad[20] = 17;
        assert!(load_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(load_checkpoint(&extra).is_err());
    }
}
