//! `.ttc` files: `"TTC1"`, `u8` core count, then per core three `u64` extents
//! and the `f64` payload, then a `u64` boundary count and the boundaries. All
//! little-endian.

use std::path::Path;

use super::{TTCore, TensorTrain, ORTHO_TOL};
use crate::error::{Error, Result};

pub const TTC_MAGIC: &[u8; 4] = b"TTC1";

pub fn serialize(tt: &TensorTrain) -> Result<Vec<u8>> {
    let count = u8::try_from(tt.num_cores())
        .map_err(|_| Error::Format(format!("{} cores exceed the u8 count field", tt.num_cores())))?;
    let payload: usize = tt.cores().iter().map(|c| 24 + 8 * c.len()).sum();
    let mut out = Vec::with_capacity(5 + payload + 8 * (tt.batch_boundaries().len() + 1));
    out.extend_from_slice(TTC_MAGIC);
    out.push(count);
    for core in tt.cores() {
        for extent in core.shape() {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        for v in core.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(tt.batch_boundaries().len() as u64).to_le_bytes());
    for &b in tt.batch_boundaries() {
        out.extend_from_slice(&(b as u64).to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Format(format!("{what} overflows usize")))
    }
}

/// Parses a `.ttc` buffer. The orthonormal-prefix count is not stored; it is
/// recovered by checking each leading core's Gram matrix.
pub fn deserialize(bytes: &[u8]) -> Result<TensorTrain> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != TTC_MAGIC {
        return Err(Error::Format("bad magic, expected TTC1".into()));
    }
    let count = r.take(1, "core count")?[0] as usize;
    if count == 0 {
        return Err(Error::Format("file declares zero cores".into()));
    }
    let mut cores = Vec::with_capacity(count);
    for i in 0..count {
        let rl = r.usize("core extent")?;
        let n = r.usize("core extent")?;
        let rr = r.usize("core extent")?;
        let len = rl
            .checked_mul(n)
            .and_then(|v| v.checked_mul(rr))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("core {i} size overflows")))?;
        let raw = r.take(len, "core payload")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let core = TTCore::new(rl, n, rr, data).map_err(|e| Error::Format(format!("core {i}: {e}")))?;
        cores.push(core);
    }
    let nb = r.usize("boundary count")?;
    if nb > (bytes.len() - r.pos) / 8 {
        return Err(Error::Format("truncated file while reading boundaries".into()));
    }
    let mut boundaries = Vec::with_capacity(nb);
    for _ in 0..nb {
        boundaries.push(r.usize("boundary")?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after boundaries",
            bytes.len() - r.pos
        )));
    }
    let ortho = TensorTrain::count_orthonormal_prefix(&cores, ORTHO_TOL);
    TensorTrain::new(cores, ortho, boundaries).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_ttc(tt: &TensorTrain, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = serialize(tt)?;
    // atomic replace via rename
    let tmp = path.with_extension("ttc.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_ttc(path: impl AsRef<Path>) -> Result<TensorTrain> {
    deserialize(&std::fs::read(path)?)
}
