//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "DAGECKPT"
//! version    u32
//! spec hash  u64      NetworkSpec::hash of the embedded spec
//! step       u64
//! spec len   u32, then that many bytes of spec JSON
//! count      u32      number of tensors
//! per tensor: rank u32, rank x u64 dims, then prod(dims) f64 values
//! ```

use std::io::{Read, Write};

use ndarray::Array2;

use super::{NetworkSpec, NetworkState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DAGECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(mut out: impl Write, state: &NetworkState) -> Result<()> {
    let spec_json = serde_json::to_vec(state.spec())?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&state.spec().hash().to_le_bytes())?;
    out.write_all(&state.step().to_le_bytes())?;
    out.write_all(&(spec_json.len() as u32).to_le_bytes())?;
    out.write_all(&spec_json)?;
    out.write_all(&(state.params().len() as u32).to_le_bytes())?;
    for p in state.params() {
        out.write_all(&2u32.to_le_bytes())?;
        for dim in [p.nrows(), p.ncols()] {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in p.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            Error::Checkpoint(format!("truncated at byte {}: {e}", self.offset))
        })?;
        self.offset += N;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        self.bytes::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }
}

pub fn read_checkpoint(input: impl Read) -> Result<NetworkState> {
    let mut r = Reader { inner: input, offset: 0 };
    if &r.bytes::<8>()? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hash = r.u64()?;
    let step = r.u64()?;
    let spec_len = r.u32()? as usize;
    let mut spec_json = vec![0u8; spec_len];
    r.inner
        .read_exact(&mut spec_json)
        .map_err(|e| Error::Checkpoint(format!("truncated spec at byte {}: {e}", r.offset)))?;
    r.offset += spec_len;
    let spec: NetworkSpec = serde_json::from_slice(&spec_json)?;
    if spec.hash() != hash {
        return Err(Error::SpecMismatch(format!(
            "stored hash {hash:016x} does not match embedded spec {:016x}",
            spec.hash()
        )));
    }
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32()?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!("tensor rank {rank}, expected 2")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(f64::from_le_bytes(r.bytes::<8>()?));
        }
        params.push(Array2::from_shape_vec((rows, cols), values).expect("length matches shape"));
    }
    let mut state = NetworkState::from_parts(&spec, params)?;
    state.step = step;
    Ok(state)
}
