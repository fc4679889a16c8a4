//! Little-endian tensor snapshot files.
//!
//! Layout: magic `LET4`, `u32` version (1), four `u64` dims (n, c, h, w),
//! then `n*c*h*w` `f32` values in row-major order.

use std::io::{Read, Write};

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LET4";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 4 * 8;

pub fn encoded_len(shape: Shape4) -> usize {
    HEADER_LEN + 4 * shape.numel()
}

pub fn write_snapshot<W: Write>(out: &mut W, t: &Tensor4) -> std::io::Result<()> {
    let s = t.shape();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for d in s.dims() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(4 * t.numel());
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn encode(t: &Tensor4) -> Vec<u8> {
    let mut buf = Vec::with_capacity(encoded_len(t.shape()));
    write_snapshot(&mut buf, t).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_snapshot<R: Read>(input: &mut R) -> Result<Tensor4> {
    let mut head = [0u8; HEADER_LEN];
    input
        .read_exact(&mut head)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 8 + 8 * i;
        *d = u64::from_le_bytes(head[off..off + 8].try_into().unwrap()) as usize;
    }
    let shape = Shape4::checked(dims[0], dims[1], dims[2], dims[3])
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut body = vec![0u8; 4 * shape.numel()];
    input
        .read_exact(&mut body)
        .map_err(|e| Error::Format(format!("truncated body: {e}")))?;
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor4::from_vec(shape, data)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor4> {
    read_snapshot(&mut &bytes[..])
}

pub fn save(path: &std::path::Path, t: &Tensor4) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &std::path::Path) -> Result<Tensor4> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
