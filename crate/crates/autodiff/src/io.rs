//! Binary parameter blocks: `NRFW` magic, format version, tensor count and
//! per-tensor shapes, followed by every tensor's little-endian `f32` data.

use std::io::{Read, Write};

use crate::error::{AdError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NRFW";
pub const FORMAT_VERSION: u32 = 1;

const MAX_RANK: u32 = 8;

pub fn write_tensors<'a, W: Write>(
    w: &mut W,
    tensors: impl IntoIterator<Item = &'a Tensor>,
) -> Result<()> {
    let tensors: Vec<&Tensor> = tensors.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for t in &tensors {
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<Tensor>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(AdError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(AdError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(r)?;
    let mut shapes = Vec::new();
    for _ in 0..count {
        let rank = read_u32(r)?;
        if rank > MAX_RANK {
            return Err(AdError::Format(format!("rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = read_u64(r)?;
            if d == 0 || d > u32::MAX as u64 {
                return Err(AdError::Format(format!("bad extent {d}")));
            }
            shape.push(d as usize);
        }
        shapes.push(shape);
    }
    let mut out = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        read_exact(r, &mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => AdError::Format("truncated".into()),
        _ => AdError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
