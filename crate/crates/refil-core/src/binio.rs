//! Little-endian binary primitives shared by the checkpoint format and the
//! wire protocol. Tensors travel as: rank byte, u32 dims, raw f32 data.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)?;
    Ok(buf[0])
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

pub fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_string<R: Read>(r: &mut R, max_len: usize) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > max_len {
        return Err(Error::Protocol(format!(
            "string length {len} exceeds limit {max_len}"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Protocol(format!("invalid utf-8 string: {e}")))
}

/// Upper bound on tensor elements accepted from untrusted bytes.
pub const MAX_TENSOR_ELEMS: usize = 1 << 28;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    write_u8(w, t.rank() as u8)?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    for &v in t.data() {
        write_f32(w, v)?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rank = read_u8(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Protocol(format!("tensor rank {rank} outside 1..=8")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut elems: usize = 1;
    for _ in 0..rank {
        let d = read_u32(r)? as usize;
        elems = elems.saturating_mul(d);
        shape.push(d);
    }
    if elems == 0 || elems > MAX_TENSOR_ELEMS {
        return Err(Error::Protocol(format!(
            "tensor with shape {shape:?} rejected"
        )));
    }
    let mut data = vec![0.0f32; elems];
    let mut buf = vec![0u8; elems * 4];
    r.read_exact(&mut buf)?;
    for (v, chunk) in data.iter_mut().zip(buf.chunks_exact(4)) {
        *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_preserves_bits() {
        let t = Tensor::new(vec![2, 3], vec![0.1, -0.0, 1e-30, f32::MAX, 7.25, -3.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn read_tensor_rejects_absurd_shapes() {
        let mut buf = Vec::new();
        write_u8(&mut buf, 2).unwrap();
        write_u32(&mut buf, u32::MAX).unwrap();
        write_u32(&mut buf, u32::MAX).unwrap();
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }
}
