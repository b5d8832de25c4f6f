//! Flat binary tensor files: magic `TNSR`, u32 version, u32 rank, u32
//! extents, then the little-endian f64 payload.

use std::io::{Read, Write};

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u32 = 1;

/// Serialized size of `t` in bytes.
pub fn encoded_len(t: &Tensor) -> usize {
    12 + 4 * t.rank() + 8 * t.len()
}

pub fn write_tensor<W: Write>(mut out: W, t: &Tensor) -> Result<()> {
    out.write_all(&encode(t)?)?;
    Ok(())
}

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(encoded_len(t));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let rank = u32::try_from(t.rank()).map_err(|_| DiffError::Format("rank exceeds u32".into()))?;
    buf.extend_from_slice(&rank.to_le_bytes());
    for &n in t.shape() {
        let n = u32::try_from(n).map_err(|_| DiffError::Format(format!("extent {n} exceeds u32")))?;
        buf.extend_from_slice(&n.to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<Tensor> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let (t, used) = decode(&buf)?;
    if used != buf.len() {
        return Err(DiffError::Format(format!("{} trailing bytes at offset {used}", buf.len() - used)));
    }
    Ok(t)
}

/// Decodes one tensor from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let mut at = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() < at + n {
            return Err(DiffError::Format(format!(
                "truncated {what} at offset {at}: need {n} bytes, have {}",
                bytes.len() - at
            )));
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };
    if take(4, "magic")? != MAGIC {
        return Err(DiffError::Format("bad magic, expected TNSR".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let version = u32_at(take(4, "version")?);
    if version != VERSION {
        return Err(DiffError::Format(format!("unsupported version {version}")));
    }
    let rank = u32_at(take(4, "rank")?) as usize;
    let mut shape = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        shape.push(u32_at(take(4, "extents")?) as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| DiffError::Format(format!("extents {shape:?} overflow")))?;
    let payload = take(count.checked_mul(8).unwrap_or(usize::MAX), "payload")?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((Tensor::new(shape, data)?, at))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let t = Tensor::from_fn(&[2, 3, 1], |i| (i as f64).sin() * 1e-300 + i as f64);
        let bytes = encode(&t).unwrap();
        assert_eq!(bytes.len(), encoded_len(&t));
        let back = read_tensor(&bytes[..]).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn scalar_round_trip() {
        let bytes = encode(&Tensor::scalar(2.5)).unwrap();
        assert_eq!(read_tensor(&bytes[..]).unwrap().item().unwrap(), 2.5);
    }

    #[test]
    fn rejects_bad_input() {
        let mut bytes = encode(&Tensor::zeros(&[4])).unwrap();
        let err = read_tensor(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");
        bytes[4] = 9;
        assert!(read_tensor(&bytes[..]).unwrap_err().to_string().contains("unsupported version 9"));
        bytes[0] = b'X';
        assert!(read_tensor(&bytes[..]).unwrap_err().to_string().contains("magic"));
    }
}
