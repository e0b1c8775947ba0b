//! `AVT1` binary tensor encoding shared by clip files and checkpoints.
//!
//! Layout: magic `AVT1`, one dtype byte, one rank byte, `rank` little-endian
//! `u32` extents, then the row-major payload. Dtype 0 is little-endian
//! binary32; dtype 1 (little-endian binary64) is accepted on read.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"AVT1";
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;

/// Appends the binary32 encoding of `t` to `out`.
pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.reserve(t.len() * 4);
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Appends the binary64 encoding of `t` to `out`.
pub fn encode_tensor_f64(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(DTYPE_F64);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.reserve(t.len() * 8);
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a byte buffer that reports absolute offsets in its errors.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.remaining()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    pub fn i16(&mut self, what: &str) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        self.magic(TENSOR_MAGIC)?;
        let dtype_at = self.offset();
        let dtype = self.u8("dtype")?;
        let width = match dtype {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            other => {
                return Err(Error::format(dtype_at, format!("unknown dtype code {other}")))
            }
        };
        let rank = self.u8("rank")? as usize;
        if rank == 0 {
            return Err(Error::format(self.offset() - 1, "tensor rank is zero"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = self.offset();
            let d = self.u32("extent")? as usize;
            if d == 0 {
                return Err(Error::format(at, "tensor extent is zero"));
            }
            shape.push(d);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(self.offset(), "tensor extents overflow"))?;
        let payload_at = self.offset();
        let bytes = self.take(
            numel.checked_mul(width).ok_or_else(|| Error::format(payload_at, "payload overflow"))?,
            "tensor payload",
        )?;
        let data: Vec<f64> = if width == 4 {
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect()
        } else {
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        };
        Tensor::new(&shape, data).map_err(|e| Error::format(payload_at, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 3], vec![1.0; 6]).unwrap();
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf);
        assert_eq!(&buf[..4], b"AVT1");
        assert_eq!(buf[4], 0);
        assert_eq!(buf[5], 2);
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[10..14], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 14 + 6 * 4);
        assert_eq!(&buf[14..18], &1.0f32.to_le_bytes());
    }

    #[test]
    fn f64_encoding_is_lossless() {
        let t = Tensor::vector(&[0.1, 1e-300, -7.25]).unwrap();
        let mut buf = Vec::new();
        encode_tensor_f64(&t, &mut buf);
        assert_eq!(buf[4], DTYPE_F64);
        assert_eq!(ByteReader::new(&buf).tensor().unwrap(), t);
    }

    #[test]
    fn reads_f64_payload() {
        let mut buf = b"AVT1".to_vec();
        buf.extend([DTYPE_F64, 1]);
        buf.extend(2u32.to_le_bytes());
        buf.extend(0.1f64.to_le_bytes());
        buf.extend((-3.0f64).to_le_bytes());
        let t = ByteReader::new(&buf).tensor().unwrap();
        assert_eq!(t.data(), &[0.1, -3.0]);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf);
        buf.truncate(buf.len() - 3);
        match ByteReader::new(&buf).tensor() {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_names_expected() {
        let err = ByteReader::new(b"XXXX\0\x01").tensor().unwrap_err();
        assert!(err.to_string().contains("AVT1"), "{err}");
    }

    proptest! {
        #[test]
        fn f32_values_round_trip(shape in proptest::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let mut rng = crate::rng::Rng::new(seed);
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.uniform(-10.0, 10.0) as f32 as f64).collect();
            let t = Tensor::new(&shape, data).unwrap();
            let mut buf = Vec::new();
            encode_tensor(&t, &mut buf);
            let mut r = ByteReader::new(&buf);
            prop_assert_eq!(r.tensor().unwrap(), t);
            prop_assert_eq!(r.remaining(), 0);
        }
    }
}
