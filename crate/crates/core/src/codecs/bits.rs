//! Byte-level helpers shared by the codecs: LEB128 varints, zig-zag mapping,
//! fixed-width bit packing and a bounds-checked payload reader.

use crate::error::{Error, Result};

pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

/// Minimal number of bits that can represent `max`.
pub fn bit_width(max: u64) -> u8 {
    (64 - max.leading_zeros()) as u8
}

pub fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

/// Packs each value into `width` bits, least-significant bit first.
pub fn pack<I: IntoIterator<Item = u64>>(out: &mut Vec<u8>, width: u8, values: I) {
    if width == 0 {
        return;
    }
    let width = width as u32;
    let mut acc: u128 = 0;
    let mut filled: u32 = 0;
    for v in values {
        debug_assert!(width == 64 || v >> width == 0);
        acc |= (v as u128) << filled;
        filled += width;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
}

pub fn packed_len(count: usize, width: u8) -> usize {
    (count * width as usize).div_ceil(8)
}

/// Cursor over a codec payload. Every failure reports the absolute offset
/// at which the payload stopped making sense.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::corrupt(
                self.pos,
                format!("need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(self.u64()? as i64)
    }

    pub fn varint(&mut self) -> Result<u64> {
        let start = self.pos;
        let mut v: u64 = 0;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::corrupt(start, "varint longer than 10 bytes"))
    }

    /// Length-prefixed (u32 LE) UTF-8 string.
    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::corrupt(at, "invalid utf-8"))
    }

    pub fn unpack(&mut self, width: u8, count: usize) -> Result<Vec<u64>> {
        if width > 64 {
            return Err(Error::corrupt(self.pos, format!("bit width {width} > 64")));
        }
        let bytes = self.take(packed_len(count, width))?;
        let mut out = Vec::with_capacity(count);
        if width == 0 {
            out.resize(count, 0);
            return Ok(out);
        }
        let mask: u128 = (1u128 << width) - 1;
        let mut acc: u128 = 0;
        let mut filled: u32 = 0;
        let mut iter = bytes.iter();
        for _ in 0..count {
            while filled < width as u32 {
                acc |= (*iter.next().unwrap() as u128) << filled;
                filled += 8;
            }
            out.push((acc & mask) as u64);
            acc >>= width;
            filled -= width as u32;
        }
        Ok(out)
    }

    pub fn finish(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::corrupt(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ))
        }
    }
}

pub fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}
