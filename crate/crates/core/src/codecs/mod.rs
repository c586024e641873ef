//! Lossless slice codecs.
//!
//! Every codec sees only the non-null values of a slice (the dense values);
//! null positions live in a validity bitmap stored beside the payload. The
//! decoder therefore always knows how many dense values to expect.
//!
//! Payload layouts (all integers little-endian):
//!
//! | kind             | payload                                                        |
//! |------------------|----------------------------------------------------------------|
//! | Plain            | i64 × n, or (u32 len, bytes) × n                               |
//! | Delta            | first i64, u8 width, zig-zag deltas packed at width            |
//! | FrameOfReference | base i64 (min), u8 width, offsets from base packed at width    |
//! | RunLength        | (value, varint run length) until the payload ends              |
//! | Dictionary       | varint cardinality, entries in first-occurrence order, codes   |
//! |                  | packed at ceil(log2(cardinality)) bits                         |
//! | GeneralLZ        | zstd frame (default level) of the Plain payload                |

mod bits;
mod scan;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use bits::{bit_width, pack, put_string, put_varint, unzigzag, zigzag, Reader};

pub use scan::{
    platform_cache_hook, scan_from_storage, scan_from_storage_with_hook, scan_in_memory,
    ColdCacheHook, DeviceProfile, FadviseHook, ScanMeasurement, StorageMode, TIMED_RUNS,
};
pub(crate) use scan::cold_read_ns;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataType {
    Int64,
    String,
}

impl DataType {
    pub const ALL: [DataType; 2] = [DataType::Int64, DataType::String];

    pub fn tag(self) -> u8 {
        match self {
            DataType::Int64 => 0,
            DataType::String => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DataType::Int64),
            1 => Some(DataType::String),
            _ => None,
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::Int64 => "int64",
            DataType::String => "string",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EncodingKind {
    Plain,
    Delta,
    Dictionary,
    FrameOfReference,
    RunLength,
    GeneralLZ,
}

impl EncodingKind {
    pub const ALL: [EncodingKind; 6] = [
        EncodingKind::Plain,
        EncodingKind::Delta,
        EncodingKind::Dictionary,
        EncodingKind::FrameOfReference,
        EncodingKind::RunLength,
        EncodingKind::GeneralLZ,
    ];

    /// Order used to break cost ties: cheaper decodes first.
    pub const TIE_BREAK: [EncodingKind; 6] = [
        EncodingKind::Plain,
        EncodingKind::RunLength,
        EncodingKind::FrameOfReference,
        EncodingKind::Delta,
        EncodingKind::Dictionary,
        EncodingKind::GeneralLZ,
    ];

    pub fn applies_to(self, dtype: DataType) -> bool {
        match self {
            EncodingKind::Delta | EncodingKind::FrameOfReference => dtype == DataType::Int64,
            _ => true,
        }
    }

    pub fn applicable(dtype: DataType) -> impl Iterator<Item = EncodingKind> {
        Self::ALL.into_iter().filter(move |k| k.applies_to(dtype))
    }

    pub fn tie_break_rank(self) -> usize {
        Self::TIE_BREAK.iter().position(|k| *k == self).unwrap()
    }

    pub fn tag(self) -> u8 {
        Self::ALL.iter().position(|k| *k == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EncodingKind::Plain => "plain",
            EncodingKind::Delta => "delta",
            EncodingKind::Dictionary => "dictionary",
            EncodingKind::FrameOfReference => "for",
            EncodingKind::RunLength => "rle",
            EncodingKind::GeneralLZ => "lz",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Values {
    Int64(Vec<Option<i64>>),
    String(Vec<Option<String>>),
}

/// One column's values within one data block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slice {
    values: Values,
}

impl Slice {
    pub fn from_ints(values: Vec<Option<i64>>) -> Self {
        Self {
            values: Values::Int64(values),
        }
    }

    pub fn from_strings(values: Vec<Option<String>>) -> Self {
        Self {
            values: Values::String(values),
        }
    }

    /// Null-free integer slice.
    pub fn ints<I: IntoIterator<Item = i64>>(values: I) -> Self {
        Self::from_ints(values.into_iter().map(Some).collect())
    }

    /// Null-free string slice.
    pub fn strings<I: IntoIterator<Item = S>, S: Into<String>>(values: I) -> Self {
        Self::from_strings(values.into_iter().map(|s| Some(s.into())).collect())
    }

    pub fn empty(dtype: DataType) -> Self {
        match dtype {
            DataType::Int64 => Self::from_ints(Vec::new()),
            DataType::String => Self::from_strings(Vec::new()),
        }
    }

    pub fn dtype(&self) -> DataType {
        match self.values {
            Values::Int64(_) => DataType::Int64,
            Values::String(_) => DataType::String,
        }
    }

    pub fn row_count(&self) -> usize {
        match &self.values {
            Values::Int64(v) => v.len(),
            Values::String(v) => v.len(),
        }
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn into_values(self) -> Values {
        self.values
    }

    pub fn as_ints(&self) -> Option<&[Option<i64>]> {
        match &self.values {
            Values::Int64(v) => Some(v),
            Values::String(_) => None,
        }
    }

    pub fn as_strings(&self) -> Option<&[Option<String>]> {
        match &self.values {
            Values::String(v) => Some(v),
            Values::Int64(_) => None,
        }
    }

    pub fn null_count(&self) -> usize {
        match &self.values {
            Values::Int64(v) => v.iter().filter(|x| x.is_none()).count(),
            Values::String(v) => v.iter().filter(|x| x.is_none()).count(),
        }
    }

    /// Contiguous sub-slice `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Slice {
        match &self.values {
            Values::Int64(v) => Slice::from_ints(v[start..start + len].to_vec()),
            Values::String(v) => Slice::from_strings(v[start..start + len].to_vec()),
        }
    }

    /// Wrap-around sum of integer values (nulls count as 0), or the sum of
    /// byte lengths for strings.
    pub fn aggregate(&self) -> i64 {
        match &self.values {
            Values::Int64(v) => v
                .iter()
                .fold(0i64, |acc, x| acc.wrapping_add(x.unwrap_or(0))),
            Values::String(v) => v.iter().fold(0i64, |acc, x| {
                acc.wrapping_add(x.as_ref().map_or(0, |s| s.len() as i64))
            }),
        }
    }
}

/// Validity bitmap, LSB-first, a set bit marks a non-null row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validity {
    bits: Vec<u8>,
    len: usize,
}

impl Validity {
    fn from_flags<I: Iterator<Item = bool>>(flags: I, len: usize) -> Self {
        let mut bits = vec![0u8; len.div_ceil(8)];
        for (i, valid) in flags.enumerate() {
            if valid {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        Self { bits, len }
    }

    pub fn from_bytes(bits: Vec<u8>, len: usize) -> Result<Self> {
        if bits.len() != len.div_ceil(8) {
            return Err(Error::corrupt(0, "validity bitmap length mismatch"));
        }
        Ok(Self { bits, len })
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.bits[i / 8] & (1 << (i % 8)) != 0
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn valid_count(&self) -> usize {
        (0..self.len).filter(|&i| self.is_valid(i)).count()
    }
}

/// Fixed per-record header: kind, dtype, flags, reserved, row count, payload length.
pub const RECORD_HEADER_BYTES: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSlice {
    pub kind: EncodingKind,
    pub dtype: DataType,
    pub row_count: usize,
    /// `None` when the slice has no nulls; the bitmap is then not stored.
    pub validity: Option<Validity>,
    pub payload: Vec<u8>,
}

impl EncodedSlice {
    /// Size of the serialized slice record (header + bitmap + payload).
    pub fn encoded_bytes(&self) -> usize {
        RECORD_HEADER_BYTES
            + self.validity.as_ref().map_or(0, |v| v.as_bytes().len())
            + self.payload.len()
    }

    pub fn dense_count(&self) -> usize {
        self.validity
            .as_ref()
            .map_or(self.row_count, Validity::valid_count)
    }
}

/// Encodes `slice` with `kind`.
pub fn encode(slice: &Slice, kind: EncodingKind) -> Result<EncodedSlice> {
    let dtype = slice.dtype();
    if !kind.applies_to(dtype) {
        return Err(Error::UnsupportedDtype { kind, dtype });
    }
    let row_count = slice.row_count();
    if row_count == 0 {
        return Err(Error::EmptySlice);
    }
    let validity = if slice.null_count() == 0 {
        None
    } else {
        Some(match slice.values() {
            Values::Int64(v) => Validity::from_flags(v.iter().map(Option::is_some), row_count),
            Values::String(v) => Validity::from_flags(v.iter().map(Option::is_some), row_count),
        })
    };
    let payload = match slice.values() {
        Values::Int64(v) => {
            let dense: Vec<i64> = v.iter().flatten().copied().collect();
            encode_ints(&dense, kind)
        }
        Values::String(v) => {
            let dense: Vec<&str> = v.iter().flatten().map(String::as_str).collect();
            encode_strings(&dense, kind)
        }
    };
    Ok(EncodedSlice {
        kind,
        dtype,
        row_count,
        validity,
        payload,
    })
}

fn plain_ints(values: &[i64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn plain_strings(values: &[&str]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.iter().map(|s| s.len() + 4).sum());
    for s in values {
        put_string(&mut out, s);
    }
    out
}

fn lz(plain: &[u8]) -> Vec<u8> {
    zstd::bulk::compress(plain, zstd::DEFAULT_COMPRESSION_LEVEL)
        .expect("in-memory zstd compression cannot fail")
}

fn dictionary_width(cardinality: usize) -> u8 {
    if cardinality <= 1 {
        0
    } else {
        bit_width(cardinality as u64 - 1)
    }
}

fn encode_ints(values: &[i64], kind: EncodingKind) -> Vec<u8> {
    if values.is_empty() && kind != EncodingKind::GeneralLZ {
        return Vec::new();
    }
    match kind {
        EncodingKind::Plain => plain_ints(values),
        EncodingKind::Delta => {
            let deltas: Vec<u64> = values
                .windows(2)
                .map(|w| zigzag(w[1].wrapping_sub(w[0])))
                .collect();
            let width = bit_width(deltas.iter().copied().max().unwrap_or(0));
            let mut out = Vec::with_capacity(9 + bits::packed_len(deltas.len(), width));
            out.extend_from_slice(&values[0].to_le_bytes());
            out.push(width);
            pack(&mut out, width, deltas);
            out
        }
        EncodingKind::FrameOfReference => {
            let min = *values.iter().min().unwrap();
            let max = *values.iter().max().unwrap();
            let width = bit_width(max.wrapping_sub(min) as u64);
            let mut out = Vec::with_capacity(9 + bits::packed_len(values.len(), width));
            out.extend_from_slice(&min.to_le_bytes());
            out.push(width);
            pack(&mut out, width, values.iter().map(|v| v.wrapping_sub(min) as u64));
            out
        }
        EncodingKind::RunLength => {
            let mut out = Vec::new();
            for (value, run) in runs(values) {
                out.extend_from_slice(&value.to_le_bytes());
                put_varint(&mut out, run as u64);
            }
            out
        }
        EncodingKind::Dictionary => {
            let (entries, codes) = dictionary(values.iter().copied());
            let width = dictionary_width(entries.len());
            let mut out = Vec::new();
            put_varint(&mut out, entries.len() as u64);
            for e in &entries {
                out.extend_from_slice(&e.to_le_bytes());
            }
            pack(&mut out, width, codes);
            out
        }
        EncodingKind::GeneralLZ => lz(&plain_ints(values)),
    }
}

fn encode_strings(values: &[&str], kind: EncodingKind) -> Vec<u8> {
    if values.is_empty() && kind != EncodingKind::GeneralLZ {
        return Vec::new();
    }
    match kind {
        EncodingKind::Plain => plain_strings(values),
        EncodingKind::RunLength => {
            let mut out = Vec::new();
            for (value, run) in runs(values) {
                put_string(&mut out, value);
                put_varint(&mut out, run as u64);
            }
            out
        }
        EncodingKind::Dictionary => {
            let (entries, codes) = dictionary(values.iter().copied());
            let width = dictionary_width(entries.len());
            let mut out = Vec::new();
            put_varint(&mut out, entries.len() as u64);
            for e in &entries {
                put_string(&mut out, e);
            }
            pack(&mut out, width, codes);
            out
        }
        EncodingKind::GeneralLZ => lz(&plain_strings(values)),
        EncodingKind::Delta | EncodingKind::FrameOfReference => {
            unreachable!("applicability checked by encode")
        }
    }
}

/// Maximal runs of equal adjacent values.
fn runs<T: PartialEq + Copy>(values: &[T]) -> Vec<(T, usize)> {
    let mut out: Vec<(T, usize)> = Vec::new();
    for &v in values {
        match out.last_mut() {
            Some((last, n)) if *last == v => *n += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

/// Distinct values in first-occurrence order plus one code per value.
fn dictionary<T, I>(values: I) -> (Vec<T>, Vec<u64>)
where
    T: std::hash::Hash + Eq + Copy,
    I: Iterator<Item = T>,
{
    let mut index: HashMap<T, u64> = HashMap::new();
    let mut entries = Vec::new();
    let codes = values
        .map(|v| {
            *index.entry(v).or_insert_with(|| {
                entries.push(v);
                entries.len() as u64 - 1
            })
        })
        .collect();
    (entries, codes)
}

/// Reconstructs the original slice, nulls included.
pub fn decode(encoded: &EncodedSlice) -> Result<Slice> {
    if !encoded.kind.applies_to(encoded.dtype) {
        return Err(Error::UnsupportedDtype {
            kind: encoded.kind,
            dtype: encoded.dtype,
        });
    }
    if let Some(v) = &encoded.validity {
        if v.len() != encoded.row_count {
            return Err(Error::corrupt(0, "validity length differs from row count"));
        }
    }
    let dense = encoded.dense_count();
    let validity = encoded.validity.as_ref();
    Ok(match encoded.dtype {
        DataType::Int64 => {
            let dense = decode_ints(&encoded.payload, encoded.kind, dense)?;
            Slice::from_ints(scatter(dense, validity, encoded.row_count))
        }
        DataType::String => {
            let dense = decode_strings(&encoded.payload, encoded.kind, dense)?;
            Slice::from_strings(scatter(dense, validity, encoded.row_count))
        }
    })
}

fn scatter<T>(dense: Vec<T>, validity: Option<&Validity>, rows: usize) -> Vec<Option<T>> {
    match validity {
        None => dense.into_iter().map(Some).collect(),
        Some(v) => {
            let mut it = dense.into_iter();
            (0..rows)
                .map(|i| if v.is_valid(i) { it.next() } else { None })
                .collect()
        }
    }
}

/// Decompresses a zstd frame whose declared content size must fall in `bounds`.
fn unlz(payload: &[u8], bounds: std::ops::RangeInclusive<u64>) -> Result<Vec<u8>> {
    let size = zstd::zstd_safe::get_frame_content_size(payload)
        .ok()
        .flatten()
        .ok_or_else(|| Error::corrupt(0, "unreadable zstd frame header"))?;
    if !bounds.contains(&size) {
        return Err(Error::corrupt(0, format!("implausible content size {size}")));
    }
    zstd::bulk::decompress(payload, size as usize)
        .map_err(|e| Error::corrupt(0, format!("zstd: {e}")))
}

fn decode_ints(payload: &[u8], kind: EncodingKind, count: usize) -> Result<Vec<i64>> {
    if count == 0 && kind != EncodingKind::GeneralLZ {
        Reader::new(payload).finish()?;
        return Ok(Vec::new());
    }
    let mut r = Reader::new(payload);
    let out = match kind {
        EncodingKind::Plain => read_plain_ints(&mut r, count)?,
        EncodingKind::Delta => {
            let first = r.i64()?;
            let width = r.u8()?;
            let deltas = r.unpack(width, count - 1)?;
            let mut out = Vec::with_capacity(count);
            let mut cur = first;
            out.push(cur);
            for d in deltas {
                cur = cur.wrapping_add(unzigzag(d));
                out.push(cur);
            }
            out
        }
        EncodingKind::FrameOfReference => {
            let base = r.i64()?;
            let width = r.u8()?;
            r.unpack(width, count)?
                .into_iter()
                .map(|o| base.wrapping_add(o as i64))
                .collect()
        }
        EncodingKind::RunLength => {
            let mut out = Vec::with_capacity(count);
            while !r.is_empty() {
                let value = r.i64()?;
                let at = r.position();
                let run = r.varint()? as usize;
                if run == 0 || out.len() + run > count {
                    return Err(Error::corrupt(at, "run length inconsistent with row count"));
                }
                out.extend(std::iter::repeat_n(value, run));
            }
            out
        }
        EncodingKind::Dictionary => {
            let at = r.position();
            let card = r.varint()? as usize;
            if card == 0 || card > count {
                return Err(Error::corrupt(at, "dictionary cardinality out of range"));
            }
            let entries = read_plain_ints(&mut r, card)?;
            let at = r.position();
            let codes = r.unpack(dictionary_width(card), count)?;
            codes
                .into_iter()
                .map(|c| {
                    entries
                        .get(c as usize)
                        .copied()
                        .ok_or_else(|| Error::corrupt(at, "dictionary code out of range"))
                })
                .collect::<Result<_>>()?
        }
        EncodingKind::GeneralLZ => {
            let exact = count as u64 * 8;
            let plain = unlz(payload, exact..=exact)?;
            let mut inner = Reader::new(&plain);
            let out = read_plain_ints(&mut inner, count)?;
            inner.finish()?;
            return Ok(out);
        }
    };
    if out.len() != count {
        return Err(Error::corrupt(r.position(), "value count mismatch"));
    }
    r.finish()?;
    Ok(out)
}

fn read_plain_ints(r: &mut Reader<'_>, count: usize) -> Result<Vec<i64>> {
    let bytes = r.take(count * 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_plain_strings(r: &mut Reader<'_>, count: usize) -> Result<Vec<String>> {
    (0..count).map(|_| r.string()).collect()
}

fn decode_strings(payload: &[u8], kind: EncodingKind, count: usize) -> Result<Vec<String>> {
    if count == 0 && kind != EncodingKind::GeneralLZ {
        Reader::new(payload).finish()?;
        return Ok(Vec::new());
    }
    let mut r = Reader::new(payload);
    let out = match kind {
        EncodingKind::Plain => read_plain_strings(&mut r, count)?,
        EncodingKind::RunLength => {
            let mut out = Vec::with_capacity(count);
            while !r.is_empty() {
                let value = r.string()?;
                let at = r.position();
                let run = r.varint()? as usize;
                if run == 0 || out.len() + run > count {
                    return Err(Error::corrupt(at, "run length inconsistent with row count"));
                }
                out.extend(std::iter::repeat_n(value, run));
            }
            out
        }
        EncodingKind::Dictionary => {
            let at = r.position();
            let card = r.varint()? as usize;
            if card == 0 || card > count {
                return Err(Error::corrupt(at, "dictionary cardinality out of range"));
            }
            let entries = read_plain_strings(&mut r, card)?;
            let at = r.position();
            let codes = r.unpack(dictionary_width(card), count)?;
            codes
                .into_iter()
                .map(|c| {
                    entries
                        .get(c as usize)
                        .cloned()
                        .ok_or_else(|| Error::corrupt(at, "dictionary code out of range"))
                })
                .collect::<Result<_>>()?
        }
        EncodingKind::GeneralLZ => {
            let plain = unlz(payload, count as u64 * 4..=u32::MAX as u64 * 4)?;
            let mut inner = Reader::new(&plain);
            let out = read_plain_strings(&mut inner, count)?;
            inner.finish()?;
            return Ok(out);
        }
        EncodingKind::Delta | EncodingKind::FrameOfReference => unreachable!(),
    };
    if out.len() != count {
        return Err(Error::corrupt(r.position(), "value count mismatch"));
    }
    r.finish()?;
    Ok(out)
}
