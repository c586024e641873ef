//! Single-file table container.
//!
//! ```text
//! 0   magic "LEACOL" | u16 version
//! 8   u64 rows_per_slice
//! 16  u64 total_rows
//! 24  u64 directory offset
//! 32  u64 directory length
//! 40  slice records, back to back
//! ..  directory: u32 column count, (u32 name len, name, u8 dtype) per column,
//!     then per column and slice: u64 offset, u64 length, u8 kind, u64 rows
//! ```
//!
//! A slice record is the serialized [`EncodedSlice`]: u8 kind, u8 dtype,
//! u8 flags (bit 0: validity present), u8 reserved, u32 rows, u32 payload
//! length, optional validity bitmap, payload. All integers little-endian.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::codecs::{decode, DataType, EncodedSlice, EncodingKind, Slice, Validity, RECORD_HEADER_BYTES};
use crate::error::{Error, Result};

use super::{Column, Field, Table};

pub const MAGIC: &[u8; 6] = b"LEACOL";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_BYTES: u64 = 40;
pub const DIRECTORY_ENTRY_BYTES: u64 = 25;

impl EncodedSlice {
    pub fn to_record(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_bytes());
        out.push(self.kind.tag());
        out.push(self.dtype.tag());
        out.push(u8::from(self.validity.is_some()));
        out.push(0);
        out.extend_from_slice(&(self.row_count as u32).to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        if let Some(v) = &self.validity {
            out.extend_from_slice(v.as_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_record(buf: &[u8]) -> Result<Self> {
        if buf.len() < RECORD_HEADER_BYTES {
            return Err(Error::corrupt(buf.len(), "record shorter than its header"));
        }
        let kind = EncodingKind::from_tag(buf[0])
            .ok_or_else(|| Error::corrupt(0, format!("unknown encoding tag {}", buf[0])))?;
        let dtype = DataType::from_tag(buf[1])
            .ok_or_else(|| Error::corrupt(1, format!("unknown dtype tag {}", buf[1])))?;
        let flags = buf[2];
        if flags > 1 || buf[3] != 0 {
            return Err(Error::corrupt(2, "unknown record flags"));
        }
        let row_count = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let payload_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let bitmap_len = if flags == 1 { row_count.div_ceil(8) } else { 0 };
        let expected = RECORD_HEADER_BYTES + bitmap_len + payload_len;
        if buf.len() != expected {
            return Err(Error::corrupt(
                buf.len().min(expected),
                format!("record is {} bytes, header implies {expected}", buf.len()),
            ));
        }
        let validity = if flags == 1 {
            let bits = buf[RECORD_HEADER_BYTES..RECORD_HEADER_BYTES + bitmap_len].to_vec();
            Some(Validity::from_bytes(bits, row_count)?)
        } else {
            None
        };
        Ok(EncodedSlice {
            kind,
            dtype,
            row_count,
            validity,
            payload: buf[RECORD_HEADER_BYTES + bitmap_len..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectoryEntry {
    pub offset: u64,
    pub length: u64,
    pub kind: EncodingKind,
    pub row_count: u64,
}

/// Addresses one slice record inside a table file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceLocator {
    pub path: PathBuf,
    pub column: usize,
    pub slice: usize,
}

pub fn slice_count(total_rows: u64, rows_per_slice: u64) -> usize {
    total_rows.div_ceil(rows_per_slice) as usize
}

/// Streaming writer. Slice records may be pushed in any order; the
/// directory is emitted on [`TableWriter::finish`].
pub struct TableWriter {
    path: PathBuf,
    out: BufWriter<File>,
    schema: Vec<Field>,
    rows_per_slice: u64,
    pos: u64,
    entries: BTreeMap<(usize, usize), DirectoryEntry>,
}

impl TableWriter {
    pub fn create(path: impl AsRef<Path>, schema: Vec<Field>, rows_per_slice: usize) -> Result<Self> {
        if rows_per_slice == 0 {
            return Err(Error::InvalidArgument("rows_per_slice must be ≥ 1".into()));
        }
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        let mut out = BufWriter::new(file);
        out.write_all(&[0u8; HEADER_BYTES as usize])?;
        Ok(Self {
            path,
            out,
            schema,
            rows_per_slice: rows_per_slice as u64,
            pos: HEADER_BYTES,
            entries: BTreeMap::new(),
        })
    }

    pub fn push(&mut self, column: usize, slice: usize, encoded: &EncodedSlice) -> Result<()> {
        let field = self
            .schema
            .get(column)
            .ok_or_else(|| Error::SchemaMismatch(format!("no column {column}")))?;
        if field.dtype != encoded.dtype {
            return Err(Error::SchemaMismatch(format!(
                "column {} is {}, slice is {}",
                field.name, field.dtype, encoded.dtype
            )));
        }
        let record = encoded.to_record();
        self.out.write_all(&record)?;
        let prev = self.entries.insert(
            (column, slice),
            DirectoryEntry {
                offset: self.pos,
                length: record.len() as u64,
                kind: encoded.kind,
                row_count: encoded.row_count as u64,
            },
        );
        if prev.is_some() {
            return Err(Error::InvalidArgument(format!(
                "slice ({column}, {slice}) written twice"
            )));
        }
        self.pos += record.len() as u64;
        Ok(())
    }

    pub fn finish(mut self, total_rows: u64) -> Result<TableFile> {
        let n_slices = slice_count(total_rows, self.rows_per_slice);
        let mut dir = Vec::new();
        dir.extend_from_slice(&(self.schema.len() as u32).to_le_bytes());
        for f in &self.schema {
            dir.extend_from_slice(&(f.name.len() as u32).to_le_bytes());
            dir.extend_from_slice(f.name.as_bytes());
            dir.push(f.dtype.tag());
        }
        for c in 0..self.schema.len() {
            for s in 0..n_slices {
                let e = self.entries.get(&(c, s)).ok_or_else(|| {
                    Error::InvalidTable(format!("slice ({c}, {s}) was never written"))
                })?;
                dir.extend_from_slice(&e.offset.to_le_bytes());
                dir.extend_from_slice(&e.length.to_le_bytes());
                dir.push(e.kind.tag());
                dir.extend_from_slice(&e.row_count.to_le_bytes());
            }
        }
        if self.entries.len() != self.schema.len() * n_slices {
            return Err(Error::InvalidTable("more slices written than the row count allows".into()));
        }
        self.out.write_all(&dir)?;
        let mut header = Vec::with_capacity(HEADER_BYTES as usize);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&self.rows_per_slice.to_le_bytes());
        header.extend_from_slice(&total_rows.to_le_bytes());
        header.extend_from_slice(&self.pos.to_le_bytes());
        header.extend_from_slice(&(dir.len() as u64).to_le_bytes());
        self.out.seek(SeekFrom::Start(0))?;
        self.out.write_all(&header)?;
        self.out.flush()?;
        drop(self.out);
        TableFile::open(&self.path)
    }
}

/// An opened, structurally checked table file.
#[derive(Debug, Clone)]
pub struct TableFile {
    path: PathBuf,
    schema: Vec<Field>,
    rows_per_slice: u64,
    total_rows: u64,
    file_len: u64,
    directory_bytes: u64,
    entries: Vec<Vec<DirectoryEntry>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidTable(msg.into())
}

struct Cursor<'a>(&'a [u8], usize);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() - self.1 < n {
            return Err(bad("directory truncated"));
        }
        let s = &self.0[self.1..self.1 + n];
        self.1 += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl TableFile {
    /// Opens a table and checks header, directory bounds, entry overlap and
    /// per-slice row counts. Does not decode payloads; see [`TableFile::validate`].
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        let file_len = file.metadata()?.len();
        if file_len < HEADER_BYTES {
            return Err(bad("file shorter than header"));
        }
        let mut header = [0u8; HEADER_BYTES as usize];
        file.read_exact_at(&mut header, 0)?;
        if &header[..6] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([header[6], header[7]]);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let mut h = Cursor(&header[8..], 0);
        let rows_per_slice = h.u64()?;
        let total_rows = h.u64()?;
        let dir_off = h.u64()?;
        let dir_len = h.u64()?;
        if rows_per_slice == 0 {
            return Err(bad("rows_per_slice is zero"));
        }
        if dir_off < HEADER_BYTES || dir_off.checked_add(dir_len) != Some(file_len) {
            return Err(bad("directory out of bounds"));
        }
        let mut dir = vec![0u8; dir_len as usize];
        file.read_exact_at(&mut dir, dir_off)?;
        let mut c = Cursor(&dir, 0);
        let n_cols = c.u32()? as usize;
        let mut schema = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            let len = c.u32()? as usize;
            let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| bad("column name not utf-8"))?;
            let dtype = DataType::from_tag(c.u8()?).ok_or_else(|| bad("unknown dtype"))?;
            schema.push(Field { name, dtype });
        }
        let n_slices = slice_count(total_rows, rows_per_slice);
        let mut entries = Vec::with_capacity(n_cols);
        let mut spans = Vec::with_capacity(n_cols * n_slices);
        for (ci, field) in schema.iter().enumerate() {
            let mut col = Vec::with_capacity(n_slices);
            for s in 0..n_slices {
                let e = DirectoryEntry {
                    offset: c.u64()?,
                    length: c.u64()?,
                    kind: EncodingKind::from_tag(c.u8()?).ok_or_else(|| bad("unknown encoding"))?,
                    row_count: c.u64()?,
                };
                let expected_rows = if s + 1 == n_slices {
                    total_rows - rows_per_slice * s as u64
                } else {
                    rows_per_slice
                };
                if e.row_count != expected_rows {
                    return Err(bad(format!("slice ({ci}, {s}) has {} rows, expected {expected_rows}", e.row_count)));
                }
                if !e.kind.applies_to(field.dtype) {
                    return Err(bad(format!("slice ({ci}, {s}) uses {} on {}", e.kind, field.dtype)));
                }
                if e.offset < HEADER_BYTES || e.offset.checked_add(e.length).is_none_or(|end| end > dir_off) {
                    return Err(bad(format!("slice ({ci}, {s}) outside the payload region")));
                }
                spans.push((e.offset, e.offset + e.length));
                col.push(e);
            }
            entries.push(col);
        }
        if c.1 != dir.len() {
            return Err(bad("trailing bytes after directory"));
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(bad("overlapping slice records"));
        }
        Ok(Self {
            path,
            schema,
            rows_per_slice,
            total_rows,
            file_len,
            directory_bytes: dir_len,
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn schema(&self) -> &[Field] {
        &self.schema
    }

    pub fn rows_per_slice(&self) -> usize {
        self.rows_per_slice as usize
    }

    pub fn total_rows(&self) -> u64 {
        self.total_rows
    }

    pub fn slice_count(&self) -> usize {
        slice_count(self.total_rows, self.rows_per_slice)
    }

    pub fn file_len(&self) -> u64 {
        self.file_len
    }

    /// Header plus directory bytes: everything that is not a slice record.
    pub fn overhead_bytes(&self) -> u64 {
        HEADER_BYTES + self.directory_bytes
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|f| f.name == name)
    }

    pub fn entry(&self, column: usize, slice: usize) -> Result<&DirectoryEntry> {
        self.entries
            .get(column)
            .and_then(|c| c.get(slice))
            .ok_or_else(|| bad(format!("no slice ({column}, {slice})")))
    }

    pub fn entries(&self, column: usize) -> &[DirectoryEntry] {
        &self.entries[column]
    }

    pub fn locator(&self, column: usize, slice: usize) -> SliceLocator {
        SliceLocator {
            path: self.path.clone(),
            column,
            slice,
        }
    }

    pub fn read_slice(&self, column: usize, slice: usize) -> Result<EncodedSlice> {
        let e = *self.entry(column, slice)?;
        let file = File::open(&self.path)?;
        let mut buf = vec![0u8; e.length as usize];
        file.read_exact_at(&mut buf, e.offset)?;
        let encoded = EncodedSlice::from_record(&buf)?;
        if encoded.kind != e.kind || encoded.row_count as u64 != e.row_count {
            return Err(bad(format!("record ({column}, {slice}) disagrees with directory")));
        }
        if encoded.dtype != self.schema[column].dtype {
            return Err(bad(format!("record ({column}, {slice}) has wrong dtype")));
        }
        Ok(encoded)
    }

    pub fn read_column(&self, column: usize) -> Result<Column> {
        let field = self
            .schema
            .get(column)
            .ok_or_else(|| bad(format!("no column {column}")))?;
        let slices = (0..self.slice_count())
            .map(|s| decode(&self.read_slice(column, s)?))
            .collect::<Result<Vec<Slice>>>()?;
        Ok(Column {
            name: field.name.clone(),
            dtype: field.dtype,
            slices,
        })
    }

    pub fn load(&self) -> Result<Table> {
        let columns = (0..self.schema.len())
            .map(|c| self.read_column(c))
            .collect::<Result<_>>()?;
        Ok(Table {
            rows_per_slice: self.rows_per_slice(),
            columns,
        })
    }

    /// Full structural validation: re-opens the file and decodes every slice.
    pub fn validate(&self) -> Result<()> {
        let reopened = TableFile::open(&self.path)?;
        for c in 0..reopened.schema.len() {
            for s in 0..reopened.slice_count() {
                decode(&reopened.read_slice(c, s)?)?;
            }
        }
        Ok(())
    }
}

/// Writes an in-memory table with one encoding per (column, slice).
pub fn write_table(
    path: impl AsRef<Path>,
    table: &Table,
    kind_of: impl Fn(usize, usize) -> EncodingKind,
) -> Result<TableFile> {
    let mut w = TableWriter::create(path, table.schema(), table.rows_per_slice)?;
    for (ci, col) in table.columns.iter().enumerate() {
        for (si, slice) in col.slices.iter().enumerate() {
            w.push(ci, si, &crate::codecs::encode(slice, kind_of(ci, si))?)?;
        }
    }
    w.finish(table.total_rows() as u64)
}
