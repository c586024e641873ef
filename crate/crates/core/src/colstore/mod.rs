//! Minimal columnar container: CSV ingestion, slice-partitioned table files,
//! plan application and full-column scans.

mod file;
pub mod tpch;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advisor::EncodingPlan;
use crate::codecs::{
    decode, encode, scan_from_storage, scan_in_memory, DataType, DeviceProfile, EncodingKind,
    ScanMeasurement, Slice, StorageMode, Values,
};
use crate::error::{Error, Result};

pub use file::{
    slice_count, write_table, DirectoryEntry, SliceLocator, TableFile, TableWriter,
    DIRECTORY_ENTRY_BYTES, FORMAT_VERSION, HEADER_BYTES, MAGIC,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub dtype: DataType,
}

impl Field {
    pub fn new(name: impl Into<String>, dtype: DataType) -> Self {
        Self {
            name: name.into(),
            dtype,
        }
    }
}

/// Parses `name:int,other:string` into a schema.
pub fn parse_schema(spec: &str) -> Result<Vec<Field>> {
    spec.split(',')
        .map(|part| {
            let (name, ty) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("schema entry {part:?} lacks ':type'")))?;
            let dtype = match ty.trim() {
                "int" | "int64" => DataType::Int64,
                "string" | "str" => DataType::String,
                other => return Err(Error::InvalidArgument(format!("unknown column type {other:?}"))),
            };
            Ok(Field::new(name.trim(), dtype))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub dtype: DataType,
    pub slices: Vec<Slice>,
}

impl Column {
    pub fn rows(&self) -> usize {
        self.slices.iter().map(Slice::row_count).sum()
    }
}

/// In-memory, decoded table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub rows_per_slice: usize,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn schema(&self) -> Vec<Field> {
        self.columns
            .iter()
            .map(|c| Field::new(c.name.clone(), c.dtype))
            .collect()
    }

    pub fn total_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::rows)
    }

    /// Splits full column vectors into slices of `rows_per_slice`.
    pub fn from_columns(rows_per_slice: usize, columns: Vec<(Field, Values)>) -> Self {
        let columns = columns
            .into_iter()
            .map(|(f, values)| Column {
                name: f.name,
                dtype: f.dtype,
                slices: split_values(values, rows_per_slice),
            })
            .collect();
        Self {
            rows_per_slice,
            columns,
        }
    }
}

/// Splits one column's full value vector into slices of `rows_per_slice`.
pub fn split_values(values: Values, rows_per_slice: usize) -> Vec<Slice> {
    match values {
        Values::Int64(v) => v
            .chunks(rows_per_slice)
            .map(|c| Slice::from_ints(c.to_vec()))
            .collect(),
        Values::String(v) => v
            .chunks(rows_per_slice)
            .map(|c| Slice::from_strings(c.to_vec()))
            .collect(),
    }
}

enum Builder {
    Int(Vec<Option<i64>>),
    Str(Vec<Option<String>>),
}

impl Builder {
    fn new(dtype: DataType, cap: usize) -> Self {
        match dtype {
            DataType::Int64 => Builder::Int(Vec::with_capacity(cap)),
            DataType::String => Builder::Str(Vec::with_capacity(cap)),
        }
    }

    fn len(&self) -> usize {
        match self {
            Builder::Int(v) => v.len(),
            Builder::Str(v) => v.len(),
        }
    }

    fn take(&mut self) -> Slice {
        match self {
            Builder::Int(v) => Slice::from_ints(std::mem::take(v)),
            Builder::Str(v) => Slice::from_strings(std::mem::take(v)),
        }
    }
}

/// Reads a headed, comma-separated UTF-8 file into a Plain-encoded table.
/// Empty fields are nulls.
pub fn ingest_csv(
    csv_path: impl AsRef<Path>,
    schema: &[Field],
    rows_per_slice: usize,
    out: impl AsRef<Path>,
) -> Result<TableFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path.as_ref())?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let names: Vec<&str> = schema.iter().map(|f| f.name.as_str()).collect();
    if header != names {
        return Err(Error::SchemaMismatch(format!(
            "csv header {header:?} does not match schema {names:?}"
        )));
    }
    let mut writer = TableWriter::create(out, schema.to_vec(), rows_per_slice)?;
    let mut builders: Vec<Builder> = schema
        .iter()
        .map(|f| Builder::new(f.dtype, rows_per_slice))
        .collect();
    let mut rows: u64 = 0;
    let mut slice_index = 0;
    for (ri, record) in reader.records().enumerate() {
        // data rows are 1-based after the header line
        let row = ri + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            reason: e.to_string(),
        })?;
        if record.len() != schema.len() {
            return Err(Error::Parse {
                row,
                column: record.len().min(schema.len()),
                reason: format!("expected {} fields, found {}", schema.len(), record.len()),
            });
        }
        for (ci, (field, b)) in record.iter().zip(builders.iter_mut()).enumerate() {
            match b {
                Builder::Int(v) => v.push(if field.is_empty() {
                    None
                } else {
                    Some(field.trim().parse::<i64>().map_err(|e| Error::Parse {
                        row,
                        column: ci,
                        reason: format!("{field:?}: {e}"),
                    })?)
                }),
                Builder::Str(v) => v.push((!field.is_empty()).then(|| field.to_owned())),
            }
        }
        rows += 1;
        if builders[0].len() == rows_per_slice {
            flush(&mut writer, &mut builders, slice_index)?;
            slice_index += 1;
        }
    }
    if builders.first().is_some_and(|b| b.len() > 0) {
        flush(&mut writer, &mut builders, slice_index)?;
    }
    writer.finish(rows)
}

fn flush(writer: &mut TableWriter, builders: &mut [Builder], slice_index: usize) -> Result<()> {
    for (ci, b) in builders.iter_mut().enumerate() {
        writer.push(ci, slice_index, &encode(&b.take(), EncodingKind::Plain)?)?;
    }
    Ok(())
}

/// Writes a table back out as CSV (nulls become empty fields).
pub fn export_csv(table: &TableFile, out: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(out.as_ref())?;
    w.write_record(table.schema().iter().map(|f| f.name.as_str()))?;
    let columns: Vec<Column> = (0..table.schema().len())
        .map(|c| table.read_column(c))
        .collect::<Result<_>>()?;
    for s in 0..table.slice_count() {
        let rows = columns[0].slices[s].row_count();
        for r in 0..rows {
            let fields: Vec<String> = columns
                .iter()
                .map(|c| match c.slices[s].values() {
                    Values::Int64(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                    Values::String(v) => v[r].clone().unwrap_or_default(),
                })
                .collect();
            w.write_record(&fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Re-encodes every slice of `table` per `plan` into a new file.
pub fn apply_plan(table: &TableFile, plan: &EncodingPlan, out: impl AsRef<Path>) -> Result<TableFile> {
    let n_slices = table.slice_count();
    let mut kinds = Vec::with_capacity(table.schema().len());
    for field in table.schema() {
        let col = plan.column(&field.name).ok_or_else(|| {
            Error::SchemaMismatch(format!("plan does not cover column {}", field.name))
        })?;
        let per_slice = (0..n_slices)
            .map(|s| {
                col.kind_for(s).ok_or_else(|| {
                    Error::SchemaMismatch(format!("plan lacks slice {s} of column {}", field.name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if col.slice_count().is_some_and(|n| n != n_slices) {
            return Err(Error::SchemaMismatch(format!(
                "plan has {} slices for column {}, table has {n_slices}",
                col.slice_count().unwrap(),
                field.name
            )));
        }
        kinds.push(per_slice);
    }
    let mut writer = TableWriter::create(out, table.schema().to_vec(), table.rows_per_slice())?;
    for (ci, per_slice) in kinds.iter().enumerate() {
        for (si, kind) in per_slice.iter().enumerate() {
            let slice = decode(&table.read_slice(ci, si)?)?;
            writer.push(ci, si, &encode(&slice, *kind)?)?;
        }
    }
    writer.finish(table.total_rows())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScanMode {
    InMemory,
    FromStorageMeasured,
    FromStorageModeled(DeviceProfile),
}

/// Scans every slice of a column in order and folds the measurements.
pub fn scan_column(table: &TableFile, column: usize, mode: ScanMode) -> Result<ScanMeasurement> {
    let mut total = ScanMeasurement {
        aggregate: 0,
        elapsed_ns: 0.0,
        bytes_read: 0,
    };
    for m in scan_column_slices(table, column, mode)? {
        total.aggregate = total.aggregate.wrapping_add(m.aggregate);
        total.elapsed_ns += m.elapsed_ns;
        total.bytes_read += m.bytes_read;
    }
    Ok(total)
}

/// Per-slice measurements of a full column scan, in slice order.
pub fn scan_column_slices(table: &TableFile, column: usize, mode: ScanMode) -> Result<Vec<ScanMeasurement>> {
    if column >= table.schema().len() {
        return Err(Error::InvalidArgument(format!("no column {column}")));
    }
    (0..table.slice_count())
        .map(|s| {
            Ok(match mode {
            ScanMode::InMemory => scan_in_memory(&table.read_slice(column, s)?)?,
            ScanMode::FromStorageMeasured => {
                scan_from_storage(&table.locator(column, s), StorageMode::Measured)?
            }
            ScanMode::FromStorageModeled(d) => {
                scan_from_storage(&table.locator(column, s), StorageMode::Modeled(d))?
            }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("in.csv");
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn schema() -> Vec<Field> {
        parse_schema("id:int,name:string").unwrap()
    }

    #[test]
    fn ingest_partitions_by_rows_per_slice() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("id,name\n");
        for i in 0..10 {
            body.push_str(&format!("{i},n{}\n", i % 3));
        }
        let csv = write_csv(dir.path(), &body);
        let t = ingest_csv(&csv, &schema(), 4, dir.path().join("t.col")).unwrap();
        let rows: Vec<u64> = t.entries(0).iter().map(|e| e.row_count).collect();
        assert_eq!(rows, vec![4, 4, 2]);
        assert!(t.entries(1).iter().all(|e| e.kind == EncodingKind::Plain));
        t.validate().unwrap();
    }

    #[test]
    fn empty_field_is_null_and_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let body = "id,name\n1,a\n,b\n-3,\n0042,c\n";
        let csv = write_csv(dir.path(), body);
        let t = ingest_csv(&csv, &schema(), 3, dir.path().join("t.col")).unwrap();
        let col = t.read_column(0).unwrap();
        assert_eq!(col.slices[0], Slice::from_ints(vec![Some(1), None, Some(-3)]));
        let out = dir.path().join("out.csv");
        export_csv(&t, &out).unwrap();
        // canonical number formatting drops the leading zeros
        assert_eq!(std::fs::read_to_string(out).unwrap(), "id,name\n1,a\n,b\n-3,\n42,c\n");
    }

    #[test]
    fn parse_errors_carry_position() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(dir.path(), "id,name\n1,a\nx,b\n");
        match ingest_csv(&csv, &schema(), 4, dir.path().join("t.col")) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 0)),
            other => panic!("{other:?}"),
        }
        let csv = write_csv(dir.path(), "id,other\n1,a\n");
        assert!(matches!(
            ingest_csv(&csv, &schema(), 4, dir.path().join("t.col")),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn column_scan_folds_slices() {
        let dir = tempfile::tempdir().unwrap();
        let table = Table::from_columns(
            100,
            vec![(Field::new("v", DataType::Int64), Values::Int64((0..1000).map(Some).collect()))],
        );
        let f = write_table(dir.path().join("t.col"), &table, |_, _| EncodingKind::Delta).unwrap();
        let mem = scan_column(&f, 0, ScanMode::InMemory).unwrap();
        let per_slice: i64 = table.columns[0].slices.iter().map(Slice::aggregate).sum();
        assert_eq!(mem.aggregate, per_slice);
        assert_eq!(mem.aggregate, 499_500);

        let device = DeviceProfile {
            latency_ns: 10_000.0,
            throughput_bps: 1e8,
        };
        let modeled = scan_column(&f, 0, ScanMode::FromStorageModeled(device)).unwrap();
        assert_eq!(modeled.aggregate, mem.aggregate);
        assert_eq!(modeled.bytes_read, f.entries(0).iter().map(|e| e.length).sum::<u64>());

        let slices = scan_column_slices(&f, 0, ScanMode::FromStorageModeled(device)).unwrap();
        let mut expected = 0.0;
        for (m, e) in slices.iter().zip(f.entries(0)) {
            let mem_ns = m.elapsed_ns - device.transfer_ns(e.length as f64);
            assert!(mem_ns > 0.0);
            expected += device.latency_ns + e.length as f64 / device.throughput_bps * 1e9 + mem_ns;
        }
        let total: f64 = slices.iter().map(|m| m.elapsed_ns).sum();
        assert!((total - expected).abs() <= 1e-6 * total);
    }

    #[test]
    fn schema_parsing() {
        assert!(parse_schema("a:int,b:float").is_err());
        assert!(parse_schema("a").is_err());
        assert_eq!(parse_schema("a:int64, b:str").unwrap()[1].dtype, DataType::String);
    }
}
