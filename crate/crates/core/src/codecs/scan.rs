//! Timed scan kernels used to label training data and to measure plans.

use std::fs::File;
use std::hint::black_box;
use std::os::unix::fs::FileExt;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{decode, EncodedSlice};
use crate::colstore::{SliceLocator, TableFile};
use crate::error::{Error, Result};

/// Number of timed repetitions per measurement; the minimum is reported.
pub const TIMED_RUNS: usize = 5;

static MEASUREMENT: Mutex<()> = Mutex::new(());

/// Serializes timed measurements process-wide.
pub(crate) fn measurement_token() -> MutexGuard<'static, ()> {
    MEASUREMENT.lock().unwrap_or_else(|e| e.into_inner())
}

/// Runs `f` `runs` times and returns the last result with the minimum
/// elapsed wall time in nanoseconds. Caller must hold the measurement token.
pub(crate) fn time_min_of<T>(runs: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    // warm the timing path itself, not the data
    let warm = Instant::now();
    black_box(warm.elapsed());

    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        let out = black_box(f()?);
        let ns = start.elapsed().as_nanos() as f64;
        best = best.min(ns);
        last = Some(out);
    }
    Ok((last.unwrap(), best))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMeasurement {
    /// Wrap-around sum of decoded values; independent of the encoding.
    pub aggregate: i64,
    pub elapsed_ns: f64,
    pub bytes_read: u64,
}

/// Linear storage device model: `latency + bytes / throughput`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub latency_ns: f64,
    pub throughput_bps: f64,
}

impl DeviceProfile {
    pub fn transfer_ns(&self, bytes: f64) -> f64 {
        self.latency_ns + bytes / self.throughput_bps * 1e9
    }
}

impl Default for DeviceProfile {
    /// A network-attached SSD: 200 µs first-byte latency, 250 MiB/s.
    fn default() -> Self {
        Self {
            latency_ns: 200_000.0,
            throughput_bps: 250.0 * 1024.0 * 1024.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StorageMode {
    /// Cold reads through the platform cache hook.
    Measured,
    /// Device model applied to the encoded size plus a timed in-memory scan.
    Modeled(DeviceProfile),
}

fn scan_unlocked(encoded: &EncodedSlice) -> Result<ScanMeasurement> {
    let (aggregate, elapsed_ns) = time_min_of(TIMED_RUNS, || Ok(decode(encoded)?.aggregate()))?;
    Ok(ScanMeasurement {
        aggregate,
        elapsed_ns,
        bytes_read: encoded.encoded_bytes() as u64,
    })
}

/// Decodes the whole slice and folds it into the aggregate, timing the
/// decode and fold.
pub fn scan_in_memory(encoded: &EncodedSlice) -> Result<ScanMeasurement> {
    let _token = measurement_token();
    scan_unlocked(encoded)
}

/// Evicts a file's pages from the OS cache before a cold read.
pub trait ColdCacheHook: Send + Sync {
    fn evict(&self, file: &File) -> Result<()>;
}

/// Linux hook: flush, `posix_fadvise(DONTNEED)`, then confirm with
/// `mincore` that no page of the file is still resident.
#[derive(Debug, Default, Clone, Copy)]
pub struct FadviseHook;

#[cfg(target_os = "linux")]
impl ColdCacheHook for FadviseHook {
    fn evict(&self, file: &File) -> Result<()> {
        use std::os::unix::io::AsRawFd;
        let fd = file.as_raw_fd();
        let len = file.metadata()?.len() as usize;
        // SAFETY: plain syscalls on a valid, open descriptor.
        unsafe {
            libc::fdatasync(fd);
            if libc::posix_fadvise(fd, 0, 0, libc::POSIX_FADV_DONTNEED) != 0 {
                return Err(Error::CacheHookUnavailable("posix_fadvise failed".into()));
            }
        }
        if len == 0 {
            return Ok(());
        }
        // SAFETY: read-only shared mapping of `len` bytes, unmapped before return;
        // mincore only inspects residency and never touches the pages.
        let resident = unsafe {
            let addr = libc::mmap(
                std::ptr::null_mut(),
                len,
                libc::PROT_READ,
                libc::MAP_SHARED,
                fd,
                0,
            );
            if addr == libc::MAP_FAILED {
                return Err(Error::CacheHookUnavailable("mmap failed".into()));
            }
            let page = libc::sysconf(libc::_SC_PAGESIZE) as usize;
            let mut vec = vec![0u8; len.div_ceil(page)];
            let rc = libc::mincore(addr, len, vec.as_mut_ptr() as *mut _);
            libc::munmap(addr, len);
            if rc != 0 {
                return Err(Error::CacheHookUnavailable("mincore failed".into()));
            }
            vec.iter().filter(|b| **b & 1 != 0).count()
        };
        if resident > 0 {
            return Err(Error::CacheHookUnavailable(format!(
                "{resident} pages still resident after eviction"
            )));
        }
        Ok(())
    }
}

#[cfg(not(target_os = "linux"))]
impl ColdCacheHook for FadviseHook {
    fn evict(&self, _file: &File) -> Result<()> {
        Err(Error::CacheHookUnavailable(
            "no cache eviction support on this platform".into(),
        ))
    }
}

pub fn platform_cache_hook() -> Box<dyn ColdCacheHook> {
    Box::new(FadviseHook)
}

/// Scans one slice record of a table file from storage.
pub fn scan_from_storage(locator: &SliceLocator, mode: StorageMode) -> Result<ScanMeasurement> {
    scan_from_storage_with_hook(locator, mode, platform_cache_hook().as_ref())
}

pub fn scan_from_storage_with_hook(
    locator: &SliceLocator,
    mode: StorageMode,
    hook: &dyn ColdCacheHook,
) -> Result<ScanMeasurement> {
    let table = TableFile::open(&locator.path)?;
    let entry = *table.entry(locator.column, locator.slice)?;
    match mode {
        StorageMode::Modeled(device) => {
            let encoded = table.read_slice(locator.column, locator.slice)?;
            let _token = measurement_token();
            let mem = scan_unlocked(&encoded)?;
            Ok(ScanMeasurement {
                aggregate: mem.aggregate,
                elapsed_ns: device.transfer_ns(entry.length as f64) + mem.elapsed_ns,
                bytes_read: entry.length,
            })
        }
        StorageMode::Measured => {
            let file = File::open(&locator.path)?;
            let _token = measurement_token();
            let mut best = f64::INFINITY;
            let mut aggregate = 0;
            for _ in 0..TIMED_RUNS {
                hook.evict(&file)?;
                let start = Instant::now();
                let mut buf = vec![0u8; entry.length as usize];
                file.read_exact_at(&mut buf, entry.offset)?;
                let encoded = EncodedSlice::from_record(&buf)?;
                aggregate = black_box(decode(&encoded)?.aggregate());
                best = best.min(start.elapsed().as_nanos() as f64);
            }
            Ok(ScanMeasurement {
                aggregate,
                elapsed_ns: best,
                bytes_read: entry.length,
            })
        }
    }
}

/// Times a cold read of the whole file (no decode). Used for device calibration.
pub(crate) fn cold_read_ns(file: &File, hook: &dyn ColdCacheHook, runs: usize) -> Result<f64> {
    let len = file.metadata()?.len() as usize;
    let _token = measurement_token();
    let mut best = f64::INFINITY;
    let mut buf = vec![0u8; len];
    for _ in 0..runs.max(1) {
        hook.evict(file)?;
        let start = Instant::now();
        file.read_exact_at(&mut buf, 0)?;
        black_box(&buf);
        best = best.min(start.elapsed().as_nanos() as f64);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::{encode, EncodingKind, Slice};

    #[test]
    fn plain_aggregate() {
        let e = encode(&Slice::ints([1, 2, 3]), EncodingKind::Plain).unwrap();
        assert_eq!(scan_in_memory(&e).unwrap().aggregate, 6);
    }

    #[test]
    fn aggregate_is_encoding_invariant() {
        let s = Slice::ints([5, 5, 5, 9]);
        for k in EncodingKind::ALL {
            let m = scan_in_memory(&encode(&s, k).unwrap()).unwrap();
            assert_eq!(m.aggregate, 24, "{k}");
        }
        let s = Slice::from_strings(vec![Some("ab".into()), None, Some("cde".into())]);
        for k in EncodingKind::applicable(s.dtype()) {
            assert_eq!(scan_in_memory(&encode(&s, k).unwrap()).unwrap().aggregate, 5);
        }
    }

    #[test]
    fn repeated_scans_agree_on_value() {
        let e = encode(&Slice::ints(0..10_000), EncodingKind::Delta).unwrap();
        let a = scan_in_memory(&e).unwrap();
        let b = scan_in_memory(&e).unwrap();
        assert_eq!(a.aggregate, b.aggregate);
        assert!(a.elapsed_ns > 0.0 && b.elapsed_ns > 0.0);
    }

    #[test]
    fn nulls_count_as_zero() {
        let s = Slice::from_ints(vec![Some(i64::MAX), None, Some(1)]);
        let e = encode(&s, EncodingKind::RunLength).unwrap();
        assert_eq!(scan_in_memory(&e).unwrap().aggregate, i64::MIN);
    }

    #[test]
    fn device_transfer_is_linear() {
        let d = DeviceProfile {
            latency_ns: 1000.0,
            throughput_bps: 1e9,
        };
        assert_eq!(d.transfer_ns(0.0), 1000.0);
        let one = d.transfer_ns(4096.0) - d.latency_ns;
        let two = d.transfer_ns(8192.0) - d.latency_ns;
        assert_eq!(two, 2.0 * one);
    }
}
