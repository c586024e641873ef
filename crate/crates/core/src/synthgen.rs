//! Synthetic training slices: skew-normal, discrete-uniform and run-structured
//! integers, pooled random strings, then scaling, sorting and null insertion.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codecs::{DataType, Slice, Values};
use crate::error::{Error, Result};

pub const FULL_ROWS_PER_SLICE: usize = 1_000_000;
pub const TEST_ROWS_PER_SLICE: usize = 65_536;

pub const MAX_CARDINALITY: u64 = 1_000_000;
pub const LOCATION_RANGE: f64 = 1e6;
pub const SPREAD_RANGE: (f64, f64) = (1.0, 1e5);
pub const SHAPE_RANGE: f64 = 20.0;
pub const SCALE_FACTOR_RANGE: (f64, f64) = (1.0, 1e3);
pub const MEAN_LENGTH_RANGE: (f64, f64) = (4.0, 256.0);
pub const MAX_NULL_FRACTION: f64 = 0.2;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws from the log-uniform distribution on `[lo, hi]`.
fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp().clamp(lo, hi)
}

/// Integer log-uniform on `[lo, hi]`: continuous on `[lo, hi + 1)`, floored.
fn log_uniform_int<R: Rng>(rng: &mut R, lo: u64, hi: u64) -> u64 {
    let x = rng.random_range((lo as f64).ln()..((hi + 1) as f64).ln()).exp();
    (x.floor() as u64).clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntFamily {
    SkewNormal,
    DiscreteUniform,
    Runs,
}

impl IntFamily {
    pub const ALL: [IntFamily; 3] = [IntFamily::SkewNormal, IntFamily::DiscreteUniform, IntFamily::Runs];
}

/// Parameters of one synthetic integer slice. Fields the family does not use
/// are still drawn and kept so that a spec fully reproduces its slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntSliceSpec {
    pub family: IntFamily,
    /// Skew-normal location; also the base of the uniform/run value domain.
    pub mean: f64,
    /// Skew-normal scale.
    pub spread: f64,
    /// Skew-normal shape parameter.
    pub skewness: f64,
    pub cardinality: u64,
    pub run_length: u64,
    pub scale_factor: f64,
    pub sorted: bool,
    pub null_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StringSliceSpec {
    pub mean_length: f64,
    pub cardinality: u64,
    pub sorted: bool,
    pub null_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dtype", rename_all = "snake_case")]
pub enum SliceSpec {
    Int(IntSliceSpec),
    String(StringSliceSpec),
}

impl SliceSpec {
    pub fn dtype(&self) -> DataType {
        match self {
            SliceSpec::Int(_) => DataType::Int64,
            SliceSpec::String(_) => DataType::String,
        }
    }

    fn sorted(&self) -> bool {
        match self {
            SliceSpec::Int(s) => s.sorted,
            SliceSpec::String(s) => s.sorted,
        }
    }

    fn null_fraction(&self) -> f64 {
        match self {
            SliceSpec::Int(s) => s.null_fraction,
            SliceSpec::String(s) => s.null_fraction,
        }
    }
}

/// How many slices each training phase consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceBudget {
    pub rows_per_slice: usize,
    pub n_size: usize,
    pub n_mem: usize,
    pub n_storage: usize,
}

impl SliceBudget {
    pub fn full_scale() -> Self {
        Self {
            rows_per_slice: FULL_ROWS_PER_SLICE,
            n_size: 1000,
            n_mem: 250,
            n_storage: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows_per_slice == 0 || self.n_size == 0 || self.n_mem == 0 || self.n_storage == 0 {
            return Err(Error::InvalidArgument("slice budget counts must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn sample_nulls_and_order<R: Rng>(rng: &mut R) -> (bool, f64) {
    let sorted = rng.random_bool(0.25);
    let null_fraction = if rng.random_bool(0.5) {
        0.0
    } else {
        // uniform on (0, MAX]
        MAX_NULL_FRACTION * (1.0 - rng.random::<f64>())
    };
    (sorted, null_fraction)
}

/// Draws a random integer slice spec. `rows` bounds the run length.
pub fn sample_int_spec(seed: u64, rows: usize) -> IntSliceSpec {
    let mut r = rng(seed);
    let family = IntFamily::ALL[r.random_range(0..3)];
    let mean = r.random_range(-LOCATION_RANGE..=LOCATION_RANGE);
    let spread = log_uniform(&mut r, SPREAD_RANGE.0, SPREAD_RANGE.1);
    let skewness = r.random_range(-SHAPE_RANGE..=SHAPE_RANGE);
    let cardinality = log_uniform_int(&mut r, 1, MAX_CARDINALITY);
    let run_length = log_uniform_int(&mut r, 1, rows.max(1) as u64);
    let scale_factor = log_uniform(&mut r, SCALE_FACTOR_RANGE.0, SCALE_FACTOR_RANGE.1);
    let (sorted, null_fraction) = sample_nulls_and_order(&mut r);
    IntSliceSpec {
        family,
        mean,
        spread,
        skewness,
        cardinality,
        run_length,
        scale_factor,
        sorted,
        null_fraction,
    }
}

pub fn sample_string_spec(seed: u64) -> StringSliceSpec {
    let mut r = rng(seed);
    let mean_length = log_uniform(&mut r, MEAN_LENGTH_RANGE.0, MEAN_LENGTH_RANGE.1);
    let cardinality = log_uniform_int(&mut r, 1, MAX_CARDINALITY);
    let (sorted, null_fraction) = sample_nulls_and_order(&mut r);
    StringSliceSpec {
        mean_length,
        cardinality,
        sorted,
        null_fraction,
    }
}

pub fn sample_spec(dtype: DataType, seed: u64, rows: usize) -> SliceSpec {
    match dtype {
        DataType::Int64 => SliceSpec::Int(sample_int_spec(seed, rows)),
        DataType::String => SliceSpec::String(sample_string_spec(seed)),
    }
}

/// Skew-normal variate with shape `alpha` from two independent standard
/// normals: `δ|u0| + sqrt(1-δ²) u1`, `δ = α / sqrt(1+α²)`.
pub fn skew_normal<R: Rng>(rng: &mut R, alpha: f64) -> f64 {
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let u0: f64 = StandardNormal.sample(rng);
    let u1: f64 = StandardNormal.sample(rng);
    delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1
}

fn saturating_round(x: f64) -> i64 {
    // `as` saturates at the i64 bounds and maps NaN to 0
    x.round() as i64
}

/// Raw family draw, before post-processing.
pub fn generate_int_slice(spec: &IntSliceSpec, rows: usize, seed: u64) -> Slice {
    let mut r = rng(seed);
    let base = saturating_round(spec.mean);
    let card = spec.cardinality.max(1);
    let values: Vec<i64> = match spec.family {
        IntFamily::SkewNormal => (0..rows)
            .map(|_| saturating_round(spec.mean + spec.spread * skew_normal(&mut r, spec.skewness)))
            .collect(),
        IntFamily::DiscreteUniform => (0..rows)
            .map(|_| base.saturating_add(r.random_range(0..card) as i64))
            .collect(),
        IntFamily::Runs => {
            let run = spec.run_length.max(1) as usize;
            let mut out = Vec::with_capacity(rows);
            while out.len() < rows {
                let v = base.saturating_add(r.random_range(0..card) as i64);
                let n = run.min(rows - out.len());
                out.extend(std::iter::repeat_n(v, n));
            }
            out
        }
    };
    Slice::ints(values)
}

/// Fills the slice uniformly from a pool of `spec.cardinality` distinct
/// lowercase strings. Only pool entries that are actually drawn get
/// materialized, so a million-entry pool costs no more than the slice.
pub fn generate_string_slice(spec: &StringSliceSpec, rows: usize, seed: u64) -> Slice {
    let mut r = rng(seed);
    let card = spec.cardinality.max(1);
    let picks: Vec<u64> = (0..rows).map(|_| r.random_range(0..card)).collect();
    let mut used = picks.clone();
    used.sort_unstable();
    used.dedup();
    let pool = string_pool(&mut r, used.len(), spec.mean_length.max(1.0));
    let values = picks
        .iter()
        .map(|p| Some(pool[used.binary_search(p).expect("pick is in the used set")].clone()))
        .collect();
    Slice::from_strings(values)
}

fn string_pool<R: Rng>(r: &mut R, cardinality: usize, mean_length: f64) -> Vec<String> {
    // 1 + failures-before-success has mean 1/p
    let lengths = Geometric::new(1.0 / mean_length).expect("mean_length ≥ 1");
    let mut seen: HashSet<String> = HashSet::with_capacity(cardinality);
    let mut pool = Vec::with_capacity(cardinality);
    while pool.len() < cardinality {
        let len = 1 + lengths.sample(r) as usize;
        let mut s: String = (0..len).map(|_| r.random_range(b'a'..=b'z') as char).collect();
        while seen.contains(&s) {
            s.push(r.random_range(b'a'..=b'z') as char);
        }
        seen.insert(s.clone());
        pool.push(s);
    }
    pool
}

/// Scale (integers only), then sort ascending (nulls last), then null out each
/// position independently with probability `null_fraction`.
pub fn postprocess(slice: Slice, spec: &SliceSpec, seed: u64) -> Result<Slice> {
    let mut r = rng(seed);
    let sorted = spec.sorted();
    let p_null = spec.null_fraction();
    let values = match (slice.into_values(), spec) {
        (Values::Int64(mut v), SliceSpec::Int(s)) => {
            if s.scale_factor != 1.0 {
                for x in v.iter_mut().flatten() {
                    let scaled = (*x as f64 * s.scale_factor).round();
                    if !(scaled >= i64::MIN as f64 && scaled < i64::MAX as f64) {
                        return Err(Error::IntegerOverflow {
                            value: *x,
                            factor: s.scale_factor,
                        });
                    }
                    *x = scaled as i64;
                }
            }
            if sorted {
                v.sort_unstable_by_key(|x| (x.is_none(), *x));
            }
            insert_nulls(&mut v, p_null, &mut r);
            Values::Int64(v)
        }
        (Values::String(mut v), SliceSpec::String(_)) => {
            if sorted {
                v.sort_unstable_by(|a, b| (a.is_none(), a).cmp(&(b.is_none(), b)));
            }
            insert_nulls(&mut v, p_null, &mut r);
            Values::String(v)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "post-processing spec dtype differs from slice dtype".into(),
            ))
        }
    };
    Ok(match values {
        Values::Int64(v) => Slice::from_ints(v),
        Values::String(v) => Slice::from_strings(v),
    })
}

fn insert_nulls<T, R: Rng>(v: &mut [Option<T>], p: f64, r: &mut R) {
    if p <= 0.0 {
        return;
    }
    for x in v.iter_mut() {
        if r.random_bool(p) {
            *x = None;
        }
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut z = master;
    for p in parts {
        z ^= p.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Generates a slice from a spec: family draw with `seed`, post-processing
/// with a seed derived from it.
pub fn generate(spec: &SliceSpec, rows: usize, seed: u64) -> Result<Slice> {
    let raw = match spec {
        SliceSpec::Int(s) => generate_int_slice(s, rows, seed),
        SliceSpec::String(s) => generate_string_slice(s, rows, seed),
    };
    postprocess(raw, spec, derive_seed(seed, &[0x9057]))
}

/// One line of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub spec: SliceSpec,
    pub rows: usize,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn regenerate(&self) -> Result<Slice> {
        generate(&self.spec, self.rows, self.seed)
    }
}

pub fn write_manifest<W: Write>(mut out: W, records: &[ManifestRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestRecord>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
