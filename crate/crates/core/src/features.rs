//! Slice statistics, contiguous samples and per-encoding feature vectors.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codecs::{encode, DataType, EncodingKind, Slice, Values};
use crate::error::{Error, Result};

/// Fraction of a slice taken as the contiguous sample.
pub const SAMPLE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dtype", rename_all = "snake_case")]
pub enum TypedStatistics {
    Int {
        /// max − min over non-null values.
        range: u64,
        cardinality: u64,
        adj_mean: f64,
        adj_variance: f64,
        adj_skewness: f64,
    },
    String {
        cardinality: u64,
        mean_length: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceStatistics {
    pub row_count: u64,
    pub null_fraction: f64,
    #[serde(flatten)]
    pub typed: TypedStatistics,
}

impl SliceStatistics {
    pub fn dtype(&self) -> DataType {
        match self.typed {
            TypedStatistics::Int { .. } => DataType::Int64,
            TypedStatistics::String { .. } => DataType::String,
        }
    }

    pub fn cardinality(&self) -> u64 {
        match self.typed {
            TypedStatistics::Int { cardinality, .. } | TypedStatistics::String { cardinality, .. } => {
                cardinality
            }
        }
    }

    /// The quantity a forest cannot extrapolate past: integer range or
    /// mean string length.
    pub fn extent(&self) -> f64 {
        match self.typed {
            TypedStatistics::Int { range, .. } => range as f64,
            TypedStatistics::String { mean_length, .. } => mean_length,
        }
    }

    /// Statistic coordinates in feature-vector order.
    pub fn as_features(&self) -> Vec<f64> {
        let mut v = vec![self.row_count as f64, self.null_fraction];
        match self.typed {
            TypedStatistics::Int {
                range,
                cardinality,
                adj_mean,
                adj_variance,
                adj_skewness,
            } => v.extend([range as f64, cardinality as f64, adj_mean, adj_variance, adj_skewness]),
            TypedStatistics::String {
                cardinality,
                mean_length,
            } => v.extend([cardinality as f64, mean_length]),
        }
        v
    }
}

/// Population moments of `xs`: mean, variance m2, skewness m3 / m2^1.5
/// (0 when m2 = 0). All zero for an empty input.
pub fn moments(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (m2, m3) = xs.iter().fold((0.0, 0.0), |(a, b), x| {
        let d = x - mean;
        (a + d * d, b + d * d * d)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    (mean, m2, skew)
}

/// Exact statistics over the whole slice.
pub fn slice_statistics(slice: &Slice) -> SliceStatistics {
    let rows = slice.row_count();
    let null_fraction = if rows == 0 {
        0.0
    } else {
        slice.null_count() as f64 / rows as f64
    };
    let typed = match slice.values() {
        Values::Int64(v) => {
            let dense: Vec<i64> = v.iter().flatten().copied().collect();
            let cardinality = dense.iter().collect::<HashSet<_>>().len() as u64;
            if dense.len() < 2 {
                TypedStatistics::Int {
                    range: 0,
                    cardinality,
                    adj_mean: 0.0,
                    adj_variance: 0.0,
                    adj_skewness: 0.0,
                }
            } else {
                let min = *dense.iter().min().unwrap();
                let max = *dense.iter().max().unwrap();
                let diffs: Vec<f64> = dense
                    .windows(2)
                    .map(|w| (w[1] as i128 - w[0] as i128) as f64)
                    .collect();
                let (adj_mean, adj_variance, adj_skewness) = moments(&diffs);
                TypedStatistics::Int {
                    range: max.wrapping_sub(min) as u64,
                    cardinality,
                    adj_mean,
                    adj_variance,
                    adj_skewness,
                }
            }
        }
        Values::String(v) => {
            let dense: Vec<&str> = v.iter().flatten().map(String::as_str).collect();
            let cardinality = dense.iter().collect::<HashSet<_>>().len() as u64;
            let mean_length = if dense.is_empty() {
                0.0
            } else {
                dense.iter().map(|s| s.len()).sum::<usize>() as f64 / dense.len() as f64
            };
            TypedStatistics::String {
                cardinality,
                mean_length,
            }
        }
    };
    SliceStatistics {
        row_count: rows as u64,
        null_fraction,
        typed,
    }
}

/// Contiguous window of `max(1, floor(fraction · rows))` values whose start
/// is drawn uniformly from the valid starts using `seed`.
pub fn contiguous_sample(slice: &Slice, fraction: f64, seed: u64) -> Result<Slice> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("sample fraction {fraction} not in (0, 1]")));
    }
    let rows = slice.row_count();
    if rows == 0 {
        return Ok(slice.clone());
    }
    let len = ((fraction * rows as f64).floor() as usize).clamp(1, rows);
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..=rows - len);
    Ok(slice.window(start, len))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProfile {
    pub sample_rows: u64,
    pub sample_encoded_bytes: BTreeMap<EncodingKind, u64>,
}

impl SampleProfile {
    pub fn bytes(&self, kind: EncodingKind) -> Result<u64> {
        self.sample_encoded_bytes
            .get(&kind)
            .copied()
            .ok_or(Error::MissingProfileEntry(kind))
    }
}

/// Encodes the sample under every applicable encoding.
pub fn sample_profile(sample: &Slice) -> Result<SampleProfile> {
    let sample_encoded_bytes = EncodingKind::applicable(sample.dtype())
        .map(|k| Ok((k, encode(sample, k)?.encoded_bytes() as u64)))
        .collect::<Result<_>>()?;
    Ok(SampleProfile {
        sample_rows: sample.row_count() as u64,
        sample_encoded_bytes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureVariant {
    /// Slice statistics and the sample encoded size.
    Full,
    /// Sample encoded size and sample rows only.
    SampleOnly,
    /// Slice statistics only; no sample is taken.
    StatisticsOnly,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 3] = [
        FeatureVariant::Full,
        FeatureVariant::SampleOnly,
        FeatureVariant::StatisticsOnly,
    ];

    pub fn uses_sample(self) -> bool {
        self != FeatureVariant::StatisticsOnly
    }

    pub fn uses_statistics(self) -> bool {
        self != FeatureVariant::SampleOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::Full => "full",
            FeatureVariant::SampleOnly => "sample-only",
            FeatureVariant::StatisticsOnly => "statistics-only",
        }
    }
}

/// Names of the size-model input coordinates, in order.
///
/// Int64 Full: row_count, null_fraction, range, cardinality, adj_mean,
/// adj_variance, adj_skewness, sample_bytes, sample_rows.
/// String Full: row_count, null_fraction, cardinality, mean_length,
/// sample_bytes, sample_rows.
pub fn feature_names(dtype: DataType, variant: FeatureVariant) -> Vec<&'static str> {
    let mut names = Vec::new();
    if variant.uses_statistics() {
        names.extend(["row_count", "null_fraction"]);
        match dtype {
            DataType::Int64 => names.extend(["range", "cardinality", "adj_mean", "adj_variance", "adj_skewness"]),
            DataType::String => names.extend(["cardinality", "mean_length"]),
        }
    }
    if variant.uses_sample() {
        names.extend(["sample_bytes", "sample_rows"]);
    }
    names
}

pub fn feature_layout_id(dtype: DataType, variant: FeatureVariant) -> String {
    format!("{dtype}/{}/v1", variant.name())
}

pub fn feature_vector(
    stats: &SliceStatistics,
    profile: Option<&SampleProfile>,
    kind: EncodingKind,
    variant: FeatureVariant,
) -> Result<Vec<f64>> {
    let mut v = if variant.uses_statistics() {
        stats.as_features()
    } else {
        Vec::with_capacity(2)
    };
    if variant.uses_sample() {
        let profile = profile.ok_or(Error::MissingProfileEntry(kind))?;
        v.push(profile.bytes(kind)? as f64);
        v.push(profile.sample_rows as f64);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn int_stats(s: &Slice) -> (u64, u64, f64, f64, f64) {
        match slice_statistics(s).typed {
            TypedStatistics::Int {
                range,
                cardinality,
                adj_mean,
                adj_variance,
                adj_skewness,
            } => (range, cardinality, adj_mean, adj_variance, adj_skewness),
            _ => panic!(),
        }
    }

    #[test]
    fn small_int_example() {
        // distances [2, 4]: mean 3, population variance 1, symmetric → skew 0
        assert_eq!(int_stats(&Slice::ints([1, 3, 7])), (6, 3, 3.0, 1.0, 0.0));
    }

    #[test]
    fn constant_slice() {
        assert_eq!(int_stats(&Slice::ints([9; 50])), (0, 1, 0.0, 0.0, 0.0));
    }

    #[test]
    fn fewer_than_two_values() {
        assert_eq!(int_stats(&Slice::from_ints(vec![None, Some(4), None])), (0, 1, 0.0, 0.0, 0.0));
        let s = slice_statistics(&Slice::from_ints(vec![None, Some(4), None]));
        assert!((s.null_fraction - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nulls_are_skipped_for_adjacency() {
        let s = Slice::from_ints(vec![Some(1), None, Some(3), None, Some(7)]);
        assert_eq!(int_stats(&s), (6, 3, 3.0, 1.0, 0.0));
    }

    #[test]
    fn string_example() {
        let s = slice_statistics(&Slice::strings(["aa", "bbbb"]));
        assert_eq!(
            s.typed,
            TypedStatistics::String {
                cardinality: 2,
                mean_length: 3.0
            }
        );
    }

    #[test]
    fn sample_windows() {
        let s = Slice::ints(0..1_000_000);
        let w = contiguous_sample(&s, 0.01, 5).unwrap();
        let v: Vec<i64> = w.as_ints().unwrap().iter().flatten().copied().collect();
        assert_eq!(v.len(), 10_000);
        assert!(v.windows(2).all(|p| p[1] == p[0] + 1));
        assert_eq!(contiguous_sample(&s, 0.01, 5).unwrap(), w);
        let small = Slice::ints(0..10);
        for seed in 0..20 {
            assert_eq!(contiguous_sample(&small, 1.0, seed).unwrap(), small);
            assert_eq!(contiguous_sample(&small, 0.01, seed).unwrap().row_count(), 1);
        }
        assert!(contiguous_sample(&small, 0.0, 1).is_err());
        assert!(contiguous_sample(&small, 1.5, 1).is_err());
    }

    #[test]
    fn profile_entries() {
        let constant = Slice::ints([77; 10_000]);
        let p = sample_profile(&constant).unwrap();
        assert_eq!(p.sample_encoded_bytes.len(), 6);
        // 12-byte record header, then: i64 value + 2-byte varint run (RLE);
        // i64 base/first + width byte with zero-width packing (FOR, Delta);
        // varint cardinality + one i64 entry with zero-width codes (Dictionary).
        assert_eq!(p.bytes(EncodingKind::RunLength).unwrap(), 12 + 8 + 2);
        for k in [EncodingKind::FrameOfReference, EncodingKind::Delta, EncodingKind::Dictionary] {
            assert_eq!(p.bytes(k).unwrap(), 12 + 9, "{k}");
        }
        assert_eq!(p.bytes(EncodingKind::Plain).unwrap(), 12 + 8 * 10_000);
        assert!(p.bytes(EncodingKind::GeneralLZ).unwrap() < p.bytes(EncodingKind::Plain).unwrap());
        let p = sample_profile(&Slice::strings(["a", "b"])).unwrap();
        assert_eq!(p.sample_encoded_bytes.len(), 4);
        assert!(matches!(p.bytes(EncodingKind::Delta), Err(Error::MissingProfileEntry(_))));
    }

    #[test]
    fn vector_layouts() {
        let s = Slice::ints((0..1000).map(|i| i % 17));
        let stats = slice_statistics(&s);
        let profile = sample_profile(&contiguous_sample(&s, 0.01, 1).unwrap()).unwrap();
        let full = feature_vector(&stats, Some(&profile), EncodingKind::Delta, FeatureVariant::Full).unwrap();
        assert_eq!(full.len(), 9);
        assert_eq!(full.len(), feature_names(DataType::Int64, FeatureVariant::Full).len());
        let stats_only =
            feature_vector(&stats, None, EncodingKind::Delta, FeatureVariant::StatisticsOnly).unwrap();
        assert_eq!(stats_only, full[..7]);
        let a = feature_vector(&stats, Some(&profile), EncodingKind::Plain, FeatureVariant::SampleOnly).unwrap();
        let b = feature_vector(&stats, Some(&profile), EncodingKind::RunLength, FeatureVariant::SampleOnly).unwrap();
        assert_eq!(a.len(), 2);
        assert_ne!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert!(matches!(
            feature_vector(&stats, None, EncodingKind::Plain, FeatureVariant::Full),
            Err(Error::MissingProfileEntry(_))
        ));
        let st = slice_statistics(&Slice::strings(["x"]));
        assert_eq!(
            feature_vector(&st, Some(&sample_profile(&Slice::strings(["x"])).unwrap()), EncodingKind::Plain, FeatureVariant::Full)
                .unwrap()
                .len(),
            6
        );
    }

    #[test]
    fn sampling_underestimates_high_cardinality() {
        use crate::synthgen::{generate_int_slice, IntFamily, IntSliceSpec};
        let spec = IntSliceSpec {
            family: IntFamily::DiscreteUniform,
            mean: 0.0,
            spread: 1.0,
            skewness: 0.0,
            cardinality: 100_000,
            run_length: 1,
            scale_factor: 1.0,
            sorted: false,
            null_fraction: 0.0,
        };
        for seed in 0..5 {
            let s = generate_int_slice(&spec, 1_000_000, seed);
            let full = slice_statistics(&s).cardinality();
            let sample = slice_statistics(&contiguous_sample(&s, 0.01, seed).unwrap()).cardinality();
            assert!(full > 2 * sample, "true {full}, sample {sample}");
        }
    }

    proptest! {
        #[test]
        fn statistics_match_brute_force(v in proptest::collection::vec(proptest::option::weighted(0.8, -1000i64..1000), 0..200)) {
            let s = Slice::from_ints(v.clone());
            let (range, card, mean, var, skew) = int_stats(&s);
            let dense: Vec<i64> = v.iter().flatten().copied().collect();
            let mut distinct = dense.clone();
            distinct.sort();
            distinct.dedup();
            prop_assert_eq!(card, distinct.len() as u64);
            if dense.len() < 2 {
                prop_assert_eq!((range, mean, var, skew), (0, 0.0, 0.0, 0.0));
            } else {
                prop_assert_eq!(range, (distinct[distinct.len() - 1] - distinct[0]) as u64);
                // independent two-pass computation
                let d: Vec<f64> = (1..dense.len()).map(|i| (dense[i] - dense[i - 1]) as f64).collect();
                let n = d.len() as f64;
                let mu = d.iter().sum::<f64>() / n;
                let m2 = d.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
                let m3 = d.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / n;
                prop_assert!((mean - mu).abs() <= 1e-9 * (1.0 + mu.abs()));
                prop_assert!((var - m2).abs() <= 1e-9 * (1.0 + m2));
                prop_assert!(var >= 0.0);
                let sk = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
                prop_assert!((skew - sk).abs() <= 1e-6 * (1.0 + sk.abs()));
            }
        }

        #[test]
        fn sampling_does_not_mutate(v in proptest::collection::vec(any::<i64>(), 1..300), seed in any::<u64>(), frac in 0.001f64..=1.0) {
            let s = Slice::ints(v);
            let before = s.clone();
            let w = contiguous_sample(&s, frac, seed).unwrap();
            prop_assert_eq!(&s, &before);
            prop_assert_eq!(w.row_count(), ((frac * s.row_count() as f64).floor() as usize).clamp(1, s.row_count()));
        }
    }
}
