//! Encoding selection: the per-slice prediction chain, objectives, plans at
//! column or slice granularity, and brute-force reference plans.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::{
    encode, scan_from_storage, scan_in_memory, DataType, DeviceProfile, EncodingKind, Slice, StorageMode,
};
use crate::colstore::{Column, Field, TableWriter};
use crate::error::{Error, Result};
use crate::features::{contiguous_sample, sample_profile, slice_statistics, FeatureVariant, SAMPLE_FRACTION};
use crate::harness::{scratch_dir, ModelBundle};
use crate::synthgen::derive_seed;

pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "alpha", rename_all = "snake_case")]
pub enum Objective {
    Size,
    Latency,
    /// `alpha · size/plain_size + (1 − alpha) · storage/plain_storage`.
    Mixed(f64),
}

impl Objective {
    pub fn mixed(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("mixed alpha {alpha} outside [0, 1]")));
        }
        Ok(Objective::Mixed(alpha))
    }

    pub fn needs_timing(self) -> bool {
        self != Objective::Size
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Size => f.write_str("size"),
            Objective::Latency => f.write_str("latency"),
            Objective::Mixed(a) => write!(f, "mixed:{a}"),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "size" => Ok(Objective::Size),
            "latency" => Ok(Objective::Latency),
            _ => {
                let alpha = s
                    .strip_prefix("mixed:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown objective {s:?}")))?;
                Objective::mixed(alpha)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerColumn,
    PerSlice,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "column" | "per-column" => Ok(Granularity::PerColumn),
            "slice" | "per-slice" => Ok(Granularity::PerSlice),
            _ => Err(Error::InvalidArgument(format!("unknown granularity {s:?}"))),
        }
    }
}

/// Costs of one encoding for one slice, predicted or measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindCost {
    pub size_bytes: f64,
    pub mem_ns: Option<f64>,
    pub storage_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingProfile {
    pub dtype: DataType,
    /// Exact Plain encoded size; the size normalizer of the mixed objective.
    pub plain_size_bytes: f64,
    pub entries: BTreeMap<EncodingKind, KindCost>,
}

impl EncodingProfile {
    pub fn get(&self, kind: EncodingKind) -> Result<&KindCost> {
        self.entries.get(&kind).ok_or(Error::MissingProfileEntry(kind))
    }

    fn storage(&self, kind: EncodingKind) -> Result<f64> {
        self.get(kind)?.storage_ns.ok_or(Error::MissingModel {
            what: "storage",
            dtype: self.dtype,
            kind,
        })
    }

    /// Cost of `kind` under `objective`.
    pub fn cost(&self, kind: EncodingKind, objective: Objective) -> Result<f64> {
        Ok(match objective {
            Objective::Size => self.get(kind)?.size_bytes,
            Objective::Latency => self.storage(kind)?,
            Objective::Mixed(alpha) => {
                let size = self.get(kind)?.size_bytes / self.plain_size_bytes;
                let time = self.storage(kind)? / self.storage(EncodingKind::Plain)?;
                alpha * size + (1.0 - alpha) * time
            }
        })
    }

    /// Multiplies every cost entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.plain_size_bytes *= factor;
        for c in out.entries.values_mut() {
            c.size_bytes *= factor;
            c.mem_ns = c.mem_ns.map(|v| v * factor);
            c.storage_ns = c.storage_ns.map(|v| v * factor);
        }
        out
    }
}

/// Argmin over `(kind, cost)`; exact ties go to the earlier kind in
/// [`EncodingKind::TIE_BREAK`].
fn argmin(costs: impl IntoIterator<Item = (EncodingKind, f64)>) -> Result<(EncodingKind, f64)> {
    let mut costs: Vec<_> = costs.into_iter().collect();
    costs.sort_by_key(|(k, _)| k.tie_break_rank());
    let mut best: Option<(EncodingKind, f64)> = None;
    for (k, c) in costs {
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((k, c));
        }
    }
    best.ok_or(Error::EmptyProfile)
}

pub fn choose_encoding(profile: &EncodingProfile, objective: Objective) -> Result<EncodingKind> {
    Ok(choose_with_cost(profile, objective)?.0)
}

fn choose_with_cost(profile: &EncodingProfile, objective: Objective) -> Result<(EncodingKind, f64)> {
    let costs = profile
        .entries
        .keys()
        .map(|&k| Ok((k, profile.cost(k, objective)?)))
        .collect::<Result<Vec<_>>>()?;
    argmin(costs)
}

/// Best single kind for a sequence of slice profiles, by summed cost.
fn choose_uniform(profiles: &[EncodingProfile], objective: Objective) -> Result<(EncodingKind, f64)> {
    let first = profiles.first().ok_or(Error::EmptyProfile)?;
    let mut totals = Vec::with_capacity(first.entries.len());
    for &kind in first.entries.keys() {
        let mut total = 0.0;
        for p in profiles {
            total += p.cost(kind, objective)?;
        }
        totals.push((kind, total));
    }
    argmin(totals)
}

/// Predicts the costs of a slice with a trained bundle: statistics, a 1%
/// contiguous sample unless the bundle is statistics-only, then the
/// size → mem → storage chain for every applicable encoding.
pub fn profile_slice(slice: &Slice, bundle: &ModelBundle, variant: FeatureVariant, sample_seed: u64) -> Result<EncodingProfile> {
    let stats = slice_statistics(slice);
    let sample = if variant.uses_sample() {
        Some(sample_profile(&contiguous_sample(slice, SAMPLE_FRACTION, sample_seed)?)?)
    } else {
        None
    };
    let dtype = slice.dtype();
    let mut entries = BTreeMap::new();
    for kind in EncodingKind::applicable(dtype) {
        let p = bundle.predict(&stats, sample.as_ref(), kind)?;
        entries.insert(
            kind,
            KindCost {
                size_bytes: p.size_bytes,
                mem_ns: p.mem_ns,
                storage_ns: p.storage_ns,
            },
        );
    }
    Ok(EncodingProfile {
        dtype,
        plain_size_bytes: encode(slice, EncodingKind::Plain)?.encoded_bytes() as f64,
        entries,
    })
}

/// Source of per-slice cost profiles used by [`advise`].
pub trait Predictor: Sync {
    fn profile(&self, column: usize, slice_index: usize, slice: &Slice) -> Result<EncodingProfile>;
}

/// Bundle-backed predictor. Each slice's sample position is derived from
/// `seed` and the slice coordinates.
pub struct BundlePredictor<'a> {
    pub bundle: &'a ModelBundle,
    pub seed: u64,
}

impl Predictor for BundlePredictor<'_> {
    fn profile(&self, column: usize, slice_index: usize, slice: &Slice) -> Result<EncodingProfile> {
        let seed = derive_seed(self.seed, &[column as u64, slice_index as u64]);
        profile_slice(slice, self.bundle, self.bundle.variant(), seed)
    }
}

/// Replays measured costs as predictions.
pub struct MeasuredPredictor<'a> {
    pub costs: &'a [Vec<EncodingProfile>],
}

impl Predictor for MeasuredPredictor<'_> {
    fn profile(&self, column: usize, slice_index: usize, _slice: &Slice) -> Result<EncodingProfile> {
        self.costs
            .get(column)
            .and_then(|c| c.get(slice_index))
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no measured costs for column {column} slice {slice_index}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Uniform { kind: EncodingKind, slices: usize },
    PerSlice(Vec<EncodingKind>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPlan {
    pub name: String,
    pub dtype: DataType,
    pub assignment: Assignment,
    pub predicted_cost: Option<f64>,
    pub measured_cost: Option<f64>,
}

impl ColumnPlan {
    pub fn kind_for(&self, slice: usize) -> Option<EncodingKind> {
        match &self.assignment {
            Assignment::Uniform { kind, slices } => (slice < *slices).then_some(*kind),
            Assignment::PerSlice(kinds) => kinds.get(slice).copied(),
        }
    }

    pub fn slice_count(&self) -> Option<usize> {
        Some(match &self.assignment {
            Assignment::Uniform { slices, .. } => *slices,
            Assignment::PerSlice(kinds) => kinds.len(),
        })
    }

    pub fn kinds(&self) -> Vec<EncodingKind> {
        (0..self.slice_count().unwrap_or(0)).filter_map(|s| self.kind_for(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingPlan {
    pub format: String,
    pub version: u32,
    pub objective: Objective,
    pub granularity: Granularity,
    pub columns: Vec<ColumnPlan>,
    pub predicted_cost: Option<f64>,
    pub measured_cost: Option<f64>,
}

impl EncodingPlan {
    pub fn new(objective: Objective, granularity: Granularity, columns: Vec<ColumnPlan>) -> Self {
        let total = |f: fn(&ColumnPlan) -> Option<f64>| columns.iter().map(f).sum::<Option<f64>>();
        Self {
            format: "lea-encoding-plan".into(),
            version: PLAN_VERSION,
            objective,
            granularity,
            predicted_cost: total(|c| c.predicted_cost),
            measured_cost: total(|c| c.measured_cost),
            columns,
        }
    }

    /// Plan assigning `kind` to every slice of every column.
    pub fn uniform(schema: &[Field], slices: usize, kind: EncodingKind, objective: Objective) -> Self {
        let columns = schema
            .iter()
            .map(|f| ColumnPlan {
                name: f.name.clone(),
                dtype: f.dtype,
                assignment: Assignment::Uniform { kind, slices },
                predicted_cost: None,
                measured_cost: None,
            })
            .collect();
        Self::new(objective, Granularity::PerColumn, columns)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnPlan> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: EncodingPlan = serde_json::from_str(text)?;
        if p.format != "lea-encoding-plan" || p.version != PLAN_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported plan format {} v{}", p.format, p.version)));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn select(name: &str, dtype: DataType, profiles: &[EncodingProfile], objective: Objective, granularity: Granularity) -> Result<(Assignment, f64)> {
    if profiles.is_empty() {
        return Err(Error::InvalidArgument(format!("column {name} has no slices")));
    }
    if let Some(p) = profiles.iter().find(|p| p.dtype != dtype) {
        return Err(Error::SchemaMismatch(format!("column {name} is {dtype}, profile is {}", p.dtype)));
    }
    Ok(match granularity {
        Granularity::PerSlice => {
            let mut kinds = Vec::with_capacity(profiles.len());
            let mut total = 0.0;
            for p in profiles {
                let (k, c) = choose_with_cost(p, objective)?;
                kinds.push(k);
                total += c;
            }
            (Assignment::PerSlice(kinds), total)
        }
        Granularity::PerColumn => {
            let (kind, total) = choose_uniform(profiles, objective)?;
            (
                Assignment::Uniform {
                    kind,
                    slices: profiles.len(),
                },
                total,
            )
        }
    })
}

/// Plans one column from predicted profiles.
pub fn advise_column(
    index: usize,
    column: &Column,
    predictor: &dyn Predictor,
    objective: Objective,
    granularity: Granularity,
) -> Result<ColumnPlan> {
    let profiles = column
        .slices
        .par_iter()
        .enumerate()
        .map(|(s, slice)| predictor.profile(index, s, slice))
        .collect::<Result<Vec<_>>>()?;
    let (assignment, cost) = select(&column.name, column.dtype, &profiles, objective, granularity)?;
    Ok(ColumnPlan {
        name: column.name.clone(),
        dtype: column.dtype,
        assignment,
        predicted_cost: Some(cost),
        measured_cost: None,
    })
}

pub fn advise(columns: &[Column], predictor: &dyn Predictor, objective: Objective, granularity: Granularity) -> Result<EncodingPlan> {
    let plans = columns
        .iter()
        .enumerate()
        .map(|(i, c)| advise_column(i, c, predictor, objective, granularity))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodingPlan::new(objective, granularity, plans))
}

/// How [`measure_column`] obtains timings.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureMode {
    /// Encoded sizes only.
    SizeOnly,
    /// Timed in-memory scans; storage time from the device model.
    Modeled(DeviceProfile),
    /// Timed in-memory scans and cold reads of a scratch file.
    Measured { scratch_dir: Option<PathBuf> },
}

/// True costs of every applicable encoding for every slice of a column.
pub fn measure_column(column: &Column, mode: &MeasureMode) -> Result<Vec<EncodingProfile>> {
    let scratch = match mode {
        MeasureMode::Measured { scratch_dir: d } => Some(scratch_dir(d.as_deref())?),
        _ => None,
    };
    let mut out = Vec::with_capacity(column.slices.len());
    for (s, slice) in column.slices.iter().enumerate() {
        let mut entries = BTreeMap::new();
        let mut plain = 0.0;
        for kind in EncodingKind::applicable(column.dtype) {
            let encoded = encode(slice, kind)?;
            let size = encoded.encoded_bytes() as f64;
            if kind == EncodingKind::Plain {
                plain = size;
            }
            let (mem_ns, storage_ns) = match mode {
                MeasureMode::SizeOnly => (None, None),
                MeasureMode::Modeled(device) => {
                    let mem = scan_in_memory(&encoded)?.elapsed_ns;
                    (Some(mem), Some(device.transfer_ns(size) + mem))
                }
                MeasureMode::Measured { .. } => {
                    let mem = scan_in_memory(&encoded)?.elapsed_ns;
                    let dir = scratch.as_ref().expect("scratch exists in measured mode");
                    let path = dir.path().join(format!("{s}-{}.col", kind.name()));
                    let mut w = TableWriter::create(&path, vec![Field::new(&column.name, column.dtype)], slice.row_count())?;
                    w.push(0, 0, &encoded)?;
                    let table = w.finish(slice.row_count() as u64)?;
                    let st = scan_from_storage(&table.locator(0, 0), StorageMode::Measured)?.elapsed_ns;
                    std::fs::remove_file(&path)?;
                    (Some(mem), Some(st))
                }
            };
            entries.insert(kind, KindCost { size_bytes: size, mem_ns, storage_ns });
        }
        out.push(EncodingProfile {
            dtype: column.dtype,
            plain_size_bytes: plain,
            entries,
        });
    }
    Ok(out)
}

/// Reference plan for one column from its measured costs: the per-slice
/// optimum (`PerSlice`) or the best single encoding (`PerColumn`).
pub fn brute_force_column(column: &Column, measured: &[EncodingProfile], objective: Objective, granularity: Granularity) -> Result<ColumnPlan> {
    let (assignment, cost) = select(&column.name, column.dtype, measured, objective, granularity)?;
    Ok(ColumnPlan {
        name: column.name.clone(),
        dtype: column.dtype,
        assignment,
        predicted_cost: None,
        measured_cost: Some(cost),
    })
}

/// Measures every slice under every encoding and returns Optimal
/// (`PerSlice`) or Single Optimal (`PerColumn`).
pub fn brute_force_plan(columns: &[Column], objective: Objective, granularity: Granularity, mode: &MeasureMode) -> Result<EncodingPlan> {
    if objective.needs_timing() && *mode == MeasureMode::SizeOnly {
        return Err(Error::InvalidArgument(format!("objective {objective} needs timed measurements")));
    }
    let plans = columns
        .iter()
        .map(|c| brute_force_column(c, &measure_column(c, mode)?, objective, granularity))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodingPlan::new(objective, granularity, plans))
}

/// Measured cost of a column plan against measured slice costs.
pub fn column_cost(plan: &ColumnPlan, measured: &[EncodingProfile], objective: Objective) -> Result<f64> {
    if plan.slice_count() != Some(measured.len()) {
        return Err(Error::SchemaMismatch(format!(
            "plan for {} covers {:?} slices, measured {}",
            plan.name,
            plan.slice_count(),
            measured.len()
        )));
    }
    let mut total = 0.0;
    for (s, p) in measured.iter().enumerate() {
        total += p.cost(plan.kind_for(s).expect("slice within plan"), objective)?;
    }
    Ok(total)
}

/// Fills in measured costs, column by column, from `measured[column]`.
pub fn evaluate_plan(plan: &mut EncodingPlan, measured: &[Vec<EncodingProfile>]) -> Result<f64> {
    if plan.columns.len() != measured.len() {
        return Err(Error::SchemaMismatch(format!(
            "plan has {} columns, measurements {}",
            plan.columns.len(),
            measured.len()
        )));
    }
    let mut total = 0.0;
    for (c, m) in plan.columns.iter_mut().zip(measured) {
        let cost = column_cost(c, m, plan.objective)?;
        c.measured_cost = Some(cost);
        total += cost;
    }
    plan.measured_cost = Some(total);
    Ok(total)
}

/// `(plan − optimal) / optimal` over measured costs.
pub fn optimality_gap(plan: &EncodingPlan, optimal: &EncodingPlan) -> Result<f64> {
    let (Some(p), Some(o)) = (plan.measured_cost, optimal.measured_cost) else {
        return Err(Error::MissingMeasuredCost);
    };
    if o == 0.0 {
        return Ok(if p == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((p - o) / o)
}
