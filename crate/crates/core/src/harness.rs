//! Training orchestration.
//!
//! Training runs in two phases. The size phase generates synthetic slices,
//! computes statistics and sample profiles, and records exact encoded sizes;
//! it performs no timing and is reproducible on any machine. The speed phase
//! regenerates the first slices of a size-phase corpus and attaches in-memory
//! and from-storage scan timings taken on the current machine.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::{
    cold_read_ns, encode, platform_cache_hook, scan_from_storage_with_hook, scan_in_memory, ColdCacheHook,
    DataType, DeviceProfile, EncodingKind, StorageMode, TIMED_RUNS,
};
use crate::colstore::{Field, TableWriter};
use crate::error::{Error, Result};
use crate::features::{
    contiguous_sample, feature_layout_id, feature_names, feature_vector, sample_profile, slice_statistics,
    FeatureVariant, SampleProfile, SliceStatistics, SAMPLE_FRACTION,
};
use crate::models::{smape, ForestHyper, ForestModel, LinearModel, ModelError, Target, TrainingSet};
use crate::synthgen::{derive_seed, generate, sample_spec, SliceBudget, SliceSpec};

pub const TRAINING_SET_VERSION: u32 = 1;
pub const BUNDLE_VERSION: u32 = 1;

/// Where a storage label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Cold reads with the page cache evicted.
    Measured,
    /// Device model over the encoded size plus the in-memory scan time.
    Modeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub slice_index: usize,
    pub spec: SliceSpec,
    pub rows: usize,
    pub slice_seed: u64,
    pub stats: SliceStatistics,
    pub profile: SampleProfile,
    pub kind: EncodingKind,
    pub size_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_scan_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_scan_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_source: Option<LabelSource>,
}

impl LabeledExample {
    pub fn dtype(&self) -> DataType {
        self.spec.dtype()
    }
}

/// Seeds of the three stochastic steps behind slice `index` of a corpus.
fn slice_seeds(master: u64, dtype: DataType, index: usize) -> (u64, u64, u64) {
    let base = [u64::from(dtype.tag()), index as u64];
    (
        derive_seed(master, &[base[0], base[1], 0]),
        derive_seed(master, &[base[0], base[1], 1]),
        derive_seed(master, &[base[0], base[1], 2]),
    )
}

/// Size phase: `n_slices` synthetic slices, one example per applicable
/// encoding with the exact encoded size. Runs in parallel; the output order
/// is slice-major, encodings in [`EncodingKind::ALL`] order.
pub fn collect_size_examples(dtype: DataType, n_slices: usize, rows: usize, master_seed: u64) -> Result<Vec<LabeledExample>> {
    collect_size_examples_with(dtype, n_slices, rows, master_seed, |seed, rows| sample_spec(dtype, seed, rows))
}

/// [`collect_size_examples`] with a custom spec sampler, called as
/// `spec_for(seed, rows)`.
pub fn collect_size_examples_with<F>(
    dtype: DataType,
    n_slices: usize,
    rows: usize,
    master_seed: u64,
    spec_for: F,
) -> Result<Vec<LabeledExample>>
where
    F: Fn(u64, usize) -> SliceSpec + Sync,
{
    if rows == 0 {
        return Err(Error::InvalidArgument("rows per slice must be ≥ 1".into()));
    }
    let per_slice: Vec<Vec<LabeledExample>> = (0..n_slices)
        .into_par_iter()
        .map(|i| {
            let (spec_seed, slice_seed, sample_seed) = slice_seeds(master_seed, dtype, i);
            let spec = spec_for(spec_seed, rows);
            if spec.dtype() != dtype {
                return Err(Error::InvalidArgument(format!("spec sampler produced a {} spec", spec.dtype())));
            }
            let slice = generate(&spec, rows, slice_seed)?;
            let stats = slice_statistics(&slice);
            let profile = sample_profile(&contiguous_sample(&slice, SAMPLE_FRACTION, sample_seed)?)?;
            EncodingKind::applicable(dtype)
                .map(|kind| {
                    Ok(LabeledExample {
                        slice_index: i,
                        spec,
                        rows,
                        slice_seed,
                        stats,
                        profile: profile.clone(),
                        kind,
                        size_bytes: encode(&slice, kind)?.encoded_bytes() as u64,
                        mem_scan_ns: None,
                        storage_scan_ns: None,
                        storage_source: None,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_slice.into_iter().flatten().collect())
}

#[derive(Debug, Clone)]
pub struct SpeedOptions {
    /// Device used for Modeled storage labels, and as the fallback when
    /// cold reads are unavailable.
    pub device: DeviceProfile,
    /// Attempt cold reads (Measured) before falling back to Modeled.
    pub prefer_measured: bool,
    /// Parent of the scratch directory for storage-scan files.
    pub scratch_dir: Option<PathBuf>,
}

impl Default for SpeedOptions {
    fn default() -> Self {
        Self {
            device: DeviceProfile::default(),
            prefer_measured: true,
            scratch_dir: None,
        }
    }
}

pub(crate) fn scratch_dir(parent: Option<&Path>) -> Result<tempfile::TempDir> {
    let parent = parent.map_or_else(std::env::temp_dir, Path::to_path_buf);
    std::fs::create_dir_all(&parent)?;
    Ok(tempfile::Builder::new().prefix("lea-").tempdir_in(parent)?)
}

/// Speed phase: regenerates the first `n_mem` slices of a size-phase corpus
/// and attaches timed labels. The first `n_storage` slices also get storage
/// labels. Returns the source of the storage labels.
pub fn attach_speed_labels(
    examples: &mut [LabeledExample],
    n_mem: usize,
    n_storage: usize,
    options: &SpeedOptions,
) -> Result<LabelSource> {
    attach_speed_labels_with_hook(examples, n_mem, n_storage, options, platform_cache_hook().as_ref())
}

pub fn attach_speed_labels_with_hook(
    examples: &mut [LabeledExample],
    n_mem: usize,
    n_storage: usize,
    options: &SpeedOptions,
    hook: &dyn ColdCacheHook,
) -> Result<LabelSource> {
    if n_storage > n_mem {
        return Err(Error::InvalidArgument(format!(
            "storage budget {n_storage} exceeds in-memory budget {n_mem}"
        )));
    }
    let scratch = scratch_dir(options.scratch_dir.as_deref())?;
    let mut source = if options.prefer_measured {
        LabelSource::Measured
    } else {
        LabelSource::Modeled
    };
    let mut by_slice: BTreeMap<(DataType, usize), Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        if e.slice_index < n_mem {
            by_slice.entry((e.dtype(), e.slice_index)).or_default().push(i);
        }
    }
    for ((dtype, index), members) in by_slice {
        let first = &examples[members[0]];
        let slice = generate(&first.spec, first.rows, first.slice_seed)?;
        for &m in &members {
            let kind = examples[m].kind;
            let encoded = encode(&slice, kind)?;
            let mem_ns = scan_in_memory(&encoded)?.elapsed_ns;
            let e = &mut examples[m];
            e.mem_scan_ns = Some(mem_ns);
            if index >= n_storage {
                continue;
            }
            if source == LabelSource::Measured {
                let path = scratch.path().join(format!("{dtype}-{index}-{}.col", kind.name()));
                let mut writer = TableWriter::create(&path, vec![Field::new("c", dtype)], slice.row_count())?;
                writer.push(0, 0, &encoded)?;
                let table = writer.finish(slice.row_count() as u64)?;
                match scan_from_storage_with_hook(&table.locator(0, 0), StorageMode::Measured, hook) {
                    Ok(m) => e.storage_scan_ns = Some(m.elapsed_ns),
                    Err(Error::CacheHookUnavailable(_)) => source = LabelSource::Modeled,
                    Err(err) => return Err(err),
                }
                std::fs::remove_file(&path)?;
            }
            if source == LabelSource::Modeled {
                e.storage_scan_ns = Some(options.device.transfer_ns(e.size_bytes as f64) + mem_ns);
            }
        }
    }
    if source == LabelSource::Modeled {
        // A late downgrade must not leave a mix of sources behind.
        for e in examples.iter_mut().filter(|e| e.storage_scan_ns.is_some()) {
            let mem = e.mem_scan_ns.expect("storage slices are a subset of mem slices");
            e.storage_scan_ns = Some(options.device.transfer_ns(e.size_bytes as f64) + mem);
        }
    }
    for e in examples.iter_mut().filter(|e| e.storage_scan_ns.is_some()) {
        e.storage_source = Some(source);
    }
    Ok(source)
}

/// Both phases for one dtype.
pub fn collect_corpus(budget: &SliceBudget, dtype: DataType, master_seed: u64, options: &SpeedOptions) -> Result<Vec<LabeledExample>> {
    budget.validate()?;
    if budget.n_mem > budget.n_size {
        return Err(Error::InvalidArgument(format!(
            "in-memory budget {} exceeds size budget {}",
            budget.n_mem, budget.n_size
        )));
    }
    let mut examples = collect_size_examples(dtype, budget.n_size, budget.rows_per_slice, master_seed)?;
    attach_speed_labels(&mut examples, budget.n_mem, budget.n_storage, options)?;
    Ok(examples)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingSetHeader {
    format: String,
    version: u32,
    examples: usize,
}

#[derive(Serialize)]
struct TrainingRecordOut<'a> {
    #[serde(flatten)]
    example: &'a LabeledExample,
    features: Vec<f64>,
}

#[derive(Deserialize)]
struct TrainingRecordIn {
    #[serde(flatten)]
    example: LabeledExample,
}

/// Writes a training-set file: a header line, then one JSON record per
/// example carrying its full-variant feature vector alongside the labels.
pub fn write_training_set<W: Write>(out: W, examples: &[LabeledExample]) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header = TrainingSetHeader {
        format: "lea-training-set".into(),
        version: TRAINING_SET_VERSION,
        examples: examples.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for e in examples {
        let features = feature_vector(&e.stats, Some(&e.profile), e.kind, FeatureVariant::Full)?;
        serde_json::to_writer(&mut out, &TrainingRecordOut { example: e, features })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_training_set<R: BufRead>(input: R) -> Result<Vec<LabeledExample>> {
    let mut lines = input.lines();
    let header: TrainingSetHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::InvalidArgument("empty training-set file".into())),
    };
    if header.format != "lea-training-set" || header.version != TRAINING_SET_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported training-set format {} v{}",
            header.format, header.version
        )));
    }
    let mut examples = Vec::with_capacity(header.examples);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(serde_json::from_str::<TrainingRecordIn>(&line)?.example);
    }
    if examples.len() != header.examples {
        return Err(Error::InvalidArgument(format!(
            "training set declares {} examples, found {}",
            header.examples,
            examples.len()
        )));
    }
    Ok(examples)
}

pub fn load_training_set(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    read_training_set(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub device: DeviceProfile,
    /// (bytes, cold-read ns) pairs the fit was computed from.
    pub points: Vec<(u64, f64)>,
    /// Largest |residual| / observed time over the points; the agreement
    /// tolerance between Measured and Modeled storage labels.
    pub max_relative_residual: f64,
}

/// Least-squares fit of `time = latency + bytes / throughput`.
pub fn fit_device(points: &[(u64, f64)]) -> Result<Calibration> {
    let mut set = TrainingSet::new(DataType::Int64, Target::StorageScanNs, "device", vec!["bytes".into()]);
    for &(bytes, ns) in points {
        set.push(vec![bytes as f64], ns);
    }
    let fit = LinearModel::fit(&set)?;
    let slope = fit.weights[0];
    if slope <= 0.0 || !slope.is_finite() {
        return Err(Error::NegativeThroughput { slope });
    }
    let max_relative_residual = points
        .iter()
        .map(|&(b, t)| {
            let p = fit.intercept + slope * b as f64;
            if t == 0.0 {
                (p - t).abs()
            } else {
                (p - t).abs() / t.abs()
            }
        })
        .fold(0.0, f64::max);
    Ok(Calibration {
        device: DeviceProfile {
            latency_ns: fit.intercept,
            throughput_bps: 1e9 / slope,
        },
        points: points.to_vec(),
        max_relative_residual,
    })
}

/// Writes one file per size under `dir`, cold-reads each and fits the
/// device model.
pub fn calibrate_device(sizes: &[u64], dir: impl AsRef<Path>) -> Result<Calibration> {
    calibrate_device_with_hook(sizes, dir, platform_cache_hook().as_ref())
}

pub fn calibrate_device_with_hook(sizes: &[u64], dir: impl AsRef<Path>, hook: &dyn ColdCacheHook) -> Result<Calibration> {
    let distinct: BTreeSet<u64> = sizes.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument("calibration needs at least two distinct sizes".into()));
    }
    let scratch = scratch_dir(Some(dir.as_ref()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xca11);
    let mut points = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        let path = scratch.path().join(format!("calib-{i}.bin"));
        {
            let mut f = BufWriter::new(File::create(&path)?);
            let mut block = vec![0u8; 1 << 16];
            let mut left = size as usize;
            while left > 0 {
                let n = left.min(block.len());
                rng.fill_bytes(&mut block[..n]);
                f.write_all(&block[..n])?;
                left -= n;
            }
            f.flush()?;
        }
        let file = File::open(&path)?;
        points.push((size, cold_read_ns(&file, hook, TIMED_RUNS)?));
    }
    fit_device(&points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeModels {
    /// Fit on `ln(1 + bytes)`.
    pub forest: ForestModel<f64>,
    pub fallback: Option<LinearModel<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedModels {
    /// Fit on `ln(1 + ns)` from `[predicted size, stats]`.
    pub mem_forest: ForestModel<f64>,
    pub mem_fallback: Option<LinearModel<f64>>,
    /// `[size, mem ns] → storage ns`.
    pub storage: LinearModel<f64>,
    pub storage_source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingModels {
    pub dtype: DataType,
    pub kind: EncodingKind,
    pub size: SizeModels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<SpeedModels>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtypeMeta {
    pub dtype: DataType,
    pub size_slices: usize,
    pub mem_slices: usize,
    pub storage_slices: usize,
    pub rows_per_slice: Vec<usize>,
    /// Largest integer range or mean string length seen in training.
    pub max_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub forest: ForestHyper,
    pub variant: FeatureVariant,
    pub dtypes: Vec<DtypeMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub device: DeviceProfile,
    pub models: Vec<EncodingModels>,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub forest: ForestHyper,
    pub variant: FeatureVariant,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            forest: ForestHyper::default(),
            variant: FeatureVariant::Full,
        }
    }
}

fn ln1p_inv(y: f64) -> f64 {
    y.exp_m1().max(0.0)
}

fn mem_features(predicted_size: f64, stats: &SliceStatistics) -> Vec<f64> {
    let mut v = Vec::with_capacity(8);
    v.push(predicted_size);
    v.extend(stats.as_features());
    v
}

fn mem_feature_names(dtype: DataType) -> Vec<String> {
    std::iter::once("predicted_size".to_string())
        .chain(feature_names(dtype, FeatureVariant::StatisticsOnly).into_iter().map(String::from))
        .collect()
}

/// Fits every model for one (dtype, kind) and returns the mem training set.
/// That set is built from the size forest's own predictions, so its inputs
/// match what the model chain sees at inference.
pub(crate) fn train_encoding(
    dtype: DataType,
    kind: EncodingKind,
    examples: &[&LabeledExample],
    options: &TrainOptions,
) -> Result<(EncodingModels, TrainingSet<f64>)> {
    let names: Vec<String> = feature_names(dtype, options.variant).into_iter().map(String::from).collect();
    let layout = feature_layout_id(dtype, options.variant);
    let mut raw = TrainingSet::new(dtype, Target::EncodedSize, layout, names);
    for e in examples {
        raw.push(
            feature_vector(&e.stats, Some(&e.profile), kind, options.variant)?,
            e.size_bytes as f64,
        );
    }
    let forest = ForestModel::fit(&raw.map_labels(f64::ln_1p), &options.forest)?;
    let fallback = fit_optional(&raw)?;
    let size = SizeModels { forest, fallback };

    let mut mem = TrainingSet::new(dtype, Target::MemScanNs, format!("{dtype}/mem/v1"), mem_feature_names(dtype));
    let mut storage = TrainingSet::new(
        dtype,
        Target::StorageScanNs,
        format!("{dtype}/storage/v1"),
        vec!["size_bytes".into(), "mem_scan_ns".into()],
    );
    let mut sources = BTreeSet::new();
    for e in examples {
        let Some(mem_ns) = e.mem_scan_ns else { continue };
        let x = feature_vector(&e.stats, Some(&e.profile), kind, options.variant)?;
        let predicted = ln1p_inv(size.forest.predict(&x)?);
        mem.push(mem_features(predicted, &e.stats), mem_ns);
        if let Some(st) = e.storage_scan_ns {
            storage.push(vec![e.size_bytes as f64, mem_ns], st);
            sources.insert(e.storage_source.unwrap_or(LabelSource::Measured));
        }
    }
    let speed = if mem.is_empty() {
        None
    } else {
        if storage.is_empty() {
            return Err(Error::MissingCoverage { dtype, kind });
        }
        let mem_forest = ForestModel::fit(&mem.map_labels(f64::ln_1p), &options.forest)?;
        let mem_fallback = fit_optional(&mem)?;
        let storage_model = LinearModel::fit(&storage)?;
        let storage_source = if sources.contains(&LabelSource::Modeled) {
            LabelSource::Modeled
        } else {
            LabelSource::Measured
        };
        Some(SpeedModels {
            mem_forest,
            mem_fallback,
            storage: storage_model,
            storage_source,
        })
    };
    Ok((EncodingModels { dtype, kind, size, speed }, mem))
}

/// A linear fallback when the data supports one; `None` for too few rows.
fn fit_optional(data: &TrainingSet<f64>) -> Result<Option<LinearModel<f64>>> {
    match LinearModel::fit(data) {
        Ok(m) => Ok(Some(m)),
        Err(ModelError::InsufficientData { .. } | ModelError::DegenerateDesign) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Fits a bundle for every dtype present in `examples`.
pub fn train_bundle(examples: &[LabeledExample], device: DeviceProfile, options: &TrainOptions) -> Result<ModelBundle> {
    if !(device.throughput_bps > 0.0) {
        return Err(Error::NegativeThroughput {
            slope: 1e9 / device.throughput_bps,
        });
    }
    let dtypes: BTreeSet<DataType> = examples.iter().map(LabeledExample::dtype).collect();
    if dtypes.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let mut models = Vec::new();
    let mut meta = Vec::new();
    for dtype in dtypes {
        let of_dtype: Vec<&LabeledExample> = examples.iter().filter(|e| e.dtype() == dtype).collect();
        let has_speed = of_dtype.iter().any(|e| e.mem_scan_ns.is_some());
        for kind in EncodingKind::applicable(dtype) {
            let subset: Vec<&LabeledExample> = of_dtype.iter().copied().filter(|e| e.kind == kind).collect();
            if subset.is_empty() || (has_speed && !subset.iter().any(|e| e.mem_scan_ns.is_some())) {
                return Err(Error::MissingCoverage { dtype, kind });
            }
            models.push(train_encoding(dtype, kind, &subset, options)?.0);
        }
        let slices = |pred: &dyn Fn(&LabeledExample) -> bool| {
            of_dtype
                .iter()
                .filter(|e| pred(e))
                .map(|e| e.slice_index)
                .collect::<BTreeSet<_>>()
                .len()
        };
        meta.push(DtypeMeta {
            dtype,
            size_slices: slices(&|_| true),
            mem_slices: slices(&|e| e.mem_scan_ns.is_some()),
            storage_slices: slices(&|e| e.storage_scan_ns.is_some()),
            rows_per_slice: of_dtype.iter().map(|e| e.rows).collect::<BTreeSet<_>>().into_iter().collect(),
            max_extent: of_dtype.iter().map(|e| e.stats.extent()).fold(0.0, f64::max),
        });
    }
    Ok(ModelBundle {
        format: "lea-model-bundle".into(),
        version: BUNDLE_VERSION,
        device,
        models,
        meta: TrainingMeta {
            forest: options.forest,
            variant: options.variant,
            dtypes: meta,
        },
    })
}

/// Predictions for one slice under one encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicted {
    pub size_bytes: f64,
    pub mem_ns: Option<f64>,
    pub storage_ns: Option<f64>,
}

impl ModelBundle {
    pub fn dtypes(&self) -> impl Iterator<Item = DataType> + '_ {
        self.meta.dtypes.iter().map(|m| m.dtype)
    }

    pub fn variant(&self) -> FeatureVariant {
        self.meta.variant
    }

    pub fn has_speed_models(&self, dtype: DataType) -> bool {
        self.models.iter().any(|m| m.dtype == dtype && m.speed.is_some())
    }

    pub fn models_for(&self, dtype: DataType, kind: EncodingKind) -> Result<&EncodingModels> {
        self.models
            .iter()
            .find(|m| m.dtype == dtype && m.kind == kind)
            .ok_or(Error::MissingModel { what: "size", dtype, kind })
    }

    fn dtype_meta(&self, dtype: DataType) -> Option<&DtypeMeta> {
        self.meta.dtypes.iter().find(|m| m.dtype == dtype)
    }

    /// True when the slice lies beyond what the forests saw in training.
    pub fn extrapolates(&self, stats: &SliceStatistics) -> bool {
        self.dtype_meta(stats.dtype()).is_some_and(|m| stats.extent() > m.max_extent)
    }

    /// Runs the chain size → mem → storage for one encoding. `profile` may
    /// be `None` only for the statistics-only variant.
    pub fn predict(&self, stats: &SliceStatistics, profile: Option<&SampleProfile>, kind: EncodingKind) -> Result<Predicted> {
        let dtype = stats.dtype();
        let models = self.models_for(dtype, kind)?;
        let x = feature_vector(stats, profile, kind, self.meta.variant)?;
        let extrapolate = self.extrapolates(stats);
        let size_bytes = match (&models.size.fallback, extrapolate) {
            (Some(lin), true) => lin.predict(&x)?.max(0.0),
            _ => ln1p_inv(models.size.forest.predict(&x)?),
        };
        let Some(speed) = &models.speed else {
            return Ok(Predicted {
                size_bytes,
                mem_ns: None,
                storage_ns: None,
            });
        };
        let xm = mem_features(size_bytes, stats);
        let mem_ns = match (&speed.mem_fallback, extrapolate) {
            (Some(lin), true) => lin.predict(&xm)?.max(0.0),
            _ => ln1p_inv(speed.mem_forest.predict(&xm)?),
        };
        let storage_ns = speed.storage.predict(&[size_bytes, mem_ns])?.max(0.0);
        Ok(Predicted {
            size_bytes,
            mem_ns: Some(mem_ns),
            storage_ns: Some(storage_ns),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: ModelBundle = serde_json::from_str(text)?;
        if b.format != "lea-model-bundle" || b.version != BUNDLE_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported bundle format {} v{}", b.format, b.version)));
        }
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Anything that can predict the labels of a held-out example.
pub trait ExamplePredictor {
    fn predict_example(&self, example: &LabeledExample) -> Result<Predicted>;
}

impl ExamplePredictor for ModelBundle {
    fn predict_example(&self, e: &LabeledExample) -> Result<Predicted> {
        let profile = self.meta.variant.uses_sample().then_some(&e.profile);
        self.predict(&e.stats, profile, e.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dtype: DataType,
    pub kind: EncodingKind,
    pub target: Target,
    /// Held-out examples carrying this label.
    pub count: usize,
    pub smape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAverage {
    pub dtype: DataType,
    pub target: Target,
    /// Mean of the per-encoding SMAPE values.
    pub smape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub rows: Vec<ReportRow>,
    pub averages: Vec<ReportAverage>,
}

impl TrainingReport {
    pub fn smape(&self, dtype: DataType, kind: EncodingKind, target: Target) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.dtype == dtype && r.kind == kind && r.target == target)
            .and_then(|r| r.smape)
    }

    pub fn average(&self, dtype: DataType, target: Target) -> Option<f64> {
        self.averages
            .iter()
            .find(|r| r.dtype == dtype && r.target == target)
            .and_then(|r| r.smape)
    }
}

/// SMAPE per (dtype, kind, target) over the held-out examples, one row per
/// triple for every dtype present, plus per-(dtype, target) averages.
pub fn training_report(predictor: &dyn ExamplePredictor, heldout: &[LabeledExample]) -> Result<TrainingReport> {
    type Pairs = (Vec<f64>, Vec<f64>);
    let mut acc: BTreeMap<(DataType, EncodingKind, Target), Pairs> = BTreeMap::new();
    let dtypes: BTreeSet<DataType> = heldout.iter().map(LabeledExample::dtype).collect();
    for &dtype in &dtypes {
        for kind in EncodingKind::applicable(dtype) {
            for target in Target::ALL {
                acc.insert((dtype, kind, target), Default::default());
            }
        }
    }
    for e in heldout {
        let p = predictor.predict_example(e)?;
        let mut add = |target, pred: Option<f64>, actual: Option<f64>| {
            if let (Some(p), Some(a)) = (pred, actual) {
                let slot = acc.get_mut(&(e.dtype(), e.kind, target)).unwrap();
                slot.0.push(p);
                slot.1.push(a);
            }
        };
        add(Target::EncodedSize, Some(p.size_bytes), Some(e.size_bytes as f64));
        add(Target::MemScanNs, p.mem_ns, e.mem_scan_ns);
        add(Target::StorageScanNs, p.storage_ns, e.storage_scan_ns);
    }
    let mut rows = Vec::with_capacity(acc.len());
    for ((dtype, kind, target), (p, a)) in acc {
        let smape = if p.is_empty() { None } else { Some(smape(&p, &a)?) };
        rows.push(ReportRow {
            dtype,
            kind,
            target,
            count: p.len(),
            smape,
        });
    }
    let mut averages = Vec::new();
    for &dtype in &dtypes {
        for target in Target::ALL {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.dtype == dtype && r.target == target)
                .filter_map(|r| r.smape)
                .collect();
            averages.push(ReportAverage {
                dtype,
                target,
                smape: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
            });
        }
    }
    Ok(TrainingReport { rows, averages })
}
