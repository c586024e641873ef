use std::path::{Path, PathBuf};

use lea_core::advisor::{
    advise as advise_columns, brute_force_column, evaluate_plan, measure_column, optimality_gap, BundlePredictor, EncodingPlan,
    EncodingProfile, Granularity, MeasureMode, Objective,
};
use lea_core::codecs::{DataType, DeviceProfile, EncodingKind};
use lea_core::colstore::tpch::TpchLike;
use lea_core::colstore::{apply_plan, ingest_csv, parse_schema, scan_column, write_table, Column, ScanMode, TableFile};
use lea_core::harness::{
    attach_speed_labels, collect_size_examples, load_training_set, train_bundle, training_report, write_training_set, Calibration,
    LabelSource, LabeledExample, ModelBundle, SpeedOptions, TrainOptions,
};
use lea_core::synthgen::derive_seed;
use serde_json::{json, Value};

use crate::{AdviseArgs, BenchArgs, CalibrateArgs, DtypeArg, EncodeArgs, MeasureArg, OracleArgs, Phase, ScanArgs, ScanModeArg, TrainArgs};

/// Seed stream for held-out report slices, disjoint from training slices.
const HELDOUT_STREAM: u64 = 0x4845_4c44;

pub enum Failure {
    Usage(String),
    Runtime(lea_core::Error),
}

impl From<lea_core::Error> for Failure {
    fn from(e: lea_core::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn emit(value: &Value) -> Outcome {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn scratch_parent() -> Option<PathBuf> {
    std::env::var_os(crate::SCRATCH_ENV).map(PathBuf::from)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Accepts either a bare device profile or a `lea calibrate` output.
fn load_device(path: Option<&Path>) -> Result<DeviceProfile, Failure> {
    let Some(path) = path else {
        return Ok(DeviceProfile::default());
    };
    let text = std::fs::read_to_string(path)?;
    if let Ok(c) = serde_json::from_str::<Calibration>(&text) {
        return Ok(c.device);
    }
    Ok(serde_json::from_str::<DeviceProfile>(&text)?)
}

fn dtypes(arg: DtypeArg) -> Vec<DataType> {
    match arg {
        DtypeArg::Int => vec![DataType::Int64],
        DtypeArg::String => vec![DataType::String],
        DtypeArg::All => vec![DataType::Int64, DataType::String],
    }
}

fn measure_mode(arg: Option<MeasureArg>, objective: Objective, device: DeviceProfile) -> Result<MeasureMode, Failure> {
    let arg = arg.unwrap_or(if objective.needs_timing() { MeasureArg::Modeled } else { MeasureArg::Size });
    Ok(match arg {
        MeasureArg::Size if objective.needs_timing() => {
            return Err(usage(format!("--measure size cannot evaluate objective {objective}")))
        }
        MeasureArg::Size => MeasureMode::SizeOnly,
        MeasureArg::Modeled => MeasureMode::Modeled(device),
        MeasureArg::Measured => MeasureMode::Measured {
            scratch_dir: scratch_parent(),
        },
    })
}

fn measure_name(mode: &MeasureMode) -> &'static str {
    match mode {
        MeasureMode::SizeOnly => "size",
        MeasureMode::Modeled(_) => "modeled",
        MeasureMode::Measured { .. } => "measured",
    }
}

fn load_columns(path: &Path) -> Result<(TableFile, Vec<Column>), Failure> {
    let file = TableFile::open(path)?;
    let table = file.load()?;
    Ok((file, table.columns))
}

fn measure_table(columns: &[Column], mode: &MeasureMode) -> Result<Vec<Vec<EncodingProfile>>, Failure> {
    Ok(columns
        .iter()
        .map(|c| measure_column(c, mode))
        .collect::<lea_core::Result<Vec<_>>>()?)
}

fn oracle_plan(
    columns: &[Column],
    measured: &[Vec<EncodingProfile>],
    objective: Objective,
    granularity: Granularity,
) -> Result<EncodingPlan, Failure> {
    let plans = columns
        .iter()
        .zip(measured)
        .map(|(c, m)| brute_force_column(c, m, objective, granularity))
        .collect::<lea_core::Result<Vec<_>>>()?;
    let mut plan = EncodingPlan::new(objective, granularity, plans);
    evaluate_plan(&mut plan, measured)?;
    Ok(plan)
}

fn check_timing(bundle: &ModelBundle, columns: &[Column], objective: Objective) -> Outcome {
    if !objective.needs_timing() {
        return Ok(());
    }
    match columns.iter().find(|c| !bundle.has_speed_models(c.dtype)) {
        Some(c) => Err(usage(format!(
            "objective {objective} needs speed models for {} (column {}); run `lea train --phase speed`",
            c.dtype, c.name
        ))),
        None => Ok(()),
    }
}

pub fn train(a: TrainArgs) -> Outcome {
    if a.slices == 0 || a.rows == 0 {
        return Err(usage("--slices and --rows must be ≥ 1"));
    }
    if a.phase != Phase::Size {
        if a.mem_slices == 0 || a.storage_slices == 0 {
            return Err(usage("--mem-slices and --storage-slices must be ≥ 1"));
        }
        if a.storage_slices > a.mem_slices {
            return Err(usage("--storage-slices exceeds --mem-slices"));
        }
    }
    let device = load_device(a.device.as_deref())?;
    let options = TrainOptions {
        variant: a.variant.into(),
        ..TrainOptions::default()
    };
    let wanted = dtypes(a.dtype);
    let speed = SpeedOptions {
        device,
        prefer_measured: !a.modeled_storage,
        scratch_dir: scratch_parent(),
    };

    let (mut examples, out_set, reference) = match a.phase {
        Phase::Size | Phase::All => {
            let mut examples = Vec::new();
            for &dtype in &wanted {
                eprintln!("collecting {} {dtype} slices of {} rows", a.slices, a.rows);
                examples.extend(collect_size_examples(dtype, a.slices, a.rows, a.seed)?);
            }
            let out_set = a.training_set.clone().unwrap_or_else(|| with_suffix(&a.out, ".train.jsonl"));
            (examples, out_set, None)
        }
        Phase::Speed => {
            let from = a.from.as_deref().ok_or_else(|| usage("--phase speed requires --from <size bundle>"))?;
            let input = a.training_set.clone().unwrap_or_else(|| with_suffix(from, ".train.jsonl"));
            let examples: Vec<LabeledExample> = load_training_set(&input)?
                .into_iter()
                .filter(|e| wanted.contains(&e.dtype()))
                .collect();
            if examples.is_empty() {
                return Err(usage(format!("{} holds no examples of the requested dtype", input.display())));
            }
            (examples, with_suffix(&a.out, ".train.jsonl"), Some(ModelBundle::load(from)?))
        }
    };

    let mut storage_source = None::<LabelSource>;
    if a.phase != Phase::Size {
        let n_slices = examples.iter().map(|e| e.slice_index + 1).max().unwrap_or(0);
        let n_mem = a.mem_slices.min(n_slices);
        let n_storage = a.storage_slices.min(n_mem);
        eprintln!("timing {n_mem} in-memory and {n_storage} storage slices per dtype");
        storage_source = Some(attach_speed_labels(&mut examples, n_mem, n_storage, &speed)?);
    }

    let mut file = std::io::BufWriter::new(std::fs::File::create(&out_set)?);
    write_training_set(&mut file, &examples)?;
    drop(file);
    let bundle = train_bundle(&examples, device, &options)?;
    if let Some(reference) = &reference {
        // The speed phase refits the size models from the same examples; a
        // mismatch means the training set does not belong to that bundle.
        for m in &bundle.models {
            let old = reference.models_for(m.dtype, m.kind)?;
            if old.size != m.size {
                return Err(Failure::Runtime(lea_core::Error::InvalidArgument(format!(
                    "training set does not reproduce the size models of the --from bundle ({}, {})",
                    m.dtype, m.kind
                ))));
            }
        }
    }
    bundle.save(&a.out)?;

    let mut report = Value::Null;
    if a.heldout > 0 {
        let mut heldout = Vec::new();
        for &dtype in &wanted {
            heldout.extend(collect_size_examples(dtype, a.heldout, a.rows, derive_seed(a.seed, &[HELDOUT_STREAM]))?);
        }
        report = serde_json::to_value(training_report(&bundle, &heldout)?)?;
    }
    emit(&json!({
        "bundle": a.out,
        "training_set": out_set,
        "examples": examples.len(),
        "dtypes": bundle.meta.dtypes,
        "storage_source": storage_source,
        "report": report,
    }))
}

pub fn advise(a: AdviseArgs) -> Outcome {
    let bundle = ModelBundle::load(&a.model)?;
    let (_, columns) = load_columns(&a.table)?;
    check_timing(&bundle, &columns, a.objective)?;
    let predictor = BundlePredictor {
        bundle: &bundle,
        seed: a.seed,
    };
    let plan = advise_columns(&columns, &predictor, a.objective, a.granularity)?;
    match &a.out {
        Some(out) => {
            plan.save(out)?;
            emit(&json!({
                "plan": out,
                "columns": plan.columns.len(),
                "predicted_cost": plan.predicted_cost,
            }))
        }
        None => {
            println!("{}", plan.to_json()?);
            Ok(())
        }
    }
}

pub fn encode(a: EncodeArgs) -> Outcome {
    if a.slice_rows == 0 {
        return Err(usage("--slice-rows must be ≥ 1"));
    }
    let table = if let Some(src) = &a.table {
        let plan = EncodingPlan::load(a.plan.as_ref().expect("clap enforces --plan"))?;
        apply_plan(&TableFile::open(src)?, &plan, &a.out)?
    } else if let Some(csv) = &a.csv {
        let schema = parse_schema(a.schema.as_deref().expect("clap enforces --schema")).map_err(|e| usage(format!("--schema: {e}")))?;
        ingest_csv(csv, &schema, a.slice_rows, &a.out)?
    } else if let Some(rows) = a.tpch_rows {
        let table = TpchLike::new(rows, a.seed).table(a.slice_rows);
        write_table(&a.out, &table, |_, _| EncodingKind::Plain)?
    } else {
        return Err(usage("encode needs one of --table/--plan, --csv/--schema or --tpch-rows"));
    };
    table.validate()?;
    emit(&json!({
        "table": a.out,
        "columns": table.schema().len(),
        "slices": table.slice_count(),
        "rows": table.total_rows(),
        "file_bytes": table.file_len(),
    }))
}

pub fn scan(a: ScanArgs) -> Outcome {
    let table = TableFile::open(&a.table)?;
    let mode = match a.mode {
        ScanModeArg::Memory => ScanMode::InMemory,
        ScanModeArg::Storage => ScanMode::FromStorageMeasured,
        ScanModeArg::Modeled => ScanMode::FromStorageModeled(load_device(a.device.as_deref())?),
    };
    let columns: Vec<usize> = match &a.column {
        Some(name) => vec![table
            .column_index(name)
            .ok_or_else(|| usage(format!("--column: table has no column {name:?}")))?],
        None => (0..table.schema().len()).collect(),
    };
    for c in columns {
        let m = scan_column(&table, c, mode)?;
        emit(&json!({
            "column": table.schema()[c].name,
            "aggregate": m.aggregate,
            "elapsed_ns": m.elapsed_ns,
            "bytes_read": m.bytes_read,
        }))?;
    }
    Ok(())
}

pub fn oracle(a: OracleArgs) -> Outcome {
    let mode = measure_mode(a.measure, a.objective, load_device(a.device.as_deref())?)?;
    let compare = a.compare.as_ref().map(EncodingPlan::load).transpose()?;
    let (_, columns) = load_columns(&a.table)?;
    let measured = measure_table(&columns, &mode)?;
    let optimal = oracle_plan(&columns, &measured, a.objective, a.granularity)?;
    if let Some(out) = &a.out {
        optimal.save(out)?;
    }
    let comparison = match compare {
        Some(mut plan) => {
            // Costs are reported under the oracle's objective.
            plan.objective = a.objective;
            let cost = evaluate_plan(&mut plan, &measured)?;
            json!({
                "plan": a.compare,
                "measured_cost": cost,
                "optimality_gap": optimality_gap(&plan, &optimal)?,
            })
        }
        None => Value::Null,
    };
    emit(&json!({
        "objective": a.objective.to_string(),
        "granularity": a.granularity,
        "measure": measure_name(&mode),
        "optimal_cost": optimal.measured_cost,
        "compare": comparison,
    }))
}

pub fn bench(a: BenchArgs) -> Outcome {
    let bundle = ModelBundle::load(&a.model)?;
    let device = match &a.device {
        Some(_) => load_device(a.device.as_deref())?,
        None => bundle.device,
    };
    let mode = measure_mode(a.measure, a.objective, device)?;
    let (file, columns) = load_columns(&a.table)?;
    check_timing(&bundle, &columns, a.objective)?;
    let measured = measure_table(&columns, &mode)?;
    let optimal = oracle_plan(&columns, &measured, a.objective, Granularity::PerSlice)?;
    let single = oracle_plan(&columns, &measured, a.objective, Granularity::PerColumn)?;
    let mut plain = EncodingPlan::uniform(file.schema(), file.slice_count(), EncodingKind::Plain, a.objective);
    evaluate_plan(&mut plain, &measured)?;
    let predictor = BundlePredictor {
        bundle: &bundle,
        seed: a.seed,
    };
    let mut rows = vec![
        ("plain", plain),
        ("single_optimal", single),
        ("optimal", optimal.clone()),
    ];
    for (name, g) in [("lea_column", Granularity::PerColumn), ("lea_slice", Granularity::PerSlice)] {
        let mut plan = advise_columns(&columns, &predictor, a.objective, g)?;
        evaluate_plan(&mut plan, &measured)?;
        rows.push((name, plan));
    }
    let mut report = serde_json::Map::new();
    for (name, plan) in &rows {
        report.insert(
            (*name).into(),
            json!({
                "measured_cost": plan.measured_cost,
                "optimality_gap": optimality_gap(plan, &optimal)?,
            }),
        );
    }
    emit(&json!({
        "objective": a.objective.to_string(),
        "measure": measure_name(&mode),
        "plans": report,
    }))
}

pub fn calibrate(a: CalibrateArgs) -> Outcome {
    let dir = a
        .dir
        .clone()
        .or_else(scratch_parent)
        .unwrap_or_else(std::env::temp_dir);
    let calibration = lea_core::harness::calibrate_device(&a.sizes, &dir).map_err(|e| match e {
        lea_core::Error::InvalidArgument(msg) => usage(format!("--sizes: {msg}")),
        other => Failure::Runtime(other),
    })?;
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&calibration)?)?;
    }
    emit(&serde_json::to_value(&calibration)?)
}
