//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line, even when it passes.
//! Criteria run one at a time; a panic inside one is reported as a FAIL and
//! the rest still run.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lea_core::advisor::{
    advise, brute_force_column, evaluate_plan, measure_column, optimality_gap, BundlePredictor, EncodingPlan, EncodingProfile,
    Granularity, MeasureMode, MeasuredPredictor, Objective,
};
use lea_core::codecs::{decode, encode, DataType, DeviceProfile, EncodingKind, Slice};
use lea_core::colstore::tpch::TpchLike;
use lea_core::colstore::{write_table, Column, Table};
use lea_core::features::FeatureVariant;
use lea_core::harness::{
    attach_speed_labels, collect_size_examples, collect_size_examples_with, fit_device, train_bundle, training_report, LabeledExample,
    ModelBundle, SpeedOptions, TrainOptions,
};
use lea_core::models::Target;
use lea_core::synthgen::{derive_seed, generate, sample_int_spec, sample_spec, SliceSpec, TEST_ROWS_PER_SLICE};

const TRAIN_SLICES: usize = 1500;
const HELDOUT_SLICES: usize = 300;
const TRAIN_SEED: u64 = 42;
const HELDOUT_SEED: u64 = 4242;
const WIDE_SEED: u64 = 4343;
const CONVERGENCE_STEPS: [usize; 5] = [100, 250, 500, 1000, 1500];
const CONVERGENCE_NOISE: f64 = 2.0;
const CONVERGED_SMAPE: f64 = 15.0;
const ABLATION_GAP: f64 = 5.0;
const GAP_TARGET: f64 = 0.10;
const GAP_HARD: f64 = 0.15;
const CALIBRATION_TOLERANCE: f64 = 0.01;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Uniform draw in [0, 1) from a derived seed.
fn unit(seed: u64, parts: &[u64]) -> f64 {
    (derive_seed(seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}

fn elapsed_ok(started: Instant, budget: Duration) -> (bool, String) {
    let e = started.elapsed();
    (e < budget, format!("{:.1}s of {}s", e.as_secs_f64(), budget.as_secs()))
}

// ---------------------------------------------------------------- corpora

fn train_corpus(dtype: DataType) -> &'static [LabeledExample] {
    static INT: OnceLock<Vec<LabeledExample>> = OnceLock::new();
    static STR: OnceLock<Vec<LabeledExample>> = OnceLock::new();
    let cell = if dtype == DataType::Int64 { &INT } else { &STR };
    cell.get_or_init(|| collect_size_examples(dtype, TRAIN_SLICES, TEST_ROWS_PER_SLICE, TRAIN_SEED).unwrap())
}

fn heldout_corpus(dtype: DataType) -> &'static [LabeledExample] {
    static INT: OnceLock<Vec<LabeledExample>> = OnceLock::new();
    static STR: OnceLock<Vec<LabeledExample>> = OnceLock::new();
    let cell = if dtype == DataType::Int64 { &INT } else { &STR };
    cell.get_or_init(|| collect_size_examples(dtype, HELDOUT_SLICES, TEST_ROWS_PER_SLICE, HELDOUT_SEED).unwrap())
}

/// Integer slices with cardinality in [10⁴, 10⁶] and spread in [10³, 10⁵],
/// both log-uniform: the regime where a 1% sample misjudges Dictionary and FOR.
fn wide_corpus() -> &'static [LabeledExample] {
    static WIDE: OnceLock<Vec<LabeledExample>> = OnceLock::new();
    WIDE.get_or_init(|| {
        collect_size_examples_with(DataType::Int64, HELDOUT_SLICES, TEST_ROWS_PER_SLICE, WIDE_SEED, |seed, rows| {
            let mut spec = sample_int_spec(seed, rows);
            spec.cardinality = 10f64.powf(4.0 + 2.0 * unit(seed, &[1])).round() as u64;
            spec.spread = 10f64.powf(3.0 + 2.0 * unit(seed, &[2]));
            SliceSpec::Int(spec)
        })
        .unwrap()
    })
}

fn first_slices(examples: &[LabeledExample], n: usize) -> Vec<LabeledExample> {
    examples.iter().filter(|e| e.slice_index < n).cloned().collect()
}

fn size_bundle(dtype: DataType, n: usize, variant: FeatureVariant) -> ModelBundle {
    let options = TrainOptions {
        variant,
        ..TrainOptions::default()
    };
    train_bundle(&first_slices(train_corpus(dtype), n), DeviceProfile::default(), &options).unwrap()
}

// ---------------------------------------------------------------- criteria

/// 1,000 randomized slices per (dtype, codec) round-trip exactly.
fn codec_correctness() -> Verdict {
    let started = Instant::now();
    const PER_DTYPE: usize = 1000;
    const MAX_LEN: usize = 65_536;
    let mut failures = Vec::new();
    let mut checked: BTreeMap<(DataType, EncodingKind), usize> = BTreeMap::new();
    let mut empty_rejected = 0;
    for dtype in [DataType::Int64, DataType::String] {
        for i in 0..PER_DTYPE {
            let seed = derive_seed(0xc0dec, &[dtype.tag() as u64, i as u64]);
            // both ends of the length range are always covered
            let rows = match i {
                0 => 0,
                1 => MAX_LEN,
                2 => 1,
                _ => (unit(seed, &[7]) * (MAX_LEN + 1) as f64) as usize,
            };
            if rows == 0 {
                // the codecs reject empty slices by contract
                for kind in EncodingKind::applicable(dtype) {
                    match encode(&Slice::empty(dtype), kind) {
                        Err(lea_core::Error::EmptySlice) => empty_rejected += 1,
                        other => failures.push(format!("{dtype} {kind} empty: {other:?}")),
                    }
                }
                continue;
            }
            let spec = sample_spec(dtype, seed, rows);
            let slice = match generate(&spec, rows, derive_seed(seed, &[8])) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("{dtype} #{i}: generation failed: {e}"));
                    continue;
                }
            };
            for kind in EncodingKind::applicable(dtype) {
                *checked.entry((dtype, kind)).or_default() += 1;
                match encode(&slice, kind).and_then(|e| decode(&e)) {
                    Ok(back) if back == slice => {}
                    Ok(_) => failures.push(format!("{dtype} #{i} {kind}: decoded values differ")),
                    Err(e) => failures.push(format!("{dtype} #{i} {kind}: {e}")),
                }
            }
        }
    }
    let (in_time, time) = elapsed_ok(started, Duration::from_secs(300));
    let min_checked = checked.values().min().copied().unwrap_or(0);
    verdict(
        failures.is_empty() && in_time,
        format!(
            "{} (dtype, codec) pairs, ≥ {min_checked} non-empty slices each, {empty_rejected} empty-slice rejections, {} failures{}, {time}",
            checked.len(),
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn random_table(t: u64) -> Table {
    let columns = (0..4u64)
        .map(|c| {
            let dtype = if unit(t, &[c, 0]) < 0.6 { DataType::Int64 } else { DataType::String };
            let slices = (0..4u64)
                .map(|s| {
                    let seed = derive_seed(0x7ab1e, &[t, c, s]);
                    generate(&sample_spec(dtype, seed, 4096), 4096, derive_seed(seed, &[1])).unwrap()
                })
                .collect();
            Column {
                name: format!("c{c}"),
                dtype,
                slices,
            }
        })
        .collect();
    Table {
        rows_per_slice: 4096,
        columns,
    }
}

fn random_tables() -> &'static [(Table, Vec<Vec<EncodingProfile>>)] {
    static TABLES: OnceLock<Vec<(Table, Vec<Vec<EncodingProfile>>)>> = OnceLock::new();
    TABLES.get_or_init(|| {
        (0..50)
            .map(|t| {
                let table = random_table(t);
                let measured = table
                    .columns
                    .iter()
                    .map(|c| measure_column(c, &MeasureMode::Modeled(DeviceProfile::default())).unwrap())
                    .collect();
                (table, measured)
            })
            .collect()
    })
}

fn oracle(columns: &[Column], measured: &[Vec<EncodingProfile>], objective: Objective, granularity: Granularity) -> EncodingPlan {
    let plans = columns
        .iter()
        .zip(measured)
        .map(|(c, m)| brute_force_column(c, m, objective, granularity).unwrap())
        .collect();
    let mut plan = EncodingPlan::new(objective, granularity, plans);
    evaluate_plan(&mut plan, measured).unwrap();
    plan
}

/// Advising from true measured costs reproduces the brute-force optimum.
fn oracle_equivalence() -> Verdict {
    let started = Instant::now();
    let objectives = [Objective::Size, Objective::Latency, Objective::Mixed(0.5)];
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for (t, (table, measured)) in random_tables().iter().enumerate() {
        let predictor = MeasuredPredictor { costs: measured };
        for objective in objectives {
            for granularity in [Granularity::PerColumn, Granularity::PerSlice] {
                cases += 1;
                let mut plan = advise(&table.columns, &predictor, objective, granularity).unwrap();
                let cost = evaluate_plan(&mut plan, measured).unwrap();
                let best = oracle(&table.columns, measured, objective, granularity).measured_cost.unwrap();
                if cost != best {
                    mismatches.push(format!("table {t} {objective} {granularity:?}: {cost} vs {best}"));
                }
            }
        }
    }
    let (in_time, time) = elapsed_ok(started, Duration::from_secs(600));
    verdict(
        mismatches.is_empty() && in_time,
        format!(
            "{}/{cases} plans match the oracle{}, {time}",
            cases - mismatches.len(),
            mismatches.first().map(|m| format!(" (first mismatch: {m})")).unwrap_or_default()
        ),
    )
}

fn gap_verdict(name: &str, gap: f64) -> (bool, String) {
    let note = if gap <= GAP_TARGET {
        "within target"
    } else if gap <= GAP_HARD {
        "above the 10% target, within the 15% bound"
    } else {
        "above the 15% bound"
    };
    (gap <= GAP_HARD, format!("{name} gap {:.2}% ({note})", 100.0 * gap))
}

/// Per-slice advice on a held-out TPC-H-like table stays near Optimal.
fn within_optimal() -> Verdict {
    let started = Instant::now();
    // The criterion judges latency under the device model, so storage labels
    // come from that same model rather than from this machine's disk.
    let speed = SpeedOptions {
        prefer_measured: false,
        ..SpeedOptions::default()
    };
    let mut examples = Vec::new();
    for dtype in [DataType::Int64, DataType::String] {
        let mut of_dtype = train_corpus(dtype).to_vec();
        attach_speed_labels(&mut of_dtype, 250, 5, &speed).unwrap();
        examples.extend(of_dtype);
    }
    let bundle = train_bundle(&examples, DeviceProfile::default(), &TrainOptions::default()).unwrap();
    let table = TpchLike::new(32 * TEST_ROWS_PER_SLICE, 0x7c4).table(TEST_ROWS_PER_SLICE);
    let n_slices = table.columns[0].slices.len();
    let mode = MeasureMode::Modeled(bundle.device);
    let measured: Vec<Vec<EncodingProfile>> = table.columns.iter().map(|c| measure_column(c, &mode).unwrap()).collect();
    let predictor = BundlePredictor {
        bundle: &bundle,
        seed: TRAIN_SEED,
    };
    let mut pass = table.columns.len() >= 20 && n_slices >= 32;
    let mut parts = vec![format!("{} columns × {n_slices} slices", table.columns.len())];
    for (name, objective) in [("size", Objective::Size), ("modeled-latency", Objective::Latency)] {
        let mut plan = advise(&table.columns, &predictor, objective, Granularity::PerSlice).unwrap();
        evaluate_plan(&mut plan, &measured).unwrap();
        let best = oracle(&table.columns, &measured, objective, Granularity::PerSlice);
        let (ok, text) = gap_verdict(name, optimality_gap(&plan, &best).unwrap());
        pass &= ok;
        parts.push(text);
    }
    let (in_time, time) = elapsed_ok(started, Duration::from_secs(3600));
    parts.push(time);
    verdict(pass && in_time, parts.join(", "))
}

/// Held-out size SMAPE falls with corpus size and converges by 1,500 slices.
fn convergence() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for dtype in [DataType::Int64, DataType::String] {
        let curve: Vec<f64> = CONVERGENCE_STEPS
            .iter()
            .map(|&n| {
                let b = size_bundle(dtype, n, FeatureVariant::Full);
                training_report(&b, heldout_corpus(dtype)).unwrap().average(dtype, Target::EncodedSize).unwrap()
            })
            .collect();
        let monotone = curve.windows(2).all(|w| w[1] <= w[0] + CONVERGENCE_NOISE);
        let last = *curve.last().unwrap();
        pass &= monotone && last <= CONVERGED_SMAPE;
        parts.push(format!(
            "{dtype} [{}]{}{}",
            curve.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", "),
            if monotone { "" } else { " not monotone" },
            if last <= CONVERGED_SMAPE { "" } else { " above 15 at 1500" }
        ));
    }
    verdict(pass, parts.join("; "))
}

/// Full features beat both ablations on every integer encoding.
fn ablations() -> Verdict {
    let dtype = DataType::Int64;
    let reports: Vec<_> = FeatureVariant::ALL
        .iter()
        .map(|&v| (v, training_report(&size_bundle(dtype, TRAIN_SLICES, v), wide_corpus()).unwrap()))
        .collect();
    let smape = |v: FeatureVariant, k: EncodingKind| {
        reports.iter().find(|(rv, _)| *rv == v).unwrap().1.smape(dtype, k, Target::EncodedSize).unwrap()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in EncodingKind::applicable(dtype) {
        let (full, sample, stats) = (
            smape(FeatureVariant::Full, kind),
            smape(FeatureVariant::SampleOnly, kind),
            smape(FeatureVariant::StatisticsOnly, kind),
        );
        let mut ok = full <= sample && full <= stats;
        if matches!(kind, EncodingKind::Dictionary | EncodingKind::FrameOfReference) {
            ok &= sample - full >= ABLATION_GAP;
        }
        pass &= ok;
        parts.push(format!(
            "{kind} {full:.2}/{sample:.2}/{stats:.2}{}",
            if ok { "" } else { " ✗" }
        ));
    }
    verdict(pass, format!("full/sample-only/statistics-only: {}", parts.join(", ")))
}

/// Optimal ≤ Single Optimal ≤ all-Plain in measured size.
fn dominance() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = 0;
    let mut violations = Vec::new();
    let mut strict = 0;
    for (t, (table, measured)) in random_tables().iter().enumerate() {
        tables += 1;
        let schema = table.schema();
        let optimal = oracle(&table.columns, measured, Objective::Size, Granularity::PerSlice);
        let single = oracle(&table.columns, measured, Objective::Size, Granularity::PerColumn);
        let mut plain = EncodingPlan::uniform(&schema, 4, EncodingKind::Plain, Objective::Size);
        evaluate_plan(&mut plain, measured).unwrap();
        let (o, s, p) = (optimal.measured_cost.unwrap(), single.measured_cost.unwrap(), plain.measured_cost.unwrap());
        let compressible = single
            .columns
            .iter()
            .zip(&plain.columns)
            .any(|(a, b)| a.measured_cost.unwrap() < b.measured_cost.unwrap());
        if !(o <= s && s <= p) || (compressible && s >= p) {
            violations.push(format!("table {t}: {o} / {s} / {p}"));
        }
        strict += usize::from(compressible && s < p);
        // the same order holds for the files those plans produce
        let bytes = |plan: &EncodingPlan, name: &str| {
            let path = dir.path().join(format!("{t}-{name}.col"));
            write_table(&path, table, |c, s| plan.columns[c].kind_for(s).unwrap()).unwrap().file_len()
        };
        let (fo, fs, fp) = (bytes(&optimal, "o"), bytes(&single, "s"), bytes(&plain, "p"));
        if !(fo <= fs && fs <= fp) {
            violations.push(format!("table {t} files: {fo} / {fs} / {fp}"));
        }
    }
    verdict(
        violations.is_empty(),
        format!(
            "{tables} tables, {strict} strictly compressible, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

/// Device-model fit recovers known latency and throughput.
fn calibration() -> Verdict {
    let devices = [
        (200_000.0, 250.0 * 1024.0 * 1024.0),
        (80_000.0, 2.0e9),
        (5_000_000.0, 100.0e6),
    ];
    let sizes: [u64; 6] = [4096, 65_536, 1 << 20, 4 << 20, 16 << 20, 64 << 20];
    let mut worst: f64 = 0.0;
    for (latency, throughput) in devices {
        let truth = DeviceProfile {
            latency_ns: latency,
            throughput_bps: throughput,
        };
        let points: Vec<(u64, f64)> = sizes.iter().map(|&s| (s, truth.transfer_ns(s as f64))).collect();
        let fit = fit_device(&points).unwrap().device;
        worst = worst
            .max((fit.latency_ns - latency).abs() / latency)
            .max((fit.throughput_bps - throughput).abs() / throughput);
    }
    verdict(
        worst <= CALIBRATION_TOLERANCE,
        format!("{} devices, worst relative error {:.2e}", devices.len(), worst),
    )
}

fn lea(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lea")).args(args).output().unwrap();
    assert!(out.status.success(), "lea {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

/// Repeated CLI runs with identical flags produce identical artifacts.
fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    for run in ["a", "b"] {
        lea(&[
            "train", "--phase", "size", "--dtype", "all", "--slices", "60", "--rows", "8192", "--seed", "42", "--out",
            &path(&format!("{run}.lea")),
        ]);
    }
    lea(&["encode", "--tpch-rows", "16384", "--slice-rows", "4096", "--out", &path("t.col")]);
    for run in ["a", "b"] {
        lea(&[
            "advise", "--table", &path("t.col"), "--model", &path("a.lea"), "--objective", "size", "--granularity", "slice", "--out",
            &path(&format!("{run}.plan.json")),
        ]);
    }
    let p = |n: &str| dir.path().join(n);
    let training = same_bytes(&p("a.lea.train.jsonl"), &p("b.lea.train.jsonl"));
    let models = same_bytes(&p("a.lea"), &p("b.lea"));
    let plans = same_bytes(&p("a.plan.json"), &p("b.plan.json"));
    verdict(
        training && models && plans,
        format!("training sets identical: {training}, size models identical: {models}, plans identical: {plans}"),
    )
}

fn main() {
    // `cargo test -- <filter>` passes a filter; run everything unless it
    // names a criterion.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        ("codec_correctness", codec_correctness),
        ("oracle_equivalence", oracle_equivalence),
        ("within_optimal", within_optimal),
        ("convergence", convergence),
        ("ablations", ablations),
        ("dominance", dominance),
        ("calibration", calibration),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "criterion {} {name}: {} [{:.1}s] {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
