use std::io::BufReader;

use lea_core::advisor::{advise, BundlePredictor, EncodingPlan, Granularity, Objective};
use lea_core::codecs::{DataType, DeviceProfile, EncodingKind, Slice};
use lea_core::colstore::tpch::TpchLike;
use lea_core::colstore::{apply_plan, export_csv, ingest_csv, parse_schema, scan_column, write_table, ScanMode, TableFile};
use lea_core::features::{contiguous_sample, sample_profile, slice_statistics, FeatureVariant, SAMPLE_FRACTION};
use lea_core::harness::{collect_size_examples, read_training_set, train_bundle, write_training_set, ModelBundle, TrainOptions};
use lea_core::synthgen::{read_manifest, sample_spec, write_manifest, ManifestRecord};

fn small_bundle() -> ModelBundle {
    let mut examples = collect_size_examples(DataType::Int64, 40, 4096, 1).unwrap();
    examples.extend(collect_size_examples(DataType::String, 40, 4096, 1).unwrap());
    train_bundle(&examples, DeviceProfile::default(), &TrainOptions::default()).unwrap()
}

#[test]
fn advised_table_is_smaller_than_plain_and_decodes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let table = TpchLike::new(12_000, 3).table(4096);
    let plain = write_table(dir.path().join("plain.col"), &table, |_, _| EncodingKind::Plain).unwrap();
    plain.validate().unwrap();

    let bundle = small_bundle();
    let predictor = BundlePredictor { bundle: &bundle, seed: 9 };
    let plan = advise(&table.columns, &predictor, Objective::Size, Granularity::PerSlice).unwrap();
    let advised = apply_plan(&plain, &plan, dir.path().join("lea.col")).unwrap();
    advised.validate().unwrap();

    assert!(advised.file_len() < plain.file_len(), "{} vs {}", advised.file_len(), plain.file_len());
    assert_eq!(advised.load().unwrap(), plain.load().unwrap());
    for c in 0..plain.schema().len() {
        let a = scan_column(&plain, c, ScanMode::InMemory).unwrap();
        let b = scan_column(&advised, c, ScanMode::InMemory).unwrap();
        assert_eq!(a.aggregate, b.aggregate);
    }
    // the directory records the planned encodings
    for (c, col) in plan.columns.iter().enumerate() {
        for (s, entry) in advised.entries(c).iter().enumerate() {
            assert_eq!(Some(entry.kind), col.kind_for(s));
        }
    }
}

#[test]
fn plan_file_round_trip_drives_encoding() {
    let dir = tempfile::tempdir().unwrap();
    let table = TpchLike::new(5000, 4).table(2048);
    let plain = write_table(dir.path().join("t.col"), &table, |_, _| EncodingKind::Plain).unwrap();
    let plan = EncodingPlan::uniform(plain.schema(), plain.slice_count(), EncodingKind::GeneralLZ, Objective::Size);
    let path = dir.path().join("plan.json");
    plan.save(&path).unwrap();
    let loaded = EncodingPlan::load(&path).unwrap();
    assert_eq!(loaded, plan);
    let lz = apply_plan(&plain, &loaded, dir.path().join("lz.col")).unwrap();
    assert!(lz.entries(0).iter().all(|e| e.kind == EncodingKind::GeneralLZ));
    assert_eq!(lz.load().unwrap(), plain.load().unwrap());
}

#[test]
fn reopened_table_matches_written_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = TpchLike::new(3000, 5).table(1000);
    let written = write_table(dir.path().join("t.col"), &table, |c, s| {
        EncodingKind::applicable(table.columns[c].dtype).nth(s % 4).unwrap()
    })
    .unwrap();
    let reopened = TableFile::open(written.path()).unwrap();
    reopened.validate().unwrap();
    assert_eq!(reopened.slice_count(), 3);
    assert_eq!(reopened.total_rows(), 3000);
    assert_eq!(reopened.load().unwrap(), table);
}

#[test]
fn csv_ingest_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in.csv");
    std::fs::write(&src, "id,name\n1,ann\n,bob\n3,\n-4,dee\n5,eve\n").unwrap();
    let schema = parse_schema("id:int,name:string").unwrap();
    let t = ingest_csv(&src, &schema, 2, dir.path().join("t.col")).unwrap();
    assert_eq!(t.slice_count(), 3);
    let out = dir.path().join("out.csv");
    export_csv(&t, &out).unwrap();
    let back = ingest_csv(&out, &schema, 2, dir.path().join("t2.col")).unwrap();
    assert_eq!(back.load().unwrap(), t.load().unwrap());
    let col = t.read_column(0).unwrap();
    assert_eq!(col.slices[0], Slice::from_ints(vec![Some(1), None]));
}

#[test]
fn manifest_regenerates_identical_slices() {
    let records: Vec<ManifestRecord> = (0..12)
        .map(|i| {
            let dtype = if i % 2 == 0 { DataType::Int64 } else { DataType::String };
            ManifestRecord {
                index: i,
                spec: sample_spec(dtype, 100 + i as u64, 3000),
                rows: 3000,
                seed: 7 * i as u64,
            }
        })
        .collect();
    let mut buf = Vec::new();
    write_manifest(&mut buf, &records).unwrap();
    let back = read_manifest(BufReader::new(&buf[..])).unwrap();
    assert_eq!(back, records);
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(a.regenerate().unwrap(), b.regenerate().unwrap());
    }
}

#[test]
fn training_set_and_bundle_round_trip() {
    let examples = collect_size_examples(DataType::Int64, 20, 2048, 11).unwrap();
    let mut buf = Vec::new();
    write_training_set(&mut buf, &examples).unwrap();
    assert_eq!(read_training_set(BufReader::new(&buf[..])).unwrap(), examples);

    let bundle = train_bundle(&examples, DeviceProfile::default(), &TrainOptions::default()).unwrap();
    let reloaded = ModelBundle::from_json(&bundle.to_json().unwrap()).unwrap();
    let slice = lea_core::synthgen::generate(&sample_spec(DataType::Int64, 999, 2048), 2048, 5).unwrap();
    let stats = slice_statistics(&slice);
    let profile = sample_profile(&contiguous_sample(&slice, SAMPLE_FRACTION, 1).unwrap()).unwrap();
    for kind in EncodingKind::applicable(DataType::Int64) {
        let a = bundle.predict(&stats, Some(&profile), kind).unwrap();
        let b = reloaded.predict(&stats, Some(&profile), kind).unwrap();
        assert_eq!(a.size_bytes.to_bits(), b.size_bytes.to_bits());
    }
    assert_eq!(reloaded.variant(), FeatureVariant::Full);
}
