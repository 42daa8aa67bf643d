mod common;

use std::collections::BTreeSet;
use std::fs;

use cdw_core::ingest::StagingArea;
use cdw_core::pipeline::{current_batches, transform};
use cdw_core::schema::{CubeId, MemberPath};
use cdw_core::transform::{DimensionRegistry, TransformConfig, DEFAULT_NATIONAL_ID_PATTERN};
use cdw_core::warehouse::{Condition, FilterOp, Grain, LoadContext, Snapshot, Writer};
use cdw_core::Error;
use common::{as_of, small, warehouse, Fixture, PatientSpec};

fn transformed(root: &std::path::Path) -> cdw_core::pipeline::Transformed {
    let staging = StagingArea::open(root.join("staging")).unwrap();
    let batches: Vec<_> = current_batches(&staging)
        .unwrap()
        .into_iter()
        .map(|id| staging.load_batch(id).unwrap())
        .collect();
    let config = TransformConfig::new(DEFAULT_NATIONAL_ID_PATTERN, as_of().date_naive()).unwrap();
    transform(&batches, &config, as_of())
}

fn fact_sum(snap: &Snapshot, cube: CubeId, column: &str) -> i64 {
    snap.view(cube).measure(column).unwrap().iter().sum()
}

#[test]
fn reloading_the_same_rows_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let (first, snap) = small().build(dir.path());
    let t = transformed(dir.path());
    let mut writer = Writer::open(warehouse(dir.path())).unwrap();
    let ctx = LoadContext { batch_ids: first.batches.clone() };
    let again = writer.load(t.rows(), &t.conformed.registry, &ctx, as_of()).unwrap();
    let facts = again.counts("fact_treatment_event");
    assert_eq!((facts.inserted, facts.updated, facts.skipped), (0, 0, 5));
    assert_eq!(again.counts("fact_lab_result").skipped, 2);
    let after = writer.snapshot();
    for table in ["fact_treatment_event", "fact_lab_result", "dim_patient"] {
        assert_eq!(after.schema().row_count(table), snap.schema().row_count(table));
    }
    assert_eq!(
        fact_sum(after, CubeId::Treatment, "cost_millis"),
        fact_sum(&snap, CubeId::Treatment, "cost_millis")
    );
    assert!(after.audit().is_empty());
}

#[test]
fn empty_load_keeps_watermarks() {
    let dir = tempfile::tempdir().unwrap();
    let (_, snap) = small().build(dir.path());
    let mut writer = Writer::open(warehouse(dir.path())).unwrap();
    let m = writer
        .load(&[], &DimensionRegistry::default(), &LoadContext::default(), as_of())
        .unwrap();
    assert_eq!(m.changed_rows(), 0);
    assert!(m.tables.values().all(|c| c.inserted == 0 && c.updated == 0 && c.skipped == 0));
    assert_eq!(m.watermarks, snap.manifest().watermarks);
}

#[test]
fn aggregates_match_base_totals() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = Fixture::default();
    f.patient(1, PatientSpec::default());
    f.diagnosis(1, "2010-01-01", "breast", "ductal", "I");
    for (i, date) in ["2011-03-01", "2012-03-01", "2012-05-01", "2013-07-09"].iter().enumerate() {
        f.treatment(1, date, "chemotherapy", &format!("C-{i}"), "10.25", "ongoing");
    }
    let (_, snap) = f.build(dir.path());
    let mut writer = Writer::open(warehouse(dir.path())).unwrap();
    let total = writer.build_aggregate(&Grain::parse("treatment:*").unwrap(), as_of()).unwrap();
    let years = writer.build_aggregate(&Grain::parse("treatment:date@year").unwrap(), as_of()).unwrap();
    let finest = Grain::parse(
        "treatment:date@day,cancer@stage,treatment@drug,location@city,age_band@band",
    )
    .unwrap();
    let fine = writer.build_aggregate(&finest, as_of()).unwrap();
    assert_eq!(total.rows, 1);
    assert_eq!(years.rows, 3);

    let snap2 = writer.snapshot();
    let agg = snap2.aggregate(&total.id).unwrap();
    assert_eq!(agg.measure("cost_millis").unwrap(), &[41_000]);
    let view = snap.view(CubeId::Treatment);
    let tuples: BTreeSet<Vec<MemberPath>> = (0..view.len())
        .map(|r| finest.levels().map(|l| view.path(l.hierarchy, r).truncated(l.depth)).collect())
        .collect();
    assert_eq!(fine.rows as usize, tuples.len());
    let fine_table = snap2.aggregate(&fine.id).unwrap();
    for (name, values) in &fine_table.measures {
        assert_eq!(values.iter().sum::<i64>(), fact_sum(&snap, CubeId::Treatment, name), "{name}");
    }
}

#[test]
fn unknown_grain_level_is_rejected() {
    assert!(matches!(Grain::parse("treatment:date@week"), Err(Error::UnknownLevel(_))));
}

#[test]
fn scan_applies_dimension_predicates() {
    let dir = tempfile::tempdir().unwrap();
    let (_, snap) = small().build(dir.path());
    assert_eq!(snap.scan(CubeId::Treatment, &[]).unwrap().len(), 5);
    let women = Condition::parse("patient", "gender", FilterOp::Eq, vec![MemberPath::new(["F"])]).unwrap();
    let rows = snap.scan(CubeId::Treatment, &[women.clone()]).unwrap();
    let view = snap.view(CubeId::Treatment);
    assert_eq!(rows.len(), 2);
    let costs: Vec<i64> = rows.iter().map(|r| view.measure("cost_millis").unwrap()[*r]).collect();
    assert_eq!(costs.iter().sum::<i64>(), 220_000);
    assert!(matches!(
        Condition::parse("patient", "eye_colour", FilterOp::Eq, vec![MemberPath::new(["x"])]),
        Err(Error::UnknownAttribute(_))
    ));

    let empty_dir = tempfile::tempdir().unwrap();
    let empty = Snapshot::open(empty_dir.path()).unwrap();
    assert!(empty.scan(CubeId::Treatment, &[women]).unwrap().is_empty());
}

#[test]
fn uncommitted_load_is_invisible() {
    let dir = tempfile::tempdir().unwrap();
    let (_, before) = small().build(dir.path());
    let mut f = small();
    f.patient(9, PatientSpec::default());
    f.diagnosis(9, "2012-01-01", "liver", "hepatocellular", "IV");
    f.treatment(9, "2012-06-01", "radiotherapy", "R-EBR", "999.00", "death");
    let other = tempfile::tempdir().unwrap();
    f.write_sources(other.path());
    let staging = StagingArea::open(other.path().join("staging")).unwrap();
    cdw_core::pipeline::ingest_generated(&staging, other.path(), as_of()).unwrap();
    let t = transformed(other.path());

    let writer = Writer::open(warehouse(dir.path())).unwrap();
    let prepared = writer
        .prepare_load(t.rows(), &t.conformed.registry, &LoadContext::default(), as_of())
        .unwrap();
    // Simulate a crash between writing files and publishing the manifest.
    fs::write(
        warehouse(dir.path()).join(format!("manifest.{}.tmp", prepared.version())),
        "partial",
    )
    .unwrap();
    drop(prepared);
    drop(writer);

    let after = Snapshot::open(warehouse(dir.path())).unwrap();
    assert_eq!(after.version(), before.version());
    assert_eq!(after.schema(), before.schema());
    assert_eq!(after.schema().row_count("fact_treatment_event"), 5);
}

#[test]
fn single_writer_lock() {
    let dir = tempfile::tempdir().unwrap();
    let w = Writer::open(dir.path()).unwrap();
    assert!(matches!(Writer::open(dir.path()), Err(Error::WarehouseLocked(_))));
    drop(w);
    Writer::open(dir.path()).unwrap();
}

#[test]
fn damaged_column_file_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, snap) = small().build(dir.path());
    let table = snap
        .manifest()
        .tables
        .iter()
        .find(|t| t.name == "fact_treatment_event")
        .unwrap();
    let file = warehouse(dir.path()).join(&table.columns[0].file);
    let mut bytes = fs::read(&file).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    fs::write(&file, bytes).unwrap();
    match Snapshot::open(warehouse(dir.path())) {
        Err(Error::CorruptTable { table, .. }) => assert_eq!(table, "fact_treatment_event"),
        other => panic!("expected CorruptTable, got {:?}", other.map(|s| s.version())),
    }
}

#[test]
fn changing_loads_make_aggregates_stale() {
    let dir = tempfile::tempdir().unwrap();
    let (report, _) = small().build(dir.path());
    let mut writer = Writer::open(warehouse(dir.path())).unwrap();
    let meta = writer.build_aggregate(&Grain::parse("treatment:date@year").unwrap(), as_of()).unwrap();
    let t = transformed(dir.path());
    let ctx = LoadContext { batch_ids: report.batches };
    writer.load(t.rows(), &t.conformed.registry, &ctx, as_of()).unwrap();
    let snap = writer.snapshot();
    assert!(!snap.is_stale(snap.aggregate(&meta.id).unwrap()), "a no-op load keeps aggregates fresh");
    drop(writer);

    let mut f = small();
    f.treatment(2, "2012-12-01", "biological", "B-RTX", "10.00", "stable");
    let (_, snap) = f.build(dir.path());
    assert!(snap.is_stale(snap.aggregate(&meta.id).unwrap()));
    assert_eq!(snap.schema().row_count("fact_treatment_event"), 6);
}
