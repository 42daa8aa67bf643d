mod common;

use cdw_core::olap::{
    drill_down, plan, query, query_base, roll_up, AccessPath, Axis, AxisLevel, CellSet, Filter, MeasureValue,
    QuerySpec,
};
use cdw_core::schema::MemberPath;
use cdw_core::warehouse::{FilterOp, Grain, Snapshot, Writer};
use cdw_core::Error;
use common::{small, warehouse};

fn spec(json: &str) -> QuerySpec {
    QuerySpec::from_json(json).unwrap()
}

fn value(cells: &CellSet, r: usize, c: usize, m: &str) -> Option<MeasureValue> {
    cells.cell(r, c).map(|cell| cell[m])
}

fn path(parts: &[&str]) -> MemberPath {
    MemberPath::new(parts.iter().copied())
}

#[test]
fn yearly_event_count_and_gender_slice() {
    let dir = tempfile::tempdir().unwrap();
    let (_, snap) = small().build(dir.path());
    let by_year = spec(r#"{"cube_id":"treatment","rows":["date@year"],"measures":["event_count"]}"#);
    let cells = query(&snap, &by_year).unwrap();
    assert_eq!(cells.row_axis, vec![vec![path(&["2012"])]]);
    assert_eq!(value(&cells, 0, 0, "event_count"), Some(MeasureValue::Int(5)));

    let women = spec(
        r#"{"cube_id":"treatment","rows":["date@year"],"measures":["event_count"],
            "filters":[{"dimension":"patient","attribute":"gender","op":"eq","values":["F"]}]}"#,
    );
    let cells = query(&snap, &women).unwrap();
    assert_eq!(value(&cells, 0, 0, "event_count"), Some(MeasureValue::Int(2)));
}

#[test]
fn death_rate_counts_distinct_patients_and_empty_cells_are_absent() {
    let dir = tempfile::tempdir().unwrap();
    let (_, snap) = small().build(dir.path());
    let s = spec(
        r#"{"cube_id":"treatment","rows":["location@governorate"],"columns":["cancer@stage"],
            "measures":["death_rate","event_count"]}"#,
    );
    let cells = query(&snap, &s).unwrap();
    let cairo = cells.row_index(&[path(&["Cairo"])]).unwrap();
    let sharqia = cells.row_index(&[path(&["Sharqia"])]).unwrap();
    let stage2 = cells.column_index(&[path(&["lymphoid", "hodgkin", "II"])]).unwrap();
    let stage3 = cells.column_index(&[path(&["lymphoid", "hodgkin", "III"])]).unwrap();
    // Cairo stage II holds only patient 1 (died, two events).
    assert_eq!(value(&cells, cairo, stage2, "death_rate"), Some(MeasureValue::Float(1.0)));
    assert!(cells.cell(sharqia, stage3).is_none());
    // Stage II over both governorates: patient 1 died, patient 2 did not.
    let col_total = cells.column_totals[stage2].as_ref().unwrap();
    assert_eq!(col_total["death_rate"], MeasureValue::Float(0.5));
    assert_eq!(col_total["event_count"], MeasureValue::Int(3));
    assert_eq!(cells.cells.len(), cells.row_axis.len() * cells.column_axis.len());
}

#[test]
fn empty_warehouse_gives_absent_cells() {
    let dir = tempfile::tempdir().unwrap();
    let snap = Snapshot::open(dir.path()).unwrap();
    let cells = query(&snap, &spec(r#"{"cube_id":"lab","measures":["event_count"]}"#)).unwrap();
    assert_eq!(cells.cells, vec![None]);
    assert!(cells.grand_total.is_none());
}

#[test]
fn drill_down_rewrites_and_adds_up() {
    let dir = tempfile::tempdir().unwrap();
    let (_, snap) = small().build(dir.path());
    let by_year = spec(r#"{"cube_id":"treatment","rows":["date@year"],"measures":["event_count"]}"#);
    let drilled = drill_down(&snap, &by_year, Axis::Rows, None, &path(&["2012"])).unwrap();
    assert_eq!(drilled.rows, vec![AxisLevel::new("date", "quarter")]);
    assert_eq!(
        drilled.filters,
        vec![Filter {
            dimension: "date".into(),
            level: "year".into(),
            op: FilterOp::Eq,
            values: vec![path(&["2012"])],
        }]
    );
    assert!(matches!(
        drill_down(&snap, &by_year, Axis::Rows, None, &path(&["2099"])),
        Err(Error::UnknownMember(_))
    ));
    let by_day = spec(r#"{"cube_id":"treatment","rows":["date@day"],"measures":["event_count"]}"#);
    let day = path(&["2012", "Q1", "01", "10"]);
    assert!(matches!(
        drill_down(&snap, &by_day, Axis::Rows, None, &day),
        Err(Error::AtFinestLevel(_))
    ));

    let by_site = spec(r#"{"cube_id":"treatment","rows":["cancer@site"],"measures":["event_count","sum_cost"]}"#);
    let parent = query(&snap, &by_site).unwrap();
    let drilled = drill_down(&snap, &by_site, Axis::Rows, None, &path(&["lymphoid"])).unwrap();
    assert_eq!(drilled.rows, vec![AxisLevel::new("cancer", "type")]);
    let children = query(&snap, &drilled).unwrap();
    for m in ["event_count", "sum_cost"] {
        let sum: i64 = (0..children.row_axis.len())
            .filter_map(|r| value(&children, r, 0, m))
            .map(|v| v.as_i64().unwrap())
            .sum();
        assert_eq!(Some(MeasureValue::Int(sum)), value(&parent, 0, 0, m));
    }
    assert_eq!(roll_up(&drilled, Axis::Rows, None).unwrap(), by_site);
}

#[test]
fn roll_up_rules() {
    let by_year = spec(r#"{"cube_id":"treatment","rows":["date@year"],"measures":["event_count"]}"#);
    assert!(matches!(roll_up(&by_year, Axis::Rows, None), Err(Error::AtCoarsestLevel(_))));
    let staged = spec(
        r#"{"cube_id":"treatment","rows":["cancer@stage"],"measures":["event_count"],
            "filters":[{"dimension":"cancer","level":"stage","op":"eq","values":[["lymphoid","hodgkin","II"]]}]}"#,
    );
    let rolled = roll_up(&staged, Axis::Rows, None).unwrap();
    assert_eq!(rolled.rows, vec![AxisLevel::new("cancer", "type")]);
    assert!(rolled.filters.is_empty());
}

#[test]
fn planner_prefers_smallest_covering_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = small().build(dir.path());
    let mut writer = Writer::open(warehouse(dir.path())).unwrap();
    let now = common::as_of();
    let year = writer.build_aggregate(&Grain::parse("treatment:date@year").unwrap(), now).unwrap();
    let month = writer.build_aggregate(&Grain::parse("treatment:date@month").unwrap(), now).unwrap();
    assert!(year.rows < month.rows);
    drop(writer);
    let snap = Snapshot::open(warehouse(dir.path())).unwrap();

    let by_year = spec(r#"{"cube_id":"treatment","rows":["date@year"],"measures":["event_count","sum_cost"]}"#);
    match plan(&snap, &by_year).unwrap().access_path {
        AccessPath::Aggregate { id, .. } => assert_eq!(id, year.id),
        other => panic!("expected the year aggregate, got {other:?}"),
    }
    assert_eq!(query(&snap, &by_year).unwrap(), query_base(&snap, &by_year).unwrap());

    let by_quarter = spec(r#"{"cube_id":"treatment","rows":["date@quarter"],"measures":["event_count"]}"#);
    assert!(matches!(
        plan(&snap, &by_quarter).unwrap().access_path,
        AccessPath::Aggregate { ref id, .. } if *id == month.id
    ));

    let rate = spec(r#"{"cube_id":"treatment","rows":["date@year"],"measures":["death_rate"]}"#);
    assert_eq!(plan(&snap, &rate).unwrap().access_path, AccessPath::BaseScan);

    let blood = spec(
        r#"{"cube_id":"treatment","rows":["date@year"],"measures":["event_count"],
            "filters":[{"dimension":"patient","attribute":"blood_group","op":"eq","values":["O+"]}]}"#,
    );
    assert_eq!(plan(&snap, &blood).unwrap().access_path, AccessPath::BaseScan);
    assert_eq!(
        value(&query(&snap, &blood).unwrap(), 0, 0, "event_count"),
        Some(MeasureValue::Int(2))
    );
}

#[test]
fn lab_cube_measures() {
    let dir = tempfile::tempdir().unwrap();
    let (_, snap) = small().build(dir.path());
    let s = spec(
        r#"{"cube_id":"lab","rows":["test@test_type"],
            "measures":["event_count","abnormal_count","abnormal_rate","avg_value"]}"#,
    );
    let cells = query(&snap, &s).unwrap();
    let blood = cells.row_index(&[path(&["blood"])]).unwrap();
    assert_eq!(value(&cells, blood, 0, "abnormal_rate"), Some(MeasureValue::Float(1.0)));
    assert_eq!(value(&cells, blood, 0, "avg_value"), Some(MeasureValue::Float(10.5)));
    let total = cells.grand_total.as_ref().unwrap();
    assert_eq!(total["event_count"], MeasureValue::Int(2));
    assert_eq!(total["abnormal_rate"], MeasureValue::Float(0.5));
}
