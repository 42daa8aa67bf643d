//! The three standing analyses: treatment cost, death rate by cancer type and
//! drug impact. Every number is read from a cell of one of the queries listed
//! in `ReportResult::queries`, so each report can be re-derived by running
//! those specs directly.
//!
//! CSV columns, in order:
//!
//! * `treatment-cost`: `group,sum_cost,event_count,avg_cost`
//! * `death-rate`: `breakdown,member,death_rate`
//! * `drug-impact`: `cohort,drugs,remission_rate,death_rate,event_count`

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::olap::{query, AxisLevel, CellSet, Filter, MeasureValue, QuerySpec};
use crate::schema::{CubeId, MemberPath};
use crate::warehouse::{FilterOp, Snapshot};

pub const REPORT_IDS: [&str; 3] = ["treatment-cost", "death-rate", "drug-impact"];

/// Inclusive range of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: i32,
    pub end: i32,
}

impl Period {
    pub fn new(start: i32, end: i32) -> Result<Period> {
        if start > end {
            return Err(Error::InvalidPeriod(format!("start {start} is after end {end}")));
        }
        Ok(Period { start, end })
    }

    fn filter(&self) -> Filter {
        Filter {
            dimension: "date".into(),
            level: "year".into(),
            op: FilterOp::Between,
            values: vec![
                MemberPath::new([format!("{:04}", self.start)]),
                MemberPath::new([format!("{:04}", self.end)]),
            ],
        }
    }

    fn years(&self) -> Vec<String> {
        (self.start..=self.end).map(|y| format!("{y:04}")).collect()
    }

    fn months(&self) -> Vec<String> {
        (self.start..=self.end)
            .flat_map(|y| (1..=12).map(move |m| format!("{y:04}-{m:02}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub period: String,
    /// `null` marks a period without facts.
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedQuery {
    pub name: String,
    pub spec: QuerySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResult {
    pub report_id: String,
    pub parameters: IndexMap<String, Value>,
    pub metadata: IndexMap<String, String>,
    pub columns: Vec<String>,
    pub table: Vec<IndexMap<String, Value>>,
    pub series_measure: String,
    pub series: Vec<SeriesPoint>,
    pub queries: Vec<NamedQuery>,
    pub generated_at: DateTime<Utc>,
    pub manifest_version: u64,
}

impl ReportResult {
    /// The table section as CSV, money as exact decimals and rates at full
    /// precision; absent values are empty fields.
    /// Display form: fractional values get six decimals.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.table {
            let fields: Vec<String> = self
                .columns
                .iter()
                .map(|c| match row.get(c) {
                    None | Some(Value::Null) => String::new(),
                    Some(Value::String(s)) => s.clone(),
                    Some(Value::Number(n)) if n.is_f64() => format!("{:.6}", n.as_f64().unwrap_or(f64::NAN)),
                    Some(v) => v.to_string(),
                })
                .collect();
            w.write_record(&fields)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Renders integer millis as a decimal amount with at least two fraction
/// digits: `400000` is `400.00`, `133335` is `133.335`.
pub fn format_money(millis: i64) -> String {
    let sign = if millis < 0 { "-" } else { "" };
    let abs = millis.unsigned_abs();
    let (whole, frac) = (abs / 1000, abs % 1000);
    if frac % 10 == 0 {
        format!("{sign}{whole}.{:02}", frac / 10)
    } else {
        format!("{sign}{whole}.{frac:03}")
    }
}

fn value_of(v: Option<MeasureValue>) -> Value {
    match v {
        None => Value::Null,
        Some(MeasureValue::Int(i)) => Value::from(i),
        Some(MeasureValue::Float(f)) => Value::from(f),
    }
}

fn money_of(v: Option<MeasureValue>) -> Value {
    match v.and_then(MeasureValue::as_i64) {
        Some(m) => Value::String(format_money(m)),
        None => Value::Null,
    }
}

/// Average cost in currency units (the measure itself is in millis).
fn avg_money(v: Option<MeasureValue>) -> Value {
    match v {
        Some(v) => Value::from(v.as_f64() / 1000.0),
        None => Value::Null,
    }
}

fn measure(cells: &CellSet, row: usize, name: &str) -> Option<MeasureValue> {
    cells.cell(row, 0).and_then(|c| c.get(name).copied())
}

fn spec(cube: CubeId, rows: &[(&str, &str)], measures: &[&str], filters: Vec<Filter>) -> QuerySpec {
    let mut s = QuerySpec::new(cube, measures);
    s.rows = rows.iter().map(|(d, l)| AxisLevel::new(d, l)).collect();
    s.filters = filters;
    s
}

fn eq_or_in(dimension: &str, level: &str, values: Vec<MemberPath>) -> Filter {
    Filter {
        dimension: dimension.into(),
        level: level.into(),
        op: if values.len() == 1 { FilterOp::Eq } else { FilterOp::In },
        values,
    }
}

/// A contiguous series over `labels`; empty when no period has facts.
fn series(cells: &CellSet, labels: &[String], label_of: impl Fn(&MemberPath) -> String, pick: impl Fn(usize) -> Value) -> Vec<SeriesPoint> {
    let found: BTreeMap<String, usize> = cells
        .row_axis
        .iter()
        .enumerate()
        .filter(|(r, _)| cells.cell(*r, 0).is_some())
        .map(|(r, t)| (label_of(&t[0]), r))
        .collect();
    if found.is_empty() {
        return Vec::new();
    }
    labels
        .iter()
        .map(|l| SeriesPoint {
            period: l.clone(),
            value: found.get(l).map(|r| pick(*r)).unwrap_or(Value::Null),
        })
        .collect()
}

fn month_label(p: &MemberPath) -> String {
    format!("{}-{}", p.0[0], p.0[2])
}

fn year_label(p: &MemberPath) -> String {
    p.0[0].clone()
}

fn base(report_id: &str, snapshot: &Snapshot, now: DateTime<Utc>) -> ReportResult {
    ReportResult {
        report_id: report_id.into(),
        parameters: IndexMap::new(),
        metadata: IndexMap::new(),
        columns: Vec::new(),
        table: Vec::new(),
        series_measure: String::new(),
        series: Vec::new(),
        queries: Vec::new(),
        generated_at: now,
        manifest_version: snapshot.version(),
    }
}

pub fn treatment_cost_report(
    snapshot: &Snapshot,
    period: Period,
    group_by: &str,
    now: DateTime<Utc>,
) -> Result<ReportResult> {
    if !["site", "type", "stage"].contains(&group_by) {
        return Err(Error::InvalidSpec(format!(
            "group_by '{group_by}' is not a cancer level (site, type, stage)"
        )));
    }
    let mut r = base("treatment-cost", snapshot, now);
    r.parameters.insert("start".into(), period.start.into());
    r.parameters.insert("end".into(), period.end.into());
    r.parameters.insert("group_by".into(), group_by.into());
    r.metadata.insert("currency".into(), "EGP".into());

    let by_group = spec(
        CubeId::Treatment,
        &[("cancer", group_by)],
        &["sum_cost", "event_count", "avg_cost"],
        vec![period.filter()],
    );
    let monthly = spec(CubeId::Treatment, &[("date", "month")], &["sum_cost"], vec![period.filter()]);
    let groups = query(snapshot, &by_group)?;
    let months = query(snapshot, &monthly)?;

    r.columns = ["group", "sum_cost", "event_count", "avg_cost"].map(String::from).to_vec();
    for (row, tuple) in groups.row_axis.iter().enumerate() {
        if groups.cell(row, 0).is_none() {
            continue;
        }
        let mut out = IndexMap::new();
        out.insert("group".into(), Value::String(tuple[0].label()));
        out.insert("sum_cost".into(), money_of(measure(&groups, row, "sum_cost")));
        out.insert("event_count".into(), value_of(measure(&groups, row, "event_count")));
        out.insert("avg_cost".into(), avg_money(measure(&groups, row, "avg_cost")));
        r.table.push(out);
    }
    r.series_measure = "sum_cost".into();
    r.series = series(&months, &period.months(), month_label, |row| {
        money_of(measure(&months, row, "sum_cost"))
    });
    r.queries = vec![
        NamedQuery {
            name: "by_group".into(),
            spec: by_group,
        },
        NamedQuery {
            name: "monthly".into(),
            spec: monthly,
        },
    ];
    Ok(r)
}

/// `[site, type]` paths of every cancer row with this type.
fn cancer_type_paths(snapshot: &Snapshot, cancer_type: &str) -> Result<Vec<MemberPath>> {
    let c = &snapshot.schema().dim_cancer;
    let paths: BTreeSet<MemberPath> = (0..c.len())
        .filter(|i| c.cancer_type[*i] == cancer_type)
        .map(|i| MemberPath::new([c.site[i].clone(), c.cancer_type[i].clone()]))
        .collect();
    if paths.is_empty() {
        return Err(Error::UnknownCancerType(cancer_type.to_string()));
    }
    Ok(paths.into_iter().collect())
}

pub fn death_rate_report(
    snapshot: &Snapshot,
    cancer_type: &str,
    period: Period,
    now: DateTime<Utc>,
) -> Result<ReportResult> {
    let paths = cancer_type_paths(snapshot, cancer_type)?;
    let mut r = base("death-rate", snapshot, now);
    r.parameters.insert("cancer_type".into(), cancer_type.into());
    r.parameters.insert("start".into(), period.start.into());
    r.parameters.insert("end".into(), period.end.into());
    r.metadata.insert(
        "death_rate".into(),
        "distinct patients with a death outcome / distinct patients treated".into(),
    );

    let filters = vec![eq_or_in("cancer", "type", paths), period.filter()];
    let overall = spec(CubeId::Treatment, &[], &["death_rate"], filters.clone());
    let by_stage = spec(CubeId::Treatment, &[("cancer", "stage")], &["death_rate"], filters.clone());
    let by_age = spec(CubeId::Treatment, &[("age_band", "band")], &["death_rate"], filters.clone());
    let yearly = spec(CubeId::Treatment, &[("date", "year")], &["death_rate"], filters);

    r.columns = ["breakdown", "member", "death_rate"].map(String::from).to_vec();
    let row = |breakdown: &str, member: String, v: Value| -> IndexMap<String, Value> {
        IndexMap::from([
            ("breakdown".to_string(), Value::String(breakdown.into())),
            ("member".to_string(), Value::String(member)),
            ("death_rate".to_string(), v),
        ])
    };
    let cells = query(snapshot, &overall)?;
    r.table.push(row("overall", cancer_type.to_string(), value_of(measure(&cells, 0, "death_rate"))));
    let breakdowns: [(&str, &QuerySpec, fn(&MemberPath) -> String); 2] = [
        ("stage", &by_stage, |p| p.0[2].clone()),
        ("age_band", &by_age, |p| p.0[0].clone()),
    ];
    for (name, q, label) in breakdowns {
        let cells = query(snapshot, q)?;
        for (i, tuple) in cells.row_axis.iter().enumerate() {
            if cells.cell(i, 0).is_some() {
                r.table.push(row(name, label(&tuple[0]), value_of(measure(&cells, i, "death_rate"))));
            }
        }
    }
    let years = query(snapshot, &yearly)?;
    r.series_measure = "death_rate".into();
    r.series = series(&years, &period.years(), year_label, |i| value_of(measure(&years, i, "death_rate")));
    r.queries = [("overall", overall), ("by_stage", by_stage), ("by_age_band", by_age), ("yearly", yearly)]
        .into_iter()
        .map(|(n, spec)| NamedQuery { name: n.into(), spec })
        .collect();
    Ok(r)
}

pub fn drug_impact_report(
    snapshot: &Snapshot,
    drug_code: &str,
    cancer_type: &str,
    period: Period,
    now: DateTime<Utc>,
) -> Result<ReportResult> {
    let t = &snapshot.schema().dim_treatment;
    let drug_code = drug_code.trim().to_uppercase();
    let i = (0..t.len())
        .find(|i| t.drug_code[*i] == drug_code)
        .ok_or_else(|| Error::UnknownDrug(drug_code.clone()))?;
    let category = t.category[i].clone();
    let others: Vec<String> = (0..t.len())
        .filter(|j| t.category[*j] == category && t.drug_code[*j] != drug_code)
        .map(|j| t.drug_code[j].clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let paths = cancer_type_paths(snapshot, cancer_type)?;

    let mut r = base("drug-impact", snapshot, now);
    r.parameters.insert("drug_code".into(), drug_code.clone().into());
    r.parameters.insert("cancer_type".into(), cancer_type.into());
    r.parameters.insert("start".into(), period.start.into());
    r.parameters.insert("end".into(), period.end.into());
    r.metadata.insert(
        "impact".into(),
        "remission and death rates over distinct patients, counted on the treatment events of each cohort".into(),
    );
    r.metadata.insert(
        "comparator".into(),
        format!("other drugs in category {category}"),
    );
    r.metadata.insert(
        "crossover".into(),
        "patients treated with both the drug and a comparator drug appear in both cohorts".into(),
    );

    let measures = ["remission_rate", "death_rate", "event_count"];
    let drug_path = |code: &str| MemberPath::new([category.clone(), code.to_string()]);
    let cohort_filters = |drugs: Vec<MemberPath>| {
        vec![
            eq_or_in("treatment", "drug", drugs),
            eq_or_in("cancer", "type", paths.clone()),
            period.filter(),
        ]
    };
    let drug_q = spec(CubeId::Treatment, &[], &measures, cohort_filters(vec![drug_path(&drug_code)]));
    let monthly = spec(
        CubeId::Treatment,
        &[("date", "month")],
        &["remission_rate"],
        cohort_filters(vec![drug_path(&drug_code)]),
    );
    let comparator_q = (!others.is_empty())
        .then(|| spec(CubeId::Treatment, &[], &measures, cohort_filters(others.iter().map(|d| drug_path(d)).collect())));

    r.columns = ["cohort", "drugs", "remission_rate", "death_rate", "event_count"]
        .map(String::from)
        .to_vec();
    let mut push = |cohort: &str, drugs: String, cells: Option<&CellSet>| {
        let get = |m: &str| value_of(cells.and_then(|c| measure(c, 0, m)));
        r.table.push(IndexMap::from([
            ("cohort".to_string(), Value::String(cohort.into())),
            ("drugs".to_string(), Value::String(drugs)),
            ("remission_rate".to_string(), get("remission_rate")),
            ("death_rate".to_string(), get("death_rate")),
            ("event_count".to_string(), get("event_count")),
        ]));
    };
    let drug_cells = query(snapshot, &drug_q)?;
    push("drug", drug_code.clone(), Some(&drug_cells));
    let comparator_cells = comparator_q.as_ref().map(|q| query(snapshot, q)).transpose()?;
    push("comparator", others.join(" "), comparator_cells.as_ref());

    let months = query(snapshot, &monthly)?;
    r.series_measure = "remission_rate".into();
    r.series = series(&months, &period.months(), month_label, |i| {
        value_of(measure(&months, i, "remission_rate"))
    });
    r.queries.push(NamedQuery {
        name: "drug".into(),
        spec: drug_q,
    });
    if let Some(q) = comparator_q {
        r.queries.push(NamedQuery {
            name: "comparator".into(),
            spec: q,
        });
    }
    r.queries.push(NamedQuery {
        name: "monthly".into(),
        spec: monthly,
    });
    Ok(r)
}

/// Years spanned by the date dimension, or the current year when empty.
pub fn data_years(snapshot: &Snapshot, now: DateTime<Utc>) -> Period {
    let years = &snapshot.schema().dim_date.year;
    match (years.iter().min(), years.iter().max()) {
        (Some(a), Some(b)) => Period {
            start: *a as i32,
            end: *b as i32,
        },
        _ => Period {
            start: now.year(),
            end: now.year(),
        },
    }
}

/// Runs a report by id with string parameters, as received from the CLI or
/// an HTTP query string. `start` and `end` default to the years in the data.
pub fn run_report(
    snapshot: &Snapshot,
    report_id: &str,
    params: &BTreeMap<String, String>,
    now: DateTime<Utc>,
) -> Result<ReportResult> {
    let years = data_years(snapshot, now);
    let year = |key: &str, default: i32| -> Result<i32> {
        match params.get(key) {
            None => Ok(default),
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidPeriod(format!("{key} '{v}' is not a year"))),
        }
    };
    let period = Period::new(year("start", years.start)?, year("end", years.end)?)?;
    let required = |key: &str| -> Result<&str> {
        params
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidSpec(format!("report {report_id} requires parameter '{key}'")))
    };
    match report_id {
        "treatment-cost" => treatment_cost_report(
            snapshot,
            period,
            params.get("group_by").map(String::as_str).unwrap_or("type"),
            now,
        ),
        "death-rate" => death_rate_report(snapshot, required("cancer_type")?, period, now),
        "drug-impact" => drug_impact_report(
            snapshot,
            required("drug_code")?,
            required("cancer_type")?,
            period,
            now,
        ),
        other => Err(Error::InvalidSpec(format!(
            "unknown report '{other}', expected one of {}",
            REPORT_IDS.join(", ")
        ))),
    }
}
