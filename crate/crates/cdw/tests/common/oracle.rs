//! Brute-force reference evaluator: filter, group and fold straight over the
//! conformed rows the ETL produced, without touching the warehouse.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::Datelike;

use cdw_core::olap::{Cell, CellSet, MeasureValue, QuerySpec};
use cdw_core::pipeline::Transformed;
use cdw_core::schema::{CubeId, Hierarchy, Level, MemberPath};
use cdw_core::transform::ConformedRow;
use cdw_core::warehouse::FilterOp;

pub const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Fact {
    pub cube: CubeId,
    pub patient: String,
    pub paths: HashMap<Hierarchy, Vec<String>>,
    pub cost_millis: i64,
    pub death: bool,
    pub remission: bool,
    pub abnormal: bool,
    pub value_micros: i64,
}

pub struct Oracle {
    pub facts: Vec<Fact>,
}

#[derive(Debug, Clone, Default)]
struct Stats {
    events: i64,
    cost: i64,
    deaths: i64,
    remissions: i64,
    abnormal: i64,
    value: i64,
    patients: BTreeSet<String>,
    died: BTreeSet<String>,
    remitted: BTreeSet<String>,
}

impl Stats {
    fn add(&mut self, f: &Fact) {
        self.events += 1;
        self.cost += f.cost_millis;
        self.deaths += f.death as i64;
        self.remissions += f.remission as i64;
        self.abnormal += f.abnormal as i64;
        self.value += f.value_micros;
        self.patients.insert(f.patient.clone());
        if f.death {
            self.died.insert(f.patient.clone());
        }
        if f.remission {
            self.remitted.insert(f.patient.clone());
        }
    }

    fn value(&self, measure: &str) -> MeasureValue {
        let n = self.events as f64;
        match measure {
            "sum_cost" => MeasureValue::Int(self.cost),
            "event_count" => MeasureValue::Int(self.events),
            "deaths" => MeasureValue::Int(self.deaths),
            "remissions" => MeasureValue::Int(self.remissions),
            "abnormal_count" => MeasureValue::Int(self.abnormal),
            "avg_cost" => MeasureValue::Float(self.cost as f64 / n),
            "abnormal_rate" => MeasureValue::Float(self.abnormal as f64 / n),
            "avg_value" => MeasureValue::Float(self.value as f64 / n / 1e6),
            "death_rate" => MeasureValue::Float(self.died.len() as f64 / self.patients.len() as f64),
            "remission_rate" => MeasureValue::Float(self.remitted.len() as f64 / self.patients.len() as f64),
            other => panic!("oracle has no measure {other}"),
        }
    }
}

type Tuple = Vec<MemberPath>;
pub type Values = BTreeMap<String, MeasureValue>;

/// Expected query answer in the same dense layout as a `CellSet`.
#[derive(Debug, Clone)]
pub struct Expected {
    pub row_axis: Vec<Tuple>,
    pub column_axis: Vec<Tuple>,
    pub cells: Vec<Option<Values>>,
    pub row_totals: Vec<Option<Values>>,
    pub column_totals: Vec<Option<Values>>,
    pub grand_total: Option<Values>,
}

fn date_path(d: chrono::NaiveDate) -> Vec<String> {
    vec![
        format!("{:04}", d.year()),
        format!("Q{}", (d.month() + 2) / 3),
        format!("{:02}", d.month()),
        format!("{:02}", d.day()),
    ]
}

fn resolve(dimension: &str, level: &str) -> Level {
    Hierarchy::resolve(dimension, level).unwrap_or_else(|| panic!("oracle: unknown level {dimension}@{level}"))
}

impl Oracle {
    pub fn new(t: &Transformed) -> Oracle {
        let attrs: HashMap<&str, [String; 4]> = t
            .masters
            .iter()
            .map(|m| {
                let or_unknown = |v: &Option<String>| v.clone().unwrap_or_else(|| "unknown".into());
                (
                    m.national_id.as_str(),
                    [
                        m.gender.clone(),
                        or_unknown(&m.blood_group),
                        or_unknown(&m.race),
                        or_unknown(&m.marital_status),
                    ],
                )
            })
            .collect();
        let facts = t
            .rows()
            .iter()
            .map(|row| {
                let (cube, patient, date, location, band) = match row {
                    ConformedRow::Treatment(e) => (CubeId::Treatment, &e.national_id, e.event_date, &e.location, &e.age_band),
                    ConformedRow::Lab(e) => (CubeId::Lab, &e.national_id, e.event_date, &e.location, &e.age_band),
                };
                let mut paths = HashMap::new();
                paths.insert(Hierarchy::Date, date_path(date));
                paths.insert(Hierarchy::Location, vec![location.governorate.clone(), location.city.clone()]);
                paths.insert(Hierarchy::AgeBand, vec![band.clone()]);
                let a = &attrs[patient.as_str()];
                for (h, v) in [
                    Hierarchy::Gender,
                    Hierarchy::BloodGroup,
                    Hierarchy::Race,
                    Hierarchy::MaritalStatus,
                ]
                .into_iter()
                .zip(a)
                {
                    paths.insert(h, vec![v.clone()]);
                }
                let mut fact = Fact {
                    cube,
                    patient: patient.clone(),
                    paths,
                    cost_millis: 0,
                    death: false,
                    remission: false,
                    abnormal: false,
                    value_micros: 0,
                };
                match row {
                    ConformedRow::Treatment(e) => {
                        fact.paths.insert(
                            Hierarchy::Cancer,
                            vec![e.cancer.site.clone(), e.cancer.cancer_type.clone(), e.cancer.stage.clone()],
                        );
                        fact.paths.insert(
                            Hierarchy::Treatment,
                            vec![e.treatment.category.clone(), e.treatment.drug_code.clone()],
                        );
                        fact.cost_millis = e.cost_millis;
                        fact.death = e.death_flag == 1;
                        fact.remission = e.remission_flag == 1;
                    }
                    ConformedRow::Lab(e) => {
                        fact.paths.insert(Hierarchy::Test, vec![e.test_type.clone()]);
                        fact.abnormal = e.abnormal_flag == 1;
                        fact.value_micros = e.value_micros;
                    }
                }
                fact
            })
            .collect();
        Oracle { facts }
    }

    pub fn facts(&self, cube: CubeId) -> impl Iterator<Item = &Fact> {
        self.facts.iter().filter(move |f| f.cube == cube)
    }

    /// Distinct members of `cube`'s facts at `level`, sorted.
    pub fn members(&self, cube: CubeId, level: Level) -> Vec<MemberPath> {
        let set: BTreeSet<MemberPath> = self
            .facts(cube)
            .map(|f| MemberPath::new(f.paths[&level.hierarchy][..level.depth].iter().cloned()))
            .collect();
        set.into_iter().collect()
    }

    pub fn evaluate(&self, spec: &QuerySpec) -> Expected {
        let cube: CubeId = spec.cube_id.parse().expect("oracle: cube");
        let rows: Vec<Level> = spec.rows.iter().map(|a| resolve(&a.dimension, &a.level)).collect();
        let columns: Vec<Level> = spec.columns.iter().map(|a| resolve(&a.dimension, &a.level)).collect();
        let filters: Vec<(Level, FilterOp, Vec<Vec<String>>)> = spec
            .filters
            .iter()
            .map(|f| (resolve(&f.dimension, &f.level), f.op, f.values.iter().map(|v| v.0.clone()).collect()))
            .collect();
        let tuple = |levels: &[Level], f: &Fact| -> Tuple {
            levels
                .iter()
                .map(|l| MemberPath::new(f.paths[&l.hierarchy][..l.depth].iter().cloned()))
                .collect()
        };
        let keep = |f: &Fact| {
            filters.iter().all(|(level, op, values)| {
                let key = &f.paths[&level.hierarchy][..level.depth];
                match op {
                    FilterOp::Eq | FilterOp::In => values.iter().any(|v| v.as_slice() == key),
                    FilterOp::Between => values[0].as_slice() <= key && key <= values[1].as_slice(),
                }
            })
        };

        let selected: Vec<(&Fact, Tuple, Tuple)> = self
            .facts(cube)
            .filter(|f| keep(f))
            .map(|f| (f, tuple(&rows, f), tuple(&columns, f)))
            .collect();

        let mut row_stats: BTreeMap<Tuple, Stats> = BTreeMap::new();
        for (f, r, _) in &selected {
            row_stats.entry(r.clone()).or_default().add(f);
        }
        if rows.is_empty() {
            row_stats.entry(Vec::new()).or_default();
        }
        let mut row_axis: Vec<Tuple> = row_stats.keys().cloned().collect();
        if let Some(o) = &spec.order_by {
            let key = |r: &Tuple| {
                let s = &row_stats[r];
                (s.events > 0).then(|| s.value(&o.measure).as_f64())
            };
            row_axis.sort_by(|a, b| match (key(a), key(b)) {
                (Some(x), Some(y)) if o.descending => y.total_cmp(&x),
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            });
        }
        if let Some(limit) = spec.limit {
            row_axis.truncate(limit);
        }
        let kept: BTreeSet<&Tuple> = row_axis.iter().collect();

        let mut cell_stats: BTreeMap<(Tuple, Tuple), Stats> = BTreeMap::new();
        let mut column_stats: BTreeMap<Tuple, Stats> = BTreeMap::new();
        let mut grand = Stats::default();
        for (f, r, c) in &selected {
            if !kept.contains(r) {
                continue;
            }
            cell_stats.entry((r.clone(), c.clone())).or_default().add(f);
            column_stats.entry(c.clone()).or_default().add(f);
            grand.add(f);
        }
        if columns.is_empty() {
            column_stats.entry(Vec::new()).or_default();
        }
        let column_axis: Vec<Tuple> = column_stats.keys().cloned().collect();

        let values = |s: Option<&Stats>| -> Option<Values> {
            s.filter(|s| s.events > 0)
                .map(|s| spec.measures.iter().map(|m| (m.clone(), s.value(m))).collect())
        };
        let mut cells = Vec::new();
        for r in &row_axis {
            for c in &column_axis {
                cells.push(values(cell_stats.get(&(r.clone(), c.clone()))));
            }
        }
        Expected {
            row_totals: row_axis.iter().map(|r| values(row_stats.get(r))).collect(),
            column_totals: column_axis.iter().map(|c| values(column_stats.get(c))).collect(),
            grand_total: values(Some(&grand)),
            row_axis,
            column_axis,
            cells,
        }
    }
}

pub fn close(actual: MeasureValue, expected: MeasureValue) -> bool {
    match (actual, expected) {
        (MeasureValue::Int(a), MeasureValue::Int(e)) => a == e,
        (MeasureValue::Float(a), MeasureValue::Float(e)) => {
            a == e || (a - e).abs() <= REL_TOL * e.abs().max(a.abs())
        }
        _ => false,
    }
}

fn compare_cell(what: &str, actual: Option<&Cell>, expected: Option<&Values>) -> Result<(), String> {
    match (actual, expected) {
        (None, None) => Ok(()),
        (Some(a), Some(e)) => {
            if a.len() != e.len() {
                return Err(format!("{what}: measures {:?} vs {:?}", a.keys().collect::<Vec<_>>(), e.keys()));
            }
            for (m, ev) in e {
                let av = a.get(m).copied().ok_or_else(|| format!("{what}: missing {m}"))?;
                if !close(av, *ev) {
                    return Err(format!("{what}: {m} engine {av:?} oracle {ev:?}"));
                }
            }
            Ok(())
        }
        (a, e) => Err(format!("{what}: engine {a:?} oracle {e:?}")),
    }
}

/// Checks axes exactly and every cell and total within tolerance.
pub fn compare(actual: &CellSet, expected: &Expected) -> Result<(), String> {
    if actual.row_axis != expected.row_axis {
        return Err(format!("row axis {:?} vs {:?}", actual.row_axis, expected.row_axis));
    }
    if actual.column_axis != expected.column_axis {
        return Err(format!("column axis {:?} vs {:?}", actual.column_axis, expected.column_axis));
    }
    if actual.cells.len() != expected.cells.len() {
        return Err(format!("{} cells vs {}", actual.cells.len(), expected.cells.len()));
    }
    for (i, (a, e)) in actual.cells.iter().zip(&expected.cells).enumerate() {
        compare_cell(&format!("cell {i}"), a.as_ref(), e.as_ref())?;
    }
    for (i, (a, e)) in actual.row_totals.iter().zip(&expected.row_totals).enumerate() {
        compare_cell(&format!("row total {i}"), a.as_ref(), e.as_ref())?;
    }
    for (i, (a, e)) in actual.column_totals.iter().zip(&expected.column_totals).enumerate() {
        compare_cell(&format!("column total {i}"), a.as_ref(), e.as_ref())?;
    }
    compare_cell("grand total", actual.grand_total.as_ref(), expected.grand_total.as_ref())
}
