//! Cube definitions, query specs and their evaluation, drill-down/roll-up
//! rewrites and aggregate routing.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::schema::{CubeId, Hierarchy, Level, MemberPath};
use crate::warehouse::{additive_columns, AggregateTable, Condition, FactView, FilterOp, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    SumCost,
    EventCount,
    Deaths,
    Remissions,
    DeathRate,
    RemissionRate,
    AvgCost,
    AbnormalCount,
    AbnormalRate,
    AvgValue,
}

impl Measure {
    pub const ALL: [Measure; 10] = [
        Measure::SumCost,
        Measure::EventCount,
        Measure::Deaths,
        Measure::Remissions,
        Measure::DeathRate,
        Measure::RemissionRate,
        Measure::AvgCost,
        Measure::AbnormalCount,
        Measure::AbnormalRate,
        Measure::AvgValue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::SumCost => "sum_cost",
            Measure::EventCount => "event_count",
            Measure::Deaths => "deaths",
            Measure::Remissions => "remissions",
            Measure::DeathRate => "death_rate",
            Measure::RemissionRate => "remission_rate",
            Measure::AvgCost => "avg_cost",
            Measure::AbnormalCount => "abnormal_count",
            Measure::AbnormalRate => "abnormal_rate",
            Measure::AvgValue => "avg_value",
        }
    }

    pub fn is_additive(self) -> bool {
        matches!(
            self,
            Measure::SumCost | Measure::EventCount | Measure::Deaths | Measure::Remissions | Measure::AbnormalCount
        )
    }

    /// Needs distinct patient counts, so no aggregate can answer it.
    pub fn needs_patients(self) -> bool {
        matches!(self, Measure::DeathRate | Measure::RemissionRate)
    }

    pub fn is_rate(self) -> bool {
        matches!(self, Measure::DeathRate | Measure::RemissionRate | Measure::AbnormalRate)
    }

    pub fn for_cube(cube: CubeId) -> &'static [Measure] {
        match cube {
            CubeId::Treatment => &[
                Measure::SumCost,
                Measure::EventCount,
                Measure::Deaths,
                Measure::Remissions,
                Measure::DeathRate,
                Measure::RemissionRate,
                Measure::AvgCost,
            ],
            CubeId::Lab => &[
                Measure::EventCount,
                Measure::AbnormalCount,
                Measure::AbnormalRate,
                Measure::AvgValue,
            ],
        }
    }

    fn description(self) -> &'static str {
        match self {
            Measure::SumCost => "total cost in thousandths of the currency unit",
            Measure::EventCount => "number of fact rows",
            Measure::Deaths => "events with outcome death",
            Measure::Remissions => "events with outcome remission",
            Measure::DeathRate => "distinct patients with a death event / distinct patients",
            Measure::RemissionRate => "distinct patients with a remission event / distinct patients",
            Measure::AvgCost => "sum_cost / event_count, in thousandths of the currency unit",
            Measure::AbnormalCount => "results flagged abnormal",
            Measure::AbnormalRate => "abnormal_count / event_count",
            Measure::AvgValue => "mean result value",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown measure '{s}'")))
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct HierarchyDefinition {
    pub dimension: String,
    pub levels: Vec<String>,
    /// Usable in filters only, never on an axis.
    pub slicer_only: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct MeasureDefinition {
    pub name: String,
    pub kind: String,
    pub description: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct CubeDefinition {
    pub cube_id: CubeId,
    pub fact_table: String,
    pub hierarchies: Vec<HierarchyDefinition>,
    pub measures: Vec<MeasureDefinition>,
}

pub fn define_cube(cube_id: &str) -> Result<CubeDefinition> {
    let cube: CubeId = cube_id.parse()?;
    let hierarchies = cube
        .axis_hierarchies()
        .iter()
        .copied()
        .chain(Hierarchy::ALL.into_iter().filter(|h| h.is_patient_attribute()))
        .map(|h| HierarchyDefinition {
            dimension: h.dimension().to_string(),
            levels: h.levels().iter().map(|l| l.to_string()).collect(),
            slicer_only: h.is_patient_attribute(),
        })
        .collect();
    let measures = Measure::for_cube(cube)
        .iter()
        .map(|m| MeasureDefinition {
            name: m.as_str().to_string(),
            kind: if m.is_additive() { "additive" } else { "derived" }.to_string(),
            description: m.description().to_string(),
        })
        .collect();
    Ok(CubeDefinition {
        cube_id: cube,
        fact_table: cube.fact_table().to_string(),
        hierarchies,
        measures,
    })
}

pub fn catalog() -> Vec<CubeDefinition> {
    CubeId::ALL
        .iter()
        .map(|c| define_cube(c.as_str()).expect("built-in cube"))
        .collect()
}

/// A `(dimension, level)` pair on an axis. Accepts `{"dimension": "date",
/// "level": "year"}` or the short form `"date@year"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct AxisLevel {
    pub dimension: String,
    pub level: String,
}

impl AxisLevel {
    pub fn new(dimension: &str, level: &str) -> Self {
        AxisLevel {
            dimension: dimension.to_string(),
            level: level.to_string(),
        }
    }

    fn of(level: Level) -> Self {
        AxisLevel::new(level.dimension(), level.name())
    }

    fn resolve(&self) -> Result<Level> {
        Hierarchy::resolve(&self.dimension, &self.level)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown level {}@{}", self.dimension, self.level)))
    }
}

impl<'de> Deserialize<'de> for AxisLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Full {
            dimension: String,
            level: String,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Short(String),
            Full(Full),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Full(f) => Ok(AxisLevel {
                dimension: f.dimension,
                level: f.level,
            }),
            Repr::Short(s) => {
                let (d, l) = s
                    .split_once('@')
                    .ok_or_else(|| serde::de::Error::custom(format!("axis level '{s}' is not dimension@level")))?;
                Ok(AxisLevel::new(d, l))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filter {
    pub dimension: String,
    /// Level name, or attribute name for patient attributes.
    #[serde(alias = "attribute")]
    pub level: String,
    pub op: FilterOp,
    /// Full member paths from the top of the hierarchy.
    pub values: Vec<MemberPath>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderBy {
    pub measure: String,
    #[serde(default)]
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub cube_id: String,
    #[serde(default)]
    pub rows: Vec<AxisLevel>,
    #[serde(default)]
    pub columns: Vec<AxisLevel>,
    pub measures: Vec<String>,
    #[serde(default)]
    pub filters: Vec<Filter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_by: Option<OrderBy>,
    /// Keeps the first `limit` rows (after ordering); totals cover kept rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl QuerySpec {
    pub fn new(cube: CubeId, measures: &[&str]) -> Self {
        QuerySpec {
            cube_id: cube.to_string(),
            rows: Vec::new(),
            columns: Vec::new(),
            measures: measures.iter().map(|m| m.to_string()).collect(),
            filters: Vec::new(),
            order_by: None,
            limit: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn axis(&self, axis: Axis) -> &[AxisLevel] {
        match axis {
            Axis::Rows => &self.rows,
            Axis::Columns => &self.columns,
        }
    }

    fn axis_mut(&mut self, axis: Axis) -> &mut Vec<AxisLevel> {
        match axis {
            Axis::Rows => &mut self.rows,
            Axis::Columns => &mut self.columns,
        }
    }

    pub fn validate(&self) -> Result<ValidSpec> {
        let cube: CubeId = self.cube_id.parse()?;
        if self.measures.is_empty() {
            return Err(Error::InvalidSpec("measures must not be empty".into()));
        }
        let mut measures = Vec::new();
        for name in &self.measures {
            let m: Measure = name.parse()?;
            if !Measure::for_cube(cube).contains(&m) {
                return Err(Error::InvalidSpec(format!("unknown measure '{name}' for cube {cube}")));
            }
            if measures.contains(&m) {
                return Err(Error::InvalidSpec(format!("measure '{name}' listed twice")));
            }
            measures.push(m);
        }

        let mut seen: HashSet<&str> = HashSet::new();
        let mut axis_levels = |axis: &[AxisLevel], name: &str| -> Result<Vec<Level>> {
            let mut out = Vec::new();
            for a in axis {
                let level = a.resolve()?;
                if level.hierarchy.is_patient_attribute() {
                    return Err(Error::InvalidSpec(format!(
                        "patient attribute {level} can only be used as a filter"
                    )));
                }
                if !cube.axis_hierarchies().contains(&level.hierarchy) {
                    return Err(Error::InvalidSpec(format!("dimension {} is not part of cube {cube}", a.dimension)));
                }
                if !seen.insert(level.dimension()) {
                    return Err(Error::InvalidSpec(format!(
                        "dimension {} appears more than once across the {name} and other axes",
                        a.dimension
                    )));
                }
                out.push(level);
            }
            Ok(out)
        };
        let rows = axis_levels(&self.rows, "rows")?;
        let columns = axis_levels(&self.columns, "columns")?;

        let mut filters = Vec::new();
        for f in &self.filters {
            let cond = Condition::parse(&f.dimension, &f.level, f.op, f.values.clone()).map_err(|e| match e {
                Error::UnknownAttribute(a) => Error::InvalidSpec(format!("unknown filter attribute {a}")),
                other => other,
            })?;
            if !cube.has_hierarchy(cond.level.hierarchy) {
                return Err(Error::InvalidSpec(format!(
                    "filter dimension {} is not part of cube {cube}",
                    f.dimension
                )));
            }
            filters.push(cond);
        }

        let order_by = match &self.order_by {
            None => None,
            Some(o) => {
                let m: Measure = o.measure.parse()?;
                if !measures.contains(&m) {
                    return Err(Error::InvalidSpec(format!("order_by measure '{m}' is not among the measures")));
                }
                Some((m, o.descending))
            }
        };
        Ok(ValidSpec {
            cube,
            rows,
            columns,
            measures,
            filters,
            order_by,
            limit: self.limit,
        })
    }
}

/// A query spec with every name resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidSpec {
    pub cube: CubeId,
    pub rows: Vec<Level>,
    pub columns: Vec<Level>,
    pub measures: Vec<Measure>,
    pub filters: Vec<Condition>,
    pub order_by: Option<(Measure, bool)>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rows,
    Columns,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" => Ok(Axis::Rows),
            "columns" => Ok(Axis::Columns),
            _ => Err(Error::InvalidSpec(format!("unknown axis '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureValue {
    Int(i64),
    Float(f64),
}

impl MeasureValue {
    pub fn as_f64(self) -> f64 {
        match self {
            MeasureValue::Int(v) => v as f64,
            MeasureValue::Float(v) => v,
        }
    }

    pub fn as_i64(self) -> Option<i64> {
        match self {
            MeasureValue::Int(v) => Some(v),
            MeasureValue::Float(_) => None,
        }
    }
}

/// Measure values of one cell, keyed by measure name in spec order.
pub type Cell = IndexMap<String, MeasureValue>;

/// Query result. `cells` is dense and row-major (`cells[r * |columns| + c]`);
/// `null` marks a cell with no facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSet {
    pub cube_id: CubeId,
    pub measures: Vec<String>,
    pub row_levels: Vec<String>,
    pub column_levels: Vec<String>,
    pub row_axis: Vec<Vec<MemberPath>>,
    pub column_axis: Vec<Vec<MemberPath>>,
    pub cells: Vec<Option<Cell>>,
    pub row_totals: Vec<Option<Cell>>,
    pub column_totals: Vec<Option<Cell>>,
    pub grand_total: Option<Cell>,
}

impl CellSet {
    pub fn cell(&self, row: usize, column: usize) -> Option<&Cell> {
        self.cells[row * self.column_axis.len() + column].as_ref()
    }

    pub fn row_index(&self, tuple: &[MemberPath]) -> Option<usize> {
        self.row_axis.iter().position(|t| t == tuple)
    }

    pub fn column_index(&self, tuple: &[MemberPath]) -> Option<usize> {
        self.column_axis.iter().position(|t| t == tuple)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccessPath {
    BaseScan,
    Aggregate { id: String, grain: String, rows: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub access_path: AccessPath,
    pub reason: String,
}

/// Chooses the smallest fresh aggregate able to answer the query, or a base
/// scan.
pub fn plan(snapshot: &Snapshot, spec: &QuerySpec) -> Result<QueryPlan> {
    plan_valid(snapshot, &spec.validate()?)
}

fn plan_valid(snapshot: &Snapshot, spec: &ValidSpec) -> Result<QueryPlan> {
    let base = |reason: String| QueryPlan {
        access_path: AccessPath::BaseScan,
        reason,
    };
    if let Some(m) = spec.measures.iter().find(|m| m.needs_patients()) {
        return Ok(base(format!("{m} counts distinct patients, which aggregates do not keep")));
    }
    let needed: Vec<Level> = spec
        .rows
        .iter()
        .chain(&spec.columns)
        .copied()
        .chain(spec.filters.iter().map(|f| f.level))
        .collect();
    let best = snapshot
        .aggregates()
        .iter()
        .filter(|a| a.grain.cube == spec.cube && !snapshot.is_stale(a))
        .filter(|a| needed.iter().all(|l| a.grain.covers(*l)))
        .min_by(|a, b| (a.meta.rows, &a.meta.id).cmp(&(b.meta.rows, &b.meta.id)));
    Ok(match best {
        Some(a) => QueryPlan {
            access_path: AccessPath::Aggregate {
                id: a.meta.id.clone(),
                grain: a.meta.grain.clone(),
                rows: a.meta.rows,
            },
            reason: format!(
                "aggregate {} covers every axis and filter level with {} rows",
                a.meta.grain, a.meta.rows
            ),
        },
        None => {
            let fresh = snapshot
                .aggregates()
                .iter()
                .filter(|a| a.grain.cube == spec.cube && !snapshot.is_stale(a))
                .count();
            base(if fresh == 0 {
                "no fresh aggregate registered for this cube".to_string()
            } else {
                format!("none of {fresh} fresh aggregate(s) covers the query grain and filters")
            })
        }
    })
}

/// Answers the query through its plan.
pub fn query(snapshot: &Snapshot, spec: &QuerySpec) -> Result<CellSet> {
    Ok(query_explained(snapshot, spec)?.0)
}

pub fn query_explained(snapshot: &Snapshot, spec: &QuerySpec) -> Result<(CellSet, QueryPlan)> {
    let valid = spec.validate()?;
    let plan = plan_valid(snapshot, &valid)?;
    let cells = match &plan.access_path {
        AccessPath::BaseScan => evaluate(&BaseSource(snapshot.view(valid.cube)), &valid)?,
        AccessPath::Aggregate { id, .. } => {
            let agg = snapshot.aggregate(id).expect("planned aggregate exists");
            evaluate(&AggregateSource(agg), &valid)?
        }
    };
    Ok((cells, plan))
}

/// Answers the query from base facts regardless of aggregates.
pub fn query_base(snapshot: &Snapshot, spec: &QuerySpec) -> Result<CellSet> {
    let valid = spec.validate()?;
    evaluate(&BaseSource(snapshot.view(valid.cube)), &valid)
}

/// Rows the evaluator folds: base facts or aggregate rows.
trait Source {
    fn cube(&self) -> CubeId;
    fn len(&self) -> usize;
    fn path(&self, h: Hierarchy, row: usize) -> &MemberPath;
    /// Additive columns in `additive_columns` order.
    fn sums(&self, row: usize, out: &mut [i64]);
    fn patient(&self, row: usize) -> Option<i64>;
}

struct BaseSource<'a>(&'a FactView);

impl Source for BaseSource<'_> {
    fn cube(&self) -> CubeId {
        self.0.cube
    }
    fn len(&self) -> usize {
        self.0.len()
    }
    fn path(&self, h: Hierarchy, row: usize) -> &MemberPath {
        self.0.path(h, row)
    }
    fn sums(&self, row: usize, out: &mut [i64]) {
        for (o, (_, col)) in out.iter_mut().zip(self.0.measures()) {
            *o = col[row];
        }
    }
    fn patient(&self, row: usize) -> Option<i64> {
        Some(self.0.patient_sk[row])
    }
}

struct AggregateSource<'a>(&'a AggregateTable);

impl Source for AggregateSource<'_> {
    fn cube(&self) -> CubeId {
        self.0.grain.cube
    }
    fn len(&self) -> usize {
        self.0.rows()
    }
    fn path(&self, h: Hierarchy, row: usize) -> &MemberPath {
        &self.0.keys[self.0.slot(h).expect("planner checked coverage")][row]
    }
    fn sums(&self, row: usize, out: &mut [i64]) {
        for (o, (_, col)) in out.iter_mut().zip(&self.0.measures) {
            *o = col[row];
        }
    }
    fn patient(&self, _row: usize) -> Option<i64> {
        None
    }
}

#[derive(Debug, Clone, Default)]
struct Acc {
    sums: Vec<i64>,
    patients: HashSet<i64>,
    died: HashSet<i64>,
    remitted: HashSet<i64>,
}

impl Acc {
    fn merge(&mut self, other: &Acc) {
        if self.sums.is_empty() {
            self.sums = vec![0; other.sums.len()];
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.patients.extend(&other.patients);
        self.died.extend(&other.died);
        self.remitted.extend(&other.remitted);
    }
}

fn sum_of(cube: CubeId, acc: &Acc, column: &str) -> i64 {
    let i = additive_columns(cube).iter().position(|c| *c == column).expect("additive column");
    acc.sums[i]
}

fn ratio(num: usize, den: usize) -> MeasureValue {
    MeasureValue::Float(num as f64 / den as f64)
}

fn finish(cube: CubeId, measures: &[Measure], acc: &Acc) -> Cell {
    let s = |c: &str| sum_of(cube, acc, c);
    measures
        .iter()
        .map(|m| {
            let v = match m {
                Measure::SumCost => MeasureValue::Int(s("cost_millis")),
                Measure::EventCount => MeasureValue::Int(s("event_count")),
                Measure::Deaths => MeasureValue::Int(s("deaths")),
                Measure::Remissions => MeasureValue::Int(s("remissions")),
                Measure::AbnormalCount => MeasureValue::Int(s("abnormal_count")),
                Measure::AvgCost => MeasureValue::Float(s("cost_millis") as f64 / s("event_count") as f64),
                Measure::AbnormalRate => MeasureValue::Float(s("abnormal_count") as f64 / s("event_count") as f64),
                Measure::AvgValue => MeasureValue::Float(s("value_sum") as f64 / (s("event_count") as f64 * 1e6)),
                Measure::DeathRate => ratio(acc.died.len(), acc.patients.len()),
                Measure::RemissionRate => ratio(acc.remitted.len(), acc.patients.len()),
            };
            (m.as_str().to_string(), v)
        })
        .collect()
}

fn evaluate(source: &dyn Source, spec: &ValidSpec) -> Result<CellSet> {
    let cube = source.cube();
    let width = additive_columns(cube).len();
    let track_patients = spec.measures.iter().any(|m| m.needs_patients());
    let death_col = additive_columns(cube).iter().position(|c| *c == "deaths");
    let remission_col = additive_columns(cube).iter().position(|c| *c == "remissions");

    let key = |levels: &[Level], row: usize| -> Vec<MemberPath> {
        levels
            .iter()
            .map(|l| source.path(l.hierarchy, row).truncated(l.depth))
            .collect()
    };

    let mut cells: BTreeMap<(Vec<MemberPath>, Vec<MemberPath>), Acc> = BTreeMap::new();
    let mut sums = vec![0i64; width];
    for row in 0..source.len() {
        if !spec
            .filters
            .iter()
            .all(|f| f.matches(&source.path(f.level.hierarchy, row).0))
        {
            continue;
        }
        source.sums(row, &mut sums);
        let acc = cells.entry((key(&spec.rows, row), key(&spec.columns, row))).or_default();
        if acc.sums.is_empty() {
            acc.sums = vec![0; width];
        }
        for (a, b) in acc.sums.iter_mut().zip(&sums) {
            *a += b;
        }
        if track_patients {
            let p = source.patient(row).expect("distinct-patient measures are planned on base facts");
            acc.patients.insert(p);
            if death_col.is_some_and(|i| sums[i] > 0) {
                acc.died.insert(p);
            }
            if remission_col.is_some_and(|i| sums[i] > 0) {
                acc.remitted.insert(p);
            }
        }
    }

    let mut row_accs: BTreeMap<Vec<MemberPath>, Acc> = BTreeMap::new();
    for ((r, _), acc) in &cells {
        row_accs.entry(r.clone()).or_default().merge(acc);
    }
    if spec.rows.is_empty() {
        row_accs.entry(Vec::new()).or_default();
    }
    let mut row_axis: Vec<Vec<MemberPath>> = row_accs.keys().cloned().collect();
    if let Some((m, descending)) = spec.order_by {
        let value = |r: &Vec<MemberPath>| {
            let acc = &row_accs[r];
            (!acc.sums.is_empty()).then(|| finish(cube, &[m], acc)[0].as_f64())
        };
        row_axis.sort_by(|a, b| {
            let (va, vb) = (value(a), value(b));
            match (va, vb) {
                (Some(x), Some(y)) if descending => y.total_cmp(&x),
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
        });
    }
    if let Some(limit) = spec.limit {
        row_axis.truncate(limit);
    }
    let kept: HashSet<&Vec<MemberPath>> = row_axis.iter().collect();

    let mut col_accs: BTreeMap<Vec<MemberPath>, Acc> = BTreeMap::new();
    let mut grand = Acc::default();
    for ((r, c), acc) in &cells {
        if kept.contains(r) {
            col_accs.entry(c.clone()).or_default().merge(acc);
            grand.merge(acc);
        }
    }
    if spec.columns.is_empty() {
        col_accs.entry(Vec::new()).or_default();
    }
    let column_axis: Vec<Vec<MemberPath>> = col_accs.keys().cloned().collect();

    let present = |acc: &Acc| (!acc.sums.is_empty()).then(|| finish(cube, &spec.measures, acc));
    let mut dense = Vec::with_capacity(row_axis.len() * column_axis.len());
    for r in &row_axis {
        for c in &column_axis {
            dense.push(cells.get(&(r.clone(), c.clone())).and_then(present));
        }
    }
    let level_names = |levels: &[Level]| levels.iter().map(|l| l.to_string()).collect();
    Ok(CellSet {
        cube_id: cube,
        measures: spec.measures.iter().map(|m| m.as_str().to_string()).collect(),
        row_levels: level_names(&spec.rows),
        column_levels: level_names(&spec.columns),
        row_totals: row_axis.iter().map(|r| present(&row_accs[r])).collect(),
        column_totals: column_axis.iter().map(|c| present(&col_accs[c])).collect(),
        grand_total: present(&grand),
        row_axis,
        column_axis,
        cells: dense,
    })
}

fn axis_entry(spec: &QuerySpec, axis: Axis, dimension: Option<&str>) -> Result<(usize, Level)> {
    let entries = spec.axis(axis);
    let index = match dimension {
        Some(d) => entries
            .iter()
            .position(|a| a.dimension == d)
            .ok_or_else(|| Error::InvalidSpec(format!("dimension {d} is not on the {axis:?} axis")))?,
        None => entries
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::InvalidSpec(format!("the {axis:?} axis is empty")))?,
    };
    Ok((index, entries[index].resolve()?))
}

/// Moves one axis dimension a level finer and restricts it to `member`'s
/// subtree. `dimension` defaults to the innermost entry of the axis.
pub fn drill_down(
    snapshot: &Snapshot,
    spec: &QuerySpec,
    axis: Axis,
    dimension: Option<&str>,
    member: &MemberPath,
) -> Result<QuerySpec> {
    let valid = spec.validate()?;
    let (index, level) = axis_entry(spec, axis, dimension)?;
    let finer = level.finer().ok_or_else(|| Error::AtFinestLevel(level.to_string()))?;
    let known = snapshot.view(valid.cube).hierarchy(level.hierarchy)?;
    if member.depth() != level.depth || !known.contains(member) {
        return Err(Error::UnknownMember(format!("{member} at {level}")));
    }
    let mut out = spec.clone();
    out.axis_mut(axis)[index] = AxisLevel::of(finer);
    out.filters.push(Filter {
        dimension: level.dimension().to_string(),
        level: level.name().to_string(),
        op: FilterOp::Eq,
        values: vec![member.clone()],
    });
    Ok(out)
}

/// Moves one axis dimension a level coarser. Undoes `drill_down`: the last
/// single-member filter at the new level is removed; without one, filters
/// on that dimension below the new level are removed instead.
pub fn roll_up(spec: &QuerySpec, axis: Axis, dimension: Option<&str>) -> Result<QuerySpec> {
    spec.validate()?;
    let (index, level) = axis_entry(spec, axis, dimension)?;
    let coarser = level.coarser().ok_or_else(|| Error::AtCoarsestLevel(level.to_string()))?;
    let mut out = spec.clone();
    out.axis_mut(axis)[index] = AxisLevel::of(coarser);
    let resolved: Vec<Option<Level>> = out
        .filters
        .iter()
        .map(|f| Hierarchy::resolve(&f.dimension, &f.level))
        .collect();
    let drill_filter = (0..out.filters.len()).rev().find(|&i| {
        resolved[i] == Some(coarser) && out.filters[i].op == FilterOp::Eq && out.filters[i].values.len() == 1
    });
    match drill_filter {
        Some(i) => {
            out.filters.remove(i);
        }
        None => {
            let mut i = 0;
            out.filters.retain(|_| {
                let drop = resolved[i].is_some_and(|l| l.hierarchy == coarser.hierarchy && l.depth > coarser.depth);
                i += 1;
                !drop
            });
        }
    }
    Ok(out)
}
