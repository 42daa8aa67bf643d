//! Fact access paths: per-hierarchy member dictionaries resolved from the
//! dimension tables, and predicate scans over them.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tables::StarSchema;
use crate::error::{Error, Result};
use crate::schema::{CubeId, Hierarchy, Level, MemberPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Eq,
    In,
    Between,
}

/// One conjunct of a scan predicate: the fact's member at `level` must
/// equal / be one of / lie (inclusively) between the given paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    pub level: Level,
    pub op: FilterOp,
    pub values: Vec<MemberPath>,
}

impl Condition {
    pub fn new(level: Level, op: FilterOp, values: Vec<MemberPath>) -> Result<Self> {
        let arity_ok = match op {
            FilterOp::Eq => values.len() == 1,
            FilterOp::In => !values.is_empty(),
            FilterOp::Between => values.len() == 2,
        };
        if !arity_ok {
            return Err(Error::InvalidSpec(format!(
                "filter {level} {op:?} takes {} value(s), got {}",
                match op {
                    FilterOp::Eq => "1",
                    FilterOp::In => "1 or more",
                    FilterOp::Between => "2",
                },
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| v.depth() != level.depth) {
            return Err(Error::InvalidSpec(format!(
                "filter value {v} on {level} must have {} path component(s)",
                level.depth
            )));
        }
        Ok(Condition { level, op, values })
    }

    /// Builds a condition from the dimension and attribute names used in
    /// query specs.
    pub fn parse(dimension: &str, attribute: &str, op: FilterOp, values: Vec<MemberPath>) -> Result<Self> {
        let level = Hierarchy::resolve(dimension, attribute)
            .ok_or_else(|| Error::UnknownAttribute(format!("{dimension}@{attribute}")))?;
        Condition::new(level, op, values)
    }

    /// `path` is a member at this condition's level or finer.
    pub fn matches(&self, path: &[String]) -> bool {
        let key = &path[..self.level.depth.min(path.len())];
        match self.op {
            FilterOp::Eq | FilterOp::In => self.values.iter().any(|v| v.0 == key),
            FilterOp::Between => self.values[0].0.as_slice() <= key && key <= self.values[1].0.as_slice(),
        }
    }
}

/// Finest-level members of one hierarchy and each fact row's member.
#[derive(Debug, Clone, Default)]
pub struct HierarchyIndex {
    pub members: Vec<MemberPath>,
    pub row_member: Vec<u32>,
}

impl HierarchyIndex {
    pub fn path(&self, row: usize) -> &MemberPath {
        &self.members[self.row_member[row] as usize]
    }

    pub fn contains(&self, path: &MemberPath) -> bool {
        self.members
            .iter()
            .any(|m| m.depth() >= path.depth() && m.0[..path.depth()] == path.0[..])
    }
}

/// A fact table joined to its dimensions, ready for scanning and grouping.
#[derive(Debug, Clone)]
pub struct FactView {
    pub cube: CubeId,
    len: usize,
    hierarchies: BTreeMap<Hierarchy, HierarchyIndex>,
    pub patient_sk: Vec<i64>,
    measures: Vec<(&'static str, Vec<i64>)>,
}

/// Additive fact columns exposed per cube, in storage order.
pub fn additive_columns(cube: CubeId) -> &'static [&'static str] {
    match cube {
        CubeId::Treatment => &["cost_millis", "event_count", "deaths", "remissions"],
        CubeId::Lab => &["event_count", "abnormal_count", "value_sum"],
    }
}

impl FactView {
    pub(crate) fn build(schema: &StarSchema, cube: CubeId) -> Result<FactView> {
        let corrupt = |detail: String| Error::CorruptTable {
            table: cube.fact_table().into(),
            detail,
        };

        let d = &schema.dim_date;
        let date_members: Vec<MemberPath> = (0..d.len())
            .map(|i| {
                MemberPath(vec![
                    format!("{:04}", d.year[i]),
                    format!("Q{}", d.quarter[i]),
                    format!("{:02}", d.month[i]),
                    format!("{:02}", d.day[i]),
                ])
            })
            .collect();
        let date_pos: HashMap<i64, u32> = d.date_key.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect();

        let p = &schema.dim_patient;
        let patient_pos = positions(&p.sk);
        let attr = |col: &Vec<String>| col.iter().map(|v| MemberPath(vec![v.clone()])).collect::<Vec<_>>();

        let l = &schema.dim_location;
        let location_members = (0..l.len())
            .map(|i| MemberPath(vec![l.governorate[i].clone(), l.city[i].clone()]))
            .collect();
        let a = &schema.dim_age_band;
        let age_members = attr(&a.band_label);

        let resolve = |keys: &[i64], pos: &HashMap<i64, u32>, what: &str| -> Result<Vec<u32>> {
            keys.iter()
                .map(|k| {
                    pos.get(k)
                        .copied()
                        .ok_or_else(|| corrupt(format!("{what} key {k} does not resolve")))
                })
                .collect()
        };

        let (len, patient_keys, date_keys, location_keys, age_keys) = match cube {
            CubeId::Treatment => {
                let f = &schema.fact_treatment_event;
                (f.len(), &f.patient_sk, &f.date_key, &f.location_sk, &f.age_band_sk)
            }
            CubeId::Lab => {
                let f = &schema.fact_lab_result;
                (f.len(), &f.patient_sk, &f.date_key, &f.location_sk, &f.age_band_sk)
            }
        };

        let mut hierarchies = BTreeMap::new();
        let patient_rows = resolve(patient_keys, &patient_pos, "patient")?;
        for (h, col) in [
            (Hierarchy::Gender, &p.gender),
            (Hierarchy::BloodGroup, &p.blood_group),
            (Hierarchy::Race, &p.race),
            (Hierarchy::MaritalStatus, &p.marital_status),
        ] {
            hierarchies.insert(
                h,
                HierarchyIndex {
                    members: attr(col),
                    row_member: patient_rows.clone(),
                },
            );
        }
        hierarchies.insert(
            Hierarchy::Date,
            HierarchyIndex {
                members: date_members,
                row_member: resolve(date_keys, &date_pos, "date")?,
            },
        );
        hierarchies.insert(
            Hierarchy::Location,
            HierarchyIndex {
                members: location_members,
                row_member: resolve(location_keys, &positions(&l.sk), "location")?,
            },
        );
        hierarchies.insert(
            Hierarchy::AgeBand,
            HierarchyIndex {
                members: age_members,
                row_member: resolve(age_keys, &positions(&a.sk), "age band")?,
            },
        );

        let measures = match cube {
            CubeId::Treatment => {
                let f = &schema.fact_treatment_event;
                let c = &schema.dim_cancer;
                hierarchies.insert(
                    Hierarchy::Cancer,
                    HierarchyIndex {
                        members: (0..c.len())
                            .map(|i| MemberPath(vec![c.site[i].clone(), c.cancer_type[i].clone(), c.stage[i].clone()]))
                            .collect(),
                        row_member: resolve(&f.cancer_sk, &positions(&c.sk), "cancer")?,
                    },
                );
                let t = &schema.dim_treatment;
                hierarchies.insert(
                    Hierarchy::Treatment,
                    HierarchyIndex {
                        members: (0..t.len())
                            .map(|i| MemberPath(vec![t.category[i].clone(), t.drug_code[i].clone()]))
                            .collect(),
                        row_member: resolve(&f.treatment_sk, &positions(&t.sk), "treatment")?,
                    },
                );
                vec![
                    ("cost_millis", f.cost_millis.clone()),
                    ("event_count", f.event_count.clone()),
                    ("deaths", f.death_flag.clone()),
                    ("remissions", f.remission_flag.clone()),
                ]
            }
            CubeId::Lab => {
                let f = &schema.fact_lab_result;
                let t = &schema.dim_test;
                hierarchies.insert(
                    Hierarchy::Test,
                    HierarchyIndex {
                        members: attr(&t.test_type),
                        row_member: resolve(&f.test_sk, &positions(&t.sk), "test")?,
                    },
                );
                vec![
                    ("event_count", f.event_count.clone()),
                    ("abnormal_count", f.abnormal_flag.clone()),
                    ("value_sum", f.value.clone()),
                ]
            }
        };

        Ok(FactView {
            cube,
            len,
            hierarchies,
            patient_sk: patient_keys.clone(),
            measures,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn hierarchy(&self, h: Hierarchy) -> Result<&HierarchyIndex> {
        self.hierarchies
            .get(&h)
            .ok_or_else(|| Error::UnknownAttribute(format!("{} on cube {}", h.dimension(), self.cube)))
    }

    /// Finest-level member of `row` in hierarchy `h`.
    pub fn path(&self, h: Hierarchy, row: usize) -> &MemberPath {
        self.hierarchies[&h].path(row)
    }

    pub fn measure(&self, name: &str) -> Option<&[i64]> {
        self.measures.iter().find(|(n, _)| *n == name).map(|(_, v)| v.as_slice())
    }

    pub fn measures(&self) -> &[(&'static str, Vec<i64>)] {
        &self.measures
    }

    /// Rows satisfying every condition, in storage order.
    pub fn scan(&self, predicate: &[Condition]) -> Result<Vec<usize>> {
        let indexes = predicate
            .iter()
            .map(|c| self.hierarchy(c.level.hierarchy).map(|idx| (c, idx)))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.len)
            .filter(|&row| indexes.iter().all(|(c, idx)| c.matches(&idx.path(row).0)))
            .collect())
    }
}

fn positions(keys: &[i64]) -> HashMap<i64, u32> {
    keys.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect()
}
