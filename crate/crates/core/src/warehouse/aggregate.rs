//! Materialized aggregate tables: a group-by of one fact table at a grain,
//! with every additive measure summed.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::column::{sha256_hex, ColumnData};
use super::manifest::AggregateMeta;
use super::scan::{additive_columns, FactView};
use crate::error::{Error, Result};
use crate::schema::{CubeId, Hierarchy, Level, MemberPath};

/// Per-hierarchy depth of an aggregate; hierarchies not listed are rolled up
/// to ALL.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grain {
    pub cube: CubeId,
    pub levels: BTreeMap<Hierarchy, usize>,
}

impl Grain {
    pub fn new(cube: CubeId, levels: impl IntoIterator<Item = Level>) -> Result<Grain> {
        let mut map = BTreeMap::new();
        for l in levels {
            if !cube.has_hierarchy(l.hierarchy) {
                return Err(Error::UnknownLevel(format!("{l} is not part of cube {cube}")));
            }
            let d = map.entry(l.hierarchy).or_insert(l.depth);
            *d = (*d).max(l.depth);
        }
        Ok(Grain { cube, levels: map })
    }

    /// Parses `cube:dim@level,dim@level` or `cube:*`. `dim@ALL` entries are
    /// accepted and ignored.
    pub fn parse(s: &str) -> Result<Grain> {
        let (cube, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::UnknownLevel(format!("grain '{s}' lacks a cube prefix")))?;
        let cube: CubeId = cube.trim().parse()?;
        let mut levels = Vec::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "*") {
            if part.to_ascii_lowercase().ends_with("@all") {
                let dim = &part[..part.len() - 4];
                if !Hierarchy::ALL.iter().any(|h| h.dimension() == dim) {
                    return Err(Error::UnknownLevel(part.to_string()));
                }
                continue;
            }
            levels.push(Level::parse(part)?);
        }
        Grain::new(cube, levels)
    }

    pub fn canonical(&self) -> String {
        if self.levels.is_empty() {
            return format!("{}:*", self.cube);
        }
        let parts: Vec<String> = self.levels().map(|l| l.to_string()).collect();
        format!("{}:{}", self.cube, parts.join(","))
    }

    /// Directory name of the aggregate: a digest of the canonical grain.
    pub fn id(&self) -> String {
        sha256_hex(self.canonical().as_bytes())[..16].to_string()
    }

    pub fn levels(&self) -> impl Iterator<Item = Level> + '_ {
        self.levels.iter().map(|(h, d)| Level {
            hierarchy: *h,
            depth: *d,
        })
    }

    pub fn depth(&self, h: Hierarchy) -> usize {
        self.levels.get(&h).copied().unwrap_or(0)
    }

    /// Answers at `level` can be computed from this grain.
    pub fn covers(&self, level: Level) -> bool {
        self.depth(level.hierarchy) >= level.depth
    }
}

impl fmt::Display for Grain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Rows of an aggregate, column-wise: one key column per grain level and
/// one summed column per additive measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateTable {
    pub meta: AggregateMeta,
    pub grain: Grain,
    /// `keys[slot][row]`, slots in grain order.
    pub keys: Vec<Vec<MemberPath>>,
    pub measures: Vec<(String, Vec<i64>)>,
}

impl AggregateTable {
    pub fn rows(&self) -> usize {
        self.meta.rows as usize
    }

    pub fn slot(&self, h: Hierarchy) -> Option<usize> {
        self.grain.levels.keys().position(|k| *k == h)
    }

    pub fn measure(&self, name: &str) -> Option<&[i64]> {
        self.measures.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub(crate) fn to_columns(&self) -> Vec<(String, ColumnData)> {
        let mut out = Vec::new();
        for (slot, level) in self.grain.levels().enumerate() {
            for i in 0..level.depth {
                let values = self.keys[slot].iter().map(|p| p.0[i].clone()).collect();
                out.push((key_column(level, i), ColumnData::Str(values)));
            }
        }
        for (name, values) in &self.measures {
            out.push((format!("m.{name}"), ColumnData::Int(values.clone())));
        }
        out
    }

    pub(crate) fn from_columns(meta: AggregateMeta, mut columns: HashMap<String, ColumnData>) -> Result<Self> {
        let corrupt = |detail: String| Error::CorruptTable {
            table: format!("aggregates/{}", meta.id),
            detail,
        };
        let grain = Grain::parse(&meta.grain).map_err(|e| corrupt(e.to_string()))?;
        if grain.cube != meta.cube {
            return Err(corrupt("cube does not match grain".into()));
        }
        let rows = meta.rows as usize;
        let mut take = |name: String| -> Result<ColumnData> {
            let c = columns.remove(&name).ok_or_else(|| corrupt(format!("missing column {name}")))?;
            if c.len() != rows {
                return Err(corrupt(format!("column {name} has {} rows, expected {rows}", c.len())));
            }
            Ok(c)
        };
        let mut keys = Vec::new();
        for level in grain.levels() {
            let mut paths = vec![MemberPath::default(); rows];
            for i in 0..level.depth {
                let ColumnData::Str(values) = take(key_column(level, i))? else {
                    return Err(corrupt("key column is not textual".into()));
                };
                for (p, v) in paths.iter_mut().zip(values) {
                    p.0.push(v);
                }
            }
            keys.push(paths);
        }
        let mut measures = Vec::new();
        for name in additive_columns(grain.cube) {
            let ColumnData::Int(values) = take(format!("m.{name}"))? else {
                return Err(corrupt("measure column is not integral".into()));
            };
            measures.push((name.to_string(), values));
        }
        Ok(AggregateTable {
            meta,
            grain,
            keys,
            measures,
        })
    }
}

fn key_column(level: Level, i: usize) -> String {
    format!("key.{}.{}.{}", level.dimension(), level.name(), i)
}

/// Group-by of every fact row at `grain`, keys in ascending order.
pub fn build_aggregate(view: &FactView, grain: &Grain, built_from: u64) -> Result<AggregateTable> {
    if view.cube != grain.cube {
        return Err(Error::UnknownLevel(format!(
            "grain {grain} does not belong to cube {}",
            view.cube
        )));
    }
    let levels: Vec<Level> = grain.levels().collect();
    let indexes = levels
        .iter()
        .map(|l| view.hierarchy(l.hierarchy))
        .collect::<Result<Vec<_>>>()?;
    let names = additive_columns(view.cube);
    let sources: Vec<&[i64]> = names.iter().map(|n| view.measure(n).expect("additive column")).collect();

    let mut groups: BTreeMap<Vec<MemberPath>, Vec<i64>> = BTreeMap::new();
    for row in 0..view.len() {
        let key = levels
            .iter()
            .zip(&indexes)
            .map(|(l, idx)| idx.path(row).truncated(l.depth))
            .collect();
        let sums = groups.entry(key).or_insert_with(|| vec![0; names.len()]);
        for (s, src) in sums.iter_mut().zip(&sources) {
            *s += src[row];
        }
    }

    let mut keys = vec![Vec::with_capacity(groups.len()); levels.len()];
    let mut measures: Vec<(String, Vec<i64>)> = names.iter().map(|n| (n.to_string(), Vec::new())).collect();
    let rows = groups.len();
    for (key, sums) in groups {
        for (slot, p) in key.into_iter().enumerate() {
            keys[slot].push(p);
        }
        for ((_, col), v) in measures.iter_mut().zip(sums) {
            col.push(v);
        }
    }
    Ok(AggregateTable {
        meta: AggregateMeta {
            id: grain.id(),
            cube: grain.cube,
            grain: grain.canonical(),
            built_from,
            rows: rows as u64,
        },
        grain: grain.clone(),
        keys,
        measures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grain_parsing_and_canonical_form() {
        let g = Grain::parse("treatment: cancer@type, date@year, location@ALL").unwrap();
        assert_eq!(g.canonical(), "treatment:date@year,cancer@type");
        assert_eq!(Grain::parse(&g.canonical()).unwrap(), g);
        assert_eq!(Grain::parse("lab:*").unwrap().canonical(), "lab:*");
        assert_eq!(g.id().len(), 16);
        assert_ne!(g.id(), Grain::parse("treatment:*").unwrap().id());
        assert!(g.covers(Level::parse("date@year").unwrap()));
        assert!(!g.covers(Level::parse("date@quarter").unwrap()));
    }

    #[test]
    fn unknown_levels_are_rejected() {
        assert!(matches!(Grain::parse("treatment:date@week"), Err(Error::UnknownLevel(_))));
        assert!(matches!(Grain::parse("lab:cancer@site"), Err(Error::UnknownLevel(_))));
        assert!(matches!(Grain::parse("treatment:planet@ALL"), Err(Error::UnknownLevel(_))));
        assert!(matches!(Grain::parse("nothing"), Err(Error::UnknownLevel(_))));
    }
}
