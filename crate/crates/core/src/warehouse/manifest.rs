//! Versioned, line-oriented warehouse manifest.
//!
//! ```text
//! cdw-manifest 1
//! version <n>
//! committed_at <rfc3339>
//! table <name> <rows>
//! column <table> <column> <relative file> <bytes> <sha256>
//! watermark <source kind> <rfc3339>
//! load <LoadManifest as JSON>
//! aggregate <AggregateMeta as JSON>
//! aggcolumn <aggregate id> <column> <relative file> <bytes> <sha256>
//! checksum <sha256 of every preceding byte>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::column::sha256_hex;
use crate::error::{Error, Result};
use crate::schema::{CubeId, SourceKind};

const HEADER: &str = "cdw-manifest 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnEntry {
    pub name: String,
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableEntry {
    pub name: String,
    pub rows: u64,
    pub columns: Vec<ColumnEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounts {
    pub inserted: u64,
    pub updated: u64,
    pub skipped: u64,
}

impl TableCounts {
    pub fn changed(&self) -> u64 {
        self.inserted + self.updated
    }
}

/// Record of one committed load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadManifest {
    pub load_id: u64,
    /// Manifest version that made this load visible.
    pub version: u64,
    pub batch_ids: Vec<u64>,
    pub watermarks: BTreeMap<SourceKind, DateTime<Utc>>,
    pub tables: BTreeMap<String, TableCounts>,
    pub committed_at: DateTime<Utc>,
}

impl LoadManifest {
    pub fn counts(&self, table: &str) -> TableCounts {
        self.tables.get(table).copied().unwrap_or_default()
    }

    pub fn changed_rows(&self) -> u64 {
        self.tables.values().map(TableCounts::changed).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateMeta {
    pub id: String,
    pub cube: CubeId,
    pub grain: String,
    pub built_from: u64,
    pub rows: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateEntry {
    pub meta: AggregateMeta,
    pub columns: Vec<ColumnEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub version: u64,
    pub committed_at: DateTime<Utc>,
    pub tables: Vec<TableEntry>,
    pub watermarks: BTreeMap<SourceKind, DateTime<Utc>>,
    pub loads: Vec<LoadManifest>,
    pub aggregates: Vec<AggregateEntry>,
}

impl Manifest {
    pub fn empty() -> Self {
        Manifest {
            version: 0,
            committed_at: DateTime::<Utc>::UNIX_EPOCH,
            tables: Vec::new(),
            watermarks: BTreeMap::new(),
            loads: Vec::new(),
            aggregates: Vec::new(),
        }
    }

    pub fn latest_load_id(&self) -> u64 {
        self.loads.last().map(|l| l.load_id).unwrap_or(0)
    }

    /// An aggregate is stale when some load after the one it was built from
    /// changed at least one row.
    pub fn is_stale(&self, meta: &AggregateMeta) -> bool {
        self.loads
            .iter()
            .any(|l| l.load_id > meta.built_from && l.changed_rows() > 0)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "version {}", self.version).unwrap();
        writeln!(s, "committed_at {}", self.committed_at.to_rfc3339()).unwrap();
        for t in &self.tables {
            writeln!(s, "table {} {}", t.name, t.rows).unwrap();
            for c in &t.columns {
                writeln!(s, "column {} {} {} {} {}", t.name, c.name, c.file, c.bytes, c.sha256).unwrap();
            }
        }
        for (kind, ts) in &self.watermarks {
            writeln!(s, "watermark {kind} {}", ts.to_rfc3339()).unwrap();
        }
        for l in &self.loads {
            writeln!(s, "load {}", serde_json::to_string(l).unwrap()).unwrap();
        }
        for a in &self.aggregates {
            writeln!(s, "aggregate {}", serde_json::to_string(&a.meta).unwrap()).unwrap();
            for c in &a.columns {
                writeln!(s, "aggcolumn {} {} {} {} {}", a.meta.id, c.name, c.file, c.bytes, c.sha256).unwrap();
            }
        }
        let checksum = sha256_hex(s.as_bytes());
        writeln!(s, "checksum {checksum}").unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let corrupt = |detail: String| Error::CorruptTable {
            table: "manifest".into(),
            detail,
        };
        let body_end = text
            .rfind("checksum ")
            .ok_or_else(|| corrupt("missing checksum line".into()))?;
        let (body, tail) = text.split_at(body_end);
        let expected = tail.trim_start_matches("checksum ").trim();
        if sha256_hex(body.as_bytes()) != expected {
            return Err(corrupt("checksum mismatch".into()));
        }

        let mut lines = body.lines();
        if lines.next() != Some(HEADER) {
            return Err(corrupt("bad header".into()));
        }
        let mut m = Manifest::empty();
        for line in lines {
            let (keyword, rest) = line.split_once(' ').unwrap_or((line, ""));
            let fields: Vec<&str> = rest.split(' ').collect();
            let bad = || corrupt(format!("malformed line: {line}"));
            match keyword {
                "version" => m.version = rest.parse().map_err(|_| bad())?,
                "committed_at" => {
                    m.committed_at = DateTime::parse_from_rfc3339(rest).map_err(|_| bad())?.with_timezone(&Utc)
                }
                "table" if fields.len() == 2 => m.tables.push(TableEntry {
                    name: fields[0].to_string(),
                    rows: fields[1].parse().map_err(|_| bad())?,
                    columns: Vec::new(),
                }),
                "column" if fields.len() == 5 => {
                    let entry = column_entry(&fields[1..]).ok_or_else(bad)?;
                    m.tables
                        .iter_mut()
                        .find(|t| t.name == fields[0])
                        .ok_or_else(bad)?
                        .columns
                        .push(entry);
                }
                "watermark" if fields.len() == 2 => {
                    let kind: SourceKind = fields[0].parse().map_err(|_| bad())?;
                    let ts = DateTime::parse_from_rfc3339(fields[1]).map_err(|_| bad())?;
                    m.watermarks.insert(kind, ts.with_timezone(&Utc));
                }
                "load" => m.loads.push(serde_json::from_str(rest).map_err(|_| bad())?),
                "aggregate" => m.aggregates.push(AggregateEntry {
                    meta: serde_json::from_str(rest).map_err(|_| bad())?,
                    columns: Vec::new(),
                }),
                "aggcolumn" if fields.len() == 5 => {
                    let entry = column_entry(&fields[1..]).ok_or_else(bad)?;
                    m.aggregates
                        .iter_mut()
                        .find(|a| a.meta.id == fields[0])
                        .ok_or_else(bad)?
                        .columns
                        .push(entry);
                }
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }
}

fn column_entry(fields: &[&str]) -> Option<ColumnEntry> {
    Some(ColumnEntry {
        name: fields[0].to_string(),
        file: fields[1].to_string(),
        bytes: fields[2].parse().ok()?,
        sha256: fields[3].to_string(),
    })
}
