//! Columnar star-schema store with versioned manifests.
//!
//! ```text
//! <root>/LOCK                               held by the single writer
//! <root>/manifest.<version>                 see `manifest`
//! <root>/<table>/<column>.<version>.col     see `column`
//! <root>/aggregates/<grain id>/<column>.<version>.col
//! ```
//!
//! Column files carry the version that wrote them, so a load that dies
//! before its manifest is renamed into place leaves every earlier version
//! intact. Readers open the newest manifest and never see later writes.

mod aggregate;
mod column;
mod load;
mod manifest;
mod scan;
mod tables;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};
use crate::schema::CubeId;
use crate::transform::{ConformedRow, DimensionRegistry};

pub use aggregate::{build_aggregate, AggregateTable, Grain};
pub use column::{sha256_hex, ColumnData};
pub use load::{LoadContext, UNKNOWN};
pub use manifest::{AggregateEntry, AggregateMeta, ColumnEntry, LoadManifest, Manifest, TableCounts, TableEntry};
pub use scan::{additive_columns, Condition, FactView, FilterOp, HierarchyIndex};
pub use tables::{
    date_from_key, date_key, DimAgeBand, DimCancer, DimDate, DimLocation, DimPatient, DimTest, DimTreatment,
    FactLab, FactTreatment, StarSchema, TABLE_NAMES,
};

const LOCK_FILE: &str = "LOCK";
const MANIFEST_PREFIX: &str = "manifest.";
const AGGREGATES_DIR: &str = "aggregates";
/// Manifests (and the files they reference) kept after each commit.
const RETAINED_VERSIONS: usize = 2;

fn manifest_versions(root: &Path) -> Result<Vec<u64>> {
    let mut versions = Vec::new();
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(versions),
        Err(e) => return Err(Error::io(root, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name();
        if let Some(v) = name
            .to_str()
            .and_then(|n| n.strip_prefix(MANIFEST_PREFIX))
            .and_then(|v| v.parse::<u64>().ok())
        {
            versions.push(v);
        }
    }
    versions.sort_unstable();
    Ok(versions)
}

/// Newest committed version under `root`, if any. Cheaper than opening.
pub fn latest_version(root: impl AsRef<Path>) -> Result<Option<u64>> {
    Ok(manifest_versions(root.as_ref())?.last().copied())
}

fn manifest_path(root: &Path, version: u64) -> PathBuf {
    root.join(format!("{MANIFEST_PREFIX}{version}"))
}

fn read_column(root: &Path, table: &str, entry: &ColumnEntry) -> Result<ColumnData> {
    let corrupt = |detail: String| Error::CorruptTable {
        table: table.to_string(),
        detail,
    };
    let path = root.join(&entry.file);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(corrupt(format!("column file {} is missing", entry.file)))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.len() as u64 != entry.bytes {
        return Err(corrupt(format!(
            "column file {} has {} bytes, manifest says {}",
            entry.file,
            bytes.len(),
            entry.bytes
        )));
    }
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(corrupt(format!("checksum mismatch in {}", entry.file)));
    }
    ColumnData::decode(&bytes).map_err(|e| corrupt(format!("{}: {e}", entry.file)))
}

fn write_column(root: &Path, rel: String, name: &str, data: &ColumnData) -> Result<ColumnEntry> {
    let path = root.join(&rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes = data.encode();
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(ColumnEntry {
        name: name.to_string(),
        file: rel,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

/// A read-only, fully verified view of one manifest version.
#[derive(Debug, Clone)]
pub struct Snapshot {
    root: PathBuf,
    manifest: Manifest,
    schema: StarSchema,
    treatment: FactView,
    lab: FactView,
    aggregates: Vec<AggregateTable>,
}

impl Snapshot {
    /// Opens the newest committed version; a directory without any manifest
    /// opens as an empty warehouse.
    pub fn open(root: impl AsRef<Path>) -> Result<Snapshot> {
        let root = root.as_ref();
        match manifest_versions(root)?.last() {
            Some(&v) => Snapshot::open_version(root, v),
            None => Snapshot::from_parts(root.to_path_buf(), Manifest::empty(), StarSchema::default(), Vec::new()),
        }
    }

    pub fn open_version(root: impl AsRef<Path>, version: u64) -> Result<Snapshot> {
        let root = root.as_ref();
        let path = manifest_path(root, version);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::parse(&text)?;
        if manifest.version != version {
            return Err(Error::CorruptTable {
                table: "manifest".into(),
                detail: format!("{} records version {}", path.display(), manifest.version),
            });
        }

        let mut tables: HashMap<String, HashMap<String, ColumnData>> = HashMap::new();
        for t in &manifest.tables {
            let mut cols = HashMap::new();
            for c in &t.columns {
                let data = read_column(root, &t.name, c)?;
                if data.len() as u64 != t.rows {
                    return Err(Error::CorruptTable {
                        table: t.name.clone(),
                        detail: format!("column {} has {} rows, manifest says {}", c.name, data.len(), t.rows),
                    });
                }
                cols.insert(c.name.clone(), data);
            }
            tables.insert(t.name.clone(), cols);
        }
        let schema = if manifest.tables.is_empty() {
            StarSchema::default()
        } else {
            StarSchema::from_tables(tables)?
        };

        let mut aggregates = Vec::new();
        for a in &manifest.aggregates {
            let table = format!("{AGGREGATES_DIR}/{}", a.meta.id);
            let mut cols = HashMap::new();
            for c in &a.columns {
                cols.insert(c.name.clone(), read_column(root, &table, c)?);
            }
            aggregates.push(AggregateTable::from_columns(a.meta.clone(), cols)?);
        }
        Snapshot::from_parts(root.to_path_buf(), manifest, schema, aggregates)
    }

    fn from_parts(root: PathBuf, manifest: Manifest, schema: StarSchema, aggregates: Vec<AggregateTable>) -> Result<Self> {
        Ok(Snapshot {
            treatment: FactView::build(&schema, CubeId::Treatment)?,
            lab: FactView::build(&schema, CubeId::Lab)?,
            root,
            manifest,
            schema,
            aggregates,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn version(&self) -> u64 {
        self.manifest.version
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn schema(&self) -> &StarSchema {
        &self.schema
    }

    pub fn view(&self, cube: CubeId) -> &FactView {
        match cube {
            CubeId::Treatment => &self.treatment,
            CubeId::Lab => &self.lab,
        }
    }

    pub fn aggregates(&self) -> &[AggregateTable] {
        &self.aggregates
    }

    pub fn aggregate(&self, id: &str) -> Option<&AggregateTable> {
        self.aggregates.iter().find(|a| a.meta.id == id)
    }

    pub fn is_stale(&self, aggregate: &AggregateTable) -> bool {
        self.manifest.is_stale(&aggregate.meta)
    }

    /// Fact rows satisfying every condition.
    pub fn scan(&self, cube: CubeId, predicate: &[Condition]) -> Result<Vec<usize>> {
        self.view(cube).scan(predicate)
    }

    /// Checks the structural invariants of every table; returns one line per
    /// violation.
    pub fn audit(&self) -> Vec<String> {
        let s = &self.schema;
        let mut problems = Vec::new();
        for (table, sks) in [
            (DimPatient::NAME, &s.dim_patient.sk),
            (DimCancer::NAME, &s.dim_cancer.sk),
            (DimTreatment::NAME, &s.dim_treatment.sk),
            (DimLocation::NAME, &s.dim_location.sk),
            (DimAgeBand::NAME, &s.dim_age_band.sk),
            (DimTest::NAME, &s.dim_test.sk),
        ] {
            let set: BTreeSet<i64> = sks.iter().copied().collect();
            if set.len() != sks.len() {
                problems.push(format!("{table}: duplicate surrogate keys"));
            }
            if set.iter().copied().ne(1..=sks.len() as i64) {
                problems.push(format!("{table}: surrogate keys are not dense from 1"));
            }
        }
        let d = &s.dim_date;
        for i in 0..d.len() {
            let derived = date_from_key(d.date_key[i]).map(|date| {
                use chrono::Datelike;
                (date.day() as i64, date.month() as i64, (date.month() as i64 - 1) / 3 + 1, date.year() as i64)
            });
            if derived != Some((d.day[i], d.month[i], d.quarter[i], d.year[i])) {
                problems.push(format!("dim_date: row for key {} disagrees with its key", d.date_key[i]));
            }
        }
        let keys = |v: &Vec<i64>| v.iter().copied().collect::<HashSet<i64>>();
        let dims = [
            ("patient_sk", keys(&s.dim_patient.sk)),
            ("date_key", keys(&s.dim_date.date_key)),
            ("cancer_sk", keys(&s.dim_cancer.sk)),
            ("treatment_sk", keys(&s.dim_treatment.sk)),
            ("location_sk", keys(&s.dim_location.sk)),
            ("age_band_sk", keys(&s.dim_age_band.sk)),
            ("test_sk", keys(&s.dim_test.sk)),
        ];
        let dim = |name: &str| &dims.iter().find(|(n, _)| *n == name).unwrap().1;
        let ft = &s.fact_treatment_event;
        let fl = &s.fact_lab_result;
        for (table, fks) in [
            (
                FactTreatment::NAME,
                vec![
                    ("patient_sk", &ft.patient_sk),
                    ("date_key", &ft.date_key),
                    ("cancer_sk", &ft.cancer_sk),
                    ("treatment_sk", &ft.treatment_sk),
                    ("location_sk", &ft.location_sk),
                    ("age_band_sk", &ft.age_band_sk),
                ],
            ),
            (
                FactLab::NAME,
                vec![
                    ("patient_sk", &fl.patient_sk),
                    ("date_key", &fl.date_key),
                    ("test_sk", &fl.test_sk),
                    ("location_sk", &fl.location_sk),
                    ("age_band_sk", &fl.age_band_sk),
                ],
            ),
        ] {
            for (col, values) in fks {
                let known = dim(col);
                let dangling = values.iter().filter(|v| !known.contains(v)).count();
                if dangling > 0 {
                    problems.push(format!("{table}.{col}: {dangling} unresolved key(s)"));
                }
            }
        }
        problems
    }
}

/// Files written for a new version that is not yet visible. Dropping it
/// without `Writer::commit` abandons the write.
#[derive(Debug)]
pub struct PreparedCommit {
    manifest: Manifest,
    load: Option<LoadManifest>,
}

impl PreparedCommit {
    pub fn version(&self) -> u64 {
        self.manifest.version
    }
}

/// Exclusive writer. Holds `<root>/LOCK` for its lifetime.
#[derive(Debug)]
pub struct Writer {
    lock: PathBuf,
    current: Snapshot,
}

impl Writer {
    pub fn open(root: impl AsRef<Path>) -> Result<Writer> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::WarehouseLocked(lock)),
            Err(e) => return Err(Error::io(&lock, e)),
        }
        let writer = Writer {
            lock,
            current: Snapshot::open(root).inspect_err(|_| {
                let _ = fs::remove_file(root.join(LOCK_FILE));
            })?,
        };
        Ok(writer)
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.current
    }

    fn root(&self) -> &Path {
        &self.current.root
    }

    fn write_tables(&self, schema: &StarSchema, version: u64) -> Result<Vec<TableEntry>> {
        let mut entries = Vec::new();
        for (name, rows, columns) in schema.to_tables() {
            let mut cols = Vec::new();
            for (col, data) in columns {
                cols.push(write_column(self.root(), format!("{name}/{col}.{version}.col"), col, &data)?);
            }
            entries.push(TableEntry {
                name: name.to_string(),
                rows: rows as u64,
                columns: cols,
            });
        }
        Ok(entries)
    }

    /// Applies conformed rows and writes every table at the next version.
    /// Nothing becomes visible until the result is committed.
    pub fn prepare_load(
        &self,
        rows: &[ConformedRow],
        registry: &DimensionRegistry,
        context: &LoadContext,
        now: DateTime<Utc>,
    ) -> Result<PreparedCommit> {
        let base = &self.current.manifest;
        let version = base.version + 1;
        let mut schema = self.current.schema.clone();
        let outcome = load::apply(&mut schema, &base.watermarks, rows, registry);
        let mut counts: BTreeMap<String, TableCounts> =
            TABLE_NAMES.iter().map(|t| (t.to_string(), TableCounts::default())).collect();
        counts.extend(outcome.tables);
        let load = LoadManifest {
            load_id: base.latest_load_id() + 1,
            version,
            batch_ids: context.batch_ids.clone(),
            watermarks: outcome.watermarks.clone(),
            tables: counts,
            committed_at: now,
        };
        let mut manifest = base.clone();
        manifest.version = version;
        manifest.committed_at = now;
        manifest.tables = self.write_tables(&schema, version)?;
        manifest.watermarks = outcome.watermarks;
        manifest.loads.push(load.clone());
        Ok(PreparedCommit {
            manifest,
            load: Some(load),
        })
    }

    /// Materializes an aggregate at the next version, replacing any earlier
    /// build of the same grain.
    pub fn prepare_aggregate(&self, grain: &Grain, now: DateTime<Utc>) -> Result<(PreparedCommit, AggregateMeta)> {
        let base = &self.current.manifest;
        let version = base.version + 1;
        let table = build_aggregate(self.current.view(grain.cube), grain, base.latest_load_id())?;
        let mut columns = Vec::new();
        for (name, data) in table.to_columns() {
            let rel = format!("{AGGREGATES_DIR}/{}/{name}.{version}.col", table.meta.id);
            columns.push(write_column(self.root(), rel, &name, &data)?);
        }
        let mut manifest = base.clone();
        manifest.version = version;
        manifest.committed_at = now;
        manifest.aggregates.retain(|a| a.meta.id != table.meta.id);
        manifest.aggregates.push(AggregateEntry {
            meta: table.meta.clone(),
            columns,
        });
        Ok((PreparedCommit { manifest, load: None }, table.meta))
    }

    /// Publishes a prepared version by renaming its manifest into place,
    /// then reopens it and drops files no retained manifest references.
    pub fn commit(&mut self, prepared: PreparedCommit) -> Result<Option<LoadManifest>> {
        let root = self.root().to_path_buf();
        let version = prepared.manifest.version;
        let tmp = root.join(format!("{MANIFEST_PREFIX}{version}.tmp"));
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(prepared.manifest.render().as_bytes())
                .and_then(|_| f.sync_all())
                .map_err(|e| Error::io(&tmp, e))?;
        }
        let dest = manifest_path(&root, version);
        fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        self.current = Snapshot::open_version(&root, version)?;
        self.collect_garbage()?;
        Ok(prepared.load)
    }

    pub fn load(
        &mut self,
        rows: &[ConformedRow],
        registry: &DimensionRegistry,
        context: &LoadContext,
        now: DateTime<Utc>,
    ) -> Result<LoadManifest> {
        let prepared = self.prepare_load(rows, registry, context, now)?;
        Ok(self.commit(prepared)?.expect("load commit carries a load manifest"))
    }

    pub fn build_aggregate(&mut self, grain: &Grain, now: DateTime<Utc>) -> Result<AggregateMeta> {
        let (prepared, meta) = self.prepare_aggregate(grain, now)?;
        self.commit(prepared)?;
        Ok(meta)
    }

    fn collect_garbage(&self) -> Result<()> {
        let root = self.root();
        let versions = manifest_versions(root)?;
        let keep_from = versions.len().saturating_sub(RETAINED_VERSIONS);
        let mut referenced: HashSet<PathBuf> = HashSet::new();
        for &v in &versions[keep_from..] {
            let path = manifest_path(root, v);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let m = Manifest::parse(&text)?;
            let files = m
                .tables
                .iter()
                .flat_map(|t| &t.columns)
                .chain(m.aggregates.iter().flat_map(|a| &a.columns));
            referenced.extend(files.map(|c| root.join(&c.file)));
        }
        for &v in &versions[..keep_from] {
            let path = manifest_path(root, v);
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        let mut dirs: Vec<PathBuf> = TABLE_NAMES.iter().map(|t| root.join(t)).collect();
        if let Ok(entries) = fs::read_dir(root.join(AGGREGATES_DIR)) {
            dirs.extend(entries.flatten().map(|e| e.path()));
        }
        for dir in dirs {
            let Ok(entries) = fs::read_dir(&dir) else { continue };
            for entry in entries.flatten() {
                let path = entry.path();
                if path.extension().is_some_and(|e| e == "col") && !referenced.contains(&path) {
                    fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                }
            }
            if dir.starts_with(root.join(AGGREGATES_DIR)) {
                let _ = fs::remove_dir(&dir);
            }
        }
        Ok(())
    }
}

impl Drop for Writer {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
