//! Extraction of operational sources into the persisted staging area.
//!
//! Layout of a staging area:
//!
//! ```text
//! staging/<batch_id>/batch.json           batch metadata (written last)
//! staging/<batch_id>/records.ndjson       one RawRecord per line
//! staging/<batch_id>/parse_failures.ndjson  structural failures sidecar
//! staging/<batch_id>/rejects.csv          written by the ETL run
//! ```
//!
//! Batch ids are allocated by atomically creating the next numbered
//! directory, so extracts of distinct sources may run concurrently.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{SourceKind, TEST_TYPES};

const BATCH_META: &str = "batch.json";
const RECORDS_FILE: &str = "records.ndjson";
const FAILURES_FILE: &str = "parse_failures.ndjson";
pub const REJECTS_FILE: &str = "rejects.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub source_id: String,
    pub kind: SourceKind,
    pub path: PathBuf,
    pub as_of: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub source_id: String,
    pub line_no: u64,
    /// File name for medical-file records; absent for CSV rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    pub fields: IndexMap<String, String>,
    pub extracted_at: DateTime<Utc>,
}

impl RawRecord {
    pub fn get(&self, name: &str) -> &str {
        self.fields.get(name).map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseFailureReason {
    RaggedRow,
    InvalidUtf8,
    UnknownTestType,
    MalformedRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub source_id: String,
    pub line_no: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    pub reason: ParseFailureReason,
    pub detail: String,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCounts {
    pub read: u64,
    pub staged: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagingBatch {
    pub batch_id: u64,
    pub source: SourceDescriptor,
    pub records: Vec<RawRecord>,
    pub failures: Vec<ParseFailure>,
    pub counts: BatchCounts,
    /// Medical files skipped because their canonical name repeated.
    pub skipped_duplicates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batch_id: u64,
    pub source: SourceDescriptor,
    pub counts: BatchCounts,
    pub parse_failures: u64,
    pub skipped_duplicates: Vec<String>,
    pub extracted_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct StagingArea {
    root: PathBuf,
}

impl StagingArea {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(StagingArea { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn batch_dir(&self, batch_id: u64) -> PathBuf {
        self.root.join(batch_id.to_string())
    }

    pub fn extract_csv(&self, source: SourceDescriptor) -> Result<StagingBatch> {
        if source.kind == SourceKind::LabResults {
            return Err(Error::InvalidConfig(
                "lab_results are extracted from medical-file directories".into(),
            ));
        }
        if !source.path.is_file() {
            return Err(Error::MissingFile(source.path.clone()));
        }
        self.check_source_id(&source)?;
        let extracted_at = Utc::now();
        let (records, failures, read) = read_csv_source(&source, extracted_at)?;
        self.persist(source, records, failures, read, Vec::new(), extracted_at)
    }

    pub fn extract_medical_files(
        &self,
        source_id: &str,
        dir_path: &Path,
        as_of: DateTime<Utc>,
    ) -> Result<StagingBatch> {
        if !dir_path.is_dir() {
            return Err(Error::MissingFile(dir_path.to_path_buf()));
        }
        let source = SourceDescriptor {
            source_id: source_id.to_string(),
            kind: SourceKind::LabResults,
            path: dir_path.to_path_buf(),
            as_of,
        };
        self.check_source_id(&source)?;
        let extracted_at = Utc::now();

        let mut names = Vec::new();
        for entry in fs::read_dir(dir_path).map_err(|e| Error::io(dir_path, e))? {
            let entry = entry.map_err(|e| Error::io(dir_path, e))?;
            let ft = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
            if ft.is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();

        let mut seen = HashSet::new();
        let mut skipped = Vec::new();
        let mut records = Vec::new();
        let mut failures = Vec::new();
        let mut read = 0u64;
        for name in names {
            if !seen.insert(canonical_file_name(&name)) {
                log::warn!("skipping duplicate medical file {name} in {}", dir_path.display());
                skipped.push(name);
                continue;
            }
            read += 1;
            let path = dir_path.join(&name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            match parse_medical_file(&bytes) {
                Ok(fields) => records.push(RawRecord {
                    source_id: source.source_id.clone(),
                    line_no: read,
                    origin: Some(name),
                    fields,
                    extracted_at,
                }),
                Err((reason, detail)) => failures.push(ParseFailure {
                    source_id: source.source_id.clone(),
                    line_no: read,
                    origin: Some(name),
                    reason,
                    detail,
                    raw: String::from_utf8_lossy(&bytes).into_owned(),
                }),
            }
        }
        self.persist(source, records, failures, read, skipped, extracted_at)
    }

    /// Summaries of every complete batch in ascending batch id order.
    pub fn list_staged(&self, kind: Option<SourceKind>) -> Result<Vec<BatchSummary>> {
        let mut out = Vec::new();
        for id in self.batch_ids()? {
            let summary = self.read_summary(id)?;
            if kind.is_none_or(|k| summary.source.kind == k) {
                out.push(summary);
            }
        }
        Ok(out)
    }

    pub fn load_batch(&self, batch_id: u64) -> Result<StagingBatch> {
        let summary = self.read_summary(batch_id)?;
        let dir = self.batch_dir(batch_id);
        let records = read_ndjson(&dir.join(RECORDS_FILE))?;
        let failures = read_ndjson(&dir.join(FAILURES_FILE))?;
        Ok(StagingBatch {
            batch_id,
            source: summary.source,
            records,
            failures,
            counts: summary.counts,
            skipped_duplicates: summary.skipped_duplicates,
        })
    }

    fn read_summary(&self, batch_id: u64) -> Result<BatchSummary> {
        let path = self.batch_dir(batch_id).join(BATCH_META);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::UnknownBatch(batch_id),
            _ => Error::io(&path, e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Ids of complete batches (those whose metadata file exists).
    fn batch_ids(&self) -> Result<Vec<u64>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) {
                if entry.path().join(BATCH_META).is_file() {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    fn check_source_id(&self, source: &SourceDescriptor) -> Result<()> {
        for summary in self.list_staged(None)? {
            if summary.source.source_id == source.source_id && summary.source.kind != source.kind {
                return Err(Error::SourceConflict {
                    source_id: source.source_id.clone(),
                    existing: summary.source.kind.to_string(),
                });
            }
        }
        Ok(())
    }

    fn allocate_batch_dir(&self) -> Result<(u64, PathBuf)> {
        let mut next = self.max_allocated_id()? + 1;
        loop {
            let dir = self.batch_dir(next);
            match fs::create_dir(&dir) {
                Ok(()) => return Ok((next, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => next += 1,
                Err(e) => return Err(Error::io(&dir, e)),
            }
        }
    }

    fn max_allocated_id(&self) -> Result<u64> {
        let mut max = 0;
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) {
                max = max.max(id);
            }
        }
        Ok(max)
    }

    fn persist(
        &self,
        source: SourceDescriptor,
        records: Vec<RawRecord>,
        failures: Vec<ParseFailure>,
        read: u64,
        skipped_duplicates: Vec<String>,
        extracted_at: DateTime<Utc>,
    ) -> Result<StagingBatch> {
        let (batch_id, dir) = self.allocate_batch_dir()?;
        write_ndjson(&dir.join(RECORDS_FILE), &records)?;
        write_ndjson(&dir.join(FAILURES_FILE), &failures)?;
        let counts = BatchCounts {
            read,
            staged: records.len() as u64,
        };
        debug_assert_eq!(counts.read, counts.staged + failures.len() as u64);
        let summary = BatchSummary {
            batch_id,
            source: source.clone(),
            counts,
            parse_failures: failures.len() as u64,
            skipped_duplicates: skipped_duplicates.clone(),
            extracted_at,
        };
        let meta = dir.join(BATCH_META);
        fs::write(&meta, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&meta, e))?;
        log::info!(
            "staged batch {batch_id} from {} ({} read, {} staged, {} failures)",
            source.source_id,
            counts.read,
            counts.staged,
            failures.len()
        );
        Ok(StagingBatch {
            batch_id,
            source,
            records,
            failures,
            counts,
            skipped_duplicates,
        })
    }
}

type Extracted = (Vec<RawRecord>, Vec<ParseFailure>, u64);

fn read_csv_source(source: &SourceDescriptor, extracted_at: DateTime<Utc>) -> Result<Extracted> {
    let expected = source.kind.columns();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(&source.path)?;
    let mut rows = reader.records();

    let header: Vec<String> = match rows.next() {
        Some(row) => row?.iter().map(|s| s.trim().to_string()).collect(),
        None => Vec::new(),
    };
    if header.iter().map(String::as_str).ne(expected.iter().copied()) {
        let missing = expected
            .iter()
            .filter(|c| !header.iter().any(|h| h == *c))
            .map(|c| c.to_string())
            .collect();
        let extra = header
            .iter()
            .filter(|h| !expected.contains(&h.as_str()))
            .cloned()
            .collect();
        return Err(Error::HeaderMismatch {
            path: source.path.clone(),
            missing,
            extra,
        });
    }

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut read = 0u64;
    for row in rows {
        read += 1;
        match row {
            Ok(row) => {
                let line_no = row.position().map(|p| p.line()).unwrap_or(read + 1);
                if row.len() != expected.len() {
                    failures.push(ParseFailure {
                        source_id: source.source_id.clone(),
                        line_no,
                        origin: None,
                        reason: ParseFailureReason::RaggedRow,
                        detail: format!("expected {} fields, found {}", expected.len(), row.len()),
                        raw: row.iter().collect::<Vec<_>>().join(","),
                    });
                    continue;
                }
                let fields = expected
                    .iter()
                    .zip(row.iter())
                    .map(|(name, value)| (name.to_string(), value.to_string()))
                    .collect();
                records.push(RawRecord {
                    source_id: source.source_id.clone(),
                    line_no,
                    origin: None,
                    fields,
                    extracted_at,
                });
            }
            Err(err) if matches!(err.kind(), csv::ErrorKind::Utf8 { .. }) => {
                let line_no = err.position().map(|p| p.line()).unwrap_or(read + 1);
                failures.push(ParseFailure {
                    source_id: source.source_id.clone(),
                    line_no,
                    origin: None,
                    reason: ParseFailureReason::InvalidUtf8,
                    detail: err.to_string(),
                    raw: String::new(),
                });
            }
            Err(err) => return Err(err.into()),
        }
    }
    Ok((records, failures, read))
}

/// Canonical form used to detect the same medical file twice: lowercase
/// stem, extension ignored.
pub fn canonical_file_name(name: &str) -> String {
    let stem = Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string());
    stem.trim().to_lowercase()
}

pub const MEDICAL_FILE_KEYS: [&str; 6] = ["national_id", "test_type", "test_date", "value", "unit", "abnormal"];

/// Normalizes a test type to its vocabulary spelling, e.g. `X-Ray` to `xray`.
pub fn normalize_test_type(raw: &str) -> String {
    raw.trim()
        .chars()
        .filter(|c| !matches!(c, '-' | '_' | ' '))
        .flat_map(char::to_lowercase)
        .collect()
}

fn parse_medical_file(bytes: &[u8]) -> std::result::Result<IndexMap<String, String>, (ParseFailureReason, String)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| (ParseFailureReason::InvalidUtf8, e.to_string()))?;
    let mut found: IndexMap<String, String> = IndexMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            (
                ParseFailureReason::MalformedRecord,
                format!("line {} is not a key: value pair", i + 1),
            )
        })?;
        let key = key.trim().to_lowercase();
        if !MEDICAL_FILE_KEYS.contains(&key.as_str()) {
            return Err((ParseFailureReason::MalformedRecord, format!("unexpected key '{key}'")));
        }
        if found.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err((ParseFailureReason::MalformedRecord, format!("repeated key '{key}'")));
        }
    }
    let missing: Vec<_> = MEDICAL_FILE_KEYS
        .iter()
        .filter(|k| !found.contains_key(**k))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err((
            ParseFailureReason::MalformedRecord,
            format!("missing keys: {}", missing.join(", ")),
        ));
    }
    let test_type = normalize_test_type(&found["test_type"]);
    if !TEST_TYPES.contains(&test_type.as_str()) {
        return Err((
            ParseFailureReason::UnknownTestType,
            format!("unknown test type '{}'", found["test_type"]),
        ));
    }
    Ok(MEDICAL_FILE_KEYS
        .iter()
        .map(|k| (k.to_string(), found[*k].clone()))
        .collect())
}

fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
