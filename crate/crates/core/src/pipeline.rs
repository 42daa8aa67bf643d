//! End-to-end ETL: staged batches through cleaning, patient merge and
//! conforming into a warehouse load.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SourceDescriptor, StagingArea, StagingBatch, REJECTS_FILE};
use crate::schema::SourceKind;
use crate::synthgen;
use crate::transform::{
    conform, dedup_merge_patients, validate_and_clean, write_rejects_csv, Cleaned, ConformOutput,
    ConformedRow, MergeLogEntry, PatientMasterRecord, RejectCode, RejectEntry, TransformConfig,
};
use crate::warehouse::{LoadContext, LoadManifest, Writer};

pub const MERGE_LOG_FILE: &str = "merge_log.ndjson";

/// Everything the transform stage produced for a set of batches.
#[derive(Debug, Clone, Default)]
pub struct Transformed {
    pub batch_ids: Vec<u64>,
    pub staged: BTreeMap<SourceKind, u64>,
    pub parse_failures: u64,
    pub cleaned: Cleaned,
    pub masters: Vec<PatientMasterRecord>,
    pub merge_log: Vec<MergeLogEntry>,
    pub conformed: ConformOutput,
}

impl Transformed {
    /// Cleaning and conforming rejects together.
    pub fn rejects(&self) -> impl Iterator<Item = &RejectEntry> {
        self.cleaned
            .rejects
            .iter()
            .chain(&self.conformed.rejects)
            .chain(&self.conformed.diagnosis_rejects)
    }

    pub fn rows(&self) -> &[ConformedRow] {
        &self.conformed.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtlReport {
    pub batches: Vec<u64>,
    pub staged: BTreeMap<SourceKind, u64>,
    pub parse_failures: u64,
    pub clean_records: u64,
    pub rejects: BTreeMap<RejectCode, u64>,
    pub merge_log_entries: u64,
    pub master_records: u64,
    pub conformed_rows: u64,
    /// Absent when there was nothing to load.
    pub load: Option<LoadManifest>,
}

impl EtlReport {
    pub fn total_rejects(&self) -> u64 {
        self.rejects.values().sum()
    }
}

/// The most recent batch of every source id, ascending by batch id. Older
/// batches of a source are superseded snapshots of the same file.
pub fn current_batches(staging: &StagingArea) -> Result<Vec<u64>> {
    let mut latest: BTreeMap<String, u64> = BTreeMap::new();
    for b in staging.list_staged(None)? {
        let id = latest.entry(b.source.source_id.clone()).or_insert(b.batch_id);
        *id = (*id).max(b.batch_id);
    }
    let mut ids: Vec<u64> = latest.into_values().collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Clean, merge and conform the given batches without touching storage.
pub fn transform(batches: &[StagingBatch], config: &TransformConfig, now: DateTime<Utc>) -> Transformed {
    let mut out = Transformed::default();
    for b in batches {
        out.batch_ids.push(b.batch_id);
        *out.staged.entry(b.source.kind).or_default() += b.records.len() as u64;
        out.parse_failures += b.failures.len() as u64;
        out.cleaned.extend(validate_and_clean(b, config));
    }
    let (masters, log) = dedup_merge_patients(&out.cleaned.patients, now);
    out.conformed = conform(
        &out.cleaned.diagnoses,
        &out.cleaned.treatments,
        &out.cleaned.labs,
        &masters,
    );
    out.masters = masters;
    out.merge_log = log;
    out
}

/// Runs the whole pipeline over the current staged batches and loads the
/// result. Writes `rejects.csv` into every batch directory and the merge log
/// into the staging root.
pub fn run_etl(
    staging: &StagingArea,
    warehouse: &Path,
    config: &TransformConfig,
    now: DateTime<Utc>,
) -> Result<EtlReport> {
    let ids = current_batches(staging)?;
    let batches = ids
        .iter()
        .map(|id| staging.load_batch(*id))
        .collect::<Result<Vec<_>>>()?;
    let t = transform(&batches, config, now);

    let mut by_batch: BTreeMap<u64, Vec<RejectEntry>> = ids.iter().map(|id| (*id, Vec::new())).collect();
    for r in t.rejects() {
        by_batch.entry(r.source.batch_id).or_default().push(r.clone());
    }
    for (id, mut rejects) in by_batch {
        rejects.sort_by(|a, b| a.source.cmp(&b.source));
        let path = staging.batch_dir(id).join(REJECTS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_rejects_csv(BufWriter::new(file), &rejects)?;
    }
    write_merge_log(&staging.root().join(MERGE_LOG_FILE), &t.merge_log)?;

    let mut rejects: BTreeMap<RejectCode, u64> = BTreeMap::new();
    for r in t.rejects() {
        *rejects.entry(r.reason_code).or_default() += 1;
    }
    let load = if ids.is_empty() {
        None
    } else {
        let mut writer = Writer::open(warehouse)?;
        let context = LoadContext { batch_ids: ids.clone() };
        Some(writer.load(&t.conformed.rows, &t.conformed.registry, &context, now)?)
    };
    Ok(EtlReport {
        batches: ids,
        staged: t.staged,
        parse_failures: t.parse_failures,
        clean_records: t.cleaned.clean_count() as u64,
        rejects,
        merge_log_entries: t.merge_log.len() as u64,
        master_records: t.masters.len() as u64,
        conformed_rows: t.conformed.rows.len() as u64,
        load,
    })
}

fn write_merge_log(path: &Path, entries: &[MergeLogEntry]) -> Result<()> {
    let tmp = path.with_extension("ndjson.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for e in entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_merge_log(staging: &StagingArea) -> Result<Vec<MergeLogEntry>> {
    let path = staging.root().join(MERGE_LOG_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Stages the four sources of a generated directory under source ids equal
/// to their kind names.
pub fn ingest_generated(staging: &StagingArea, dir: &Path, as_of: DateTime<Utc>) -> Result<Vec<StagingBatch>> {
    let mut out = Vec::new();
    for (kind, path) in synthgen::source_paths(dir) {
        let batch = if kind == SourceKind::LabResults {
            staging.extract_medical_files(kind.as_str(), &path, as_of)?
        } else {
            staging.extract_csv(SourceDescriptor {
                source_id: kind.as_str().to_string(),
                kind,
                path,
                as_of,
            })?
        };
        out.push(batch);
    }
    Ok(out)
}
